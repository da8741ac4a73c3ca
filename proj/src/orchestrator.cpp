#include "gatedcot/orchestrator.hpp"

#include <algorithm>
#include <fstream>
#include <regex>

#include "gatedcot/error.hpp"

namespace gatedcot {

using nlohmann::json;

PromptTemplate PromptTemplate::defaults() {
  PromptTemplate p;
  p.system =
      "You are a careful visual reasoning assistant. Solve the problem one "
      "step at a time. Begin each step with \"Step N:\" and write only one "
      "step per reply. When you are sure, end with a line \"Answer: (X)\" "
      "where X is the label of the correct option.";
  p.initial_user = "{question}";
  p.continue_prompt = "{inserted_image}Continue with Step {step_index}.";
  p.answer_prompt =
      "{inserted_image}Give the final answer as \"Answer: (X)\".";
  p.inserted_image_note =
      "The image above shows the region of the picture most relevant to "
      "your last step. ";
  return p;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open prompt template " + path.string());
  const json doc = json::parse(in, nullptr, false);
  if (!doc.is_object()) {
    throw ConfigError("prompt template " + path.string() +
                      " is not a JSON object");
  }
  PromptTemplate p = defaults();
  auto read = [&](const char* key, std::string& field) {
    if (!doc.contains(key)) return;
    if (!doc[key].is_string()) {
      throw ConfigError(std::string("template field '") + key +
                        "' must be a string");
    }
    field = doc[key].get<std::string>();
  };
  read("system", p.system);
  read("initial_user", p.initial_user);
  read("continue_prompt", p.continue_prompt);
  read("answer_prompt", p.answer_prompt);
  read("inserted_image_note", p.inserted_image_note);
  read("answer_stop", p.answer_stop);
  return p;
}

std::string expand_template(std::string_view text,
                            const PromptTemplate& prompt,
                            const SlotValues& slots) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      const auto close = text.find('}', i);
      if (close != std::string_view::npos) {
        const auto name = text.substr(i + 1, close - i - 1);
        bool known = true;
        if (name == "question") {
          out += slots.question;
        } else if (name == "history") {
          out += slots.history;
        } else if (name == "inserted_image") {
          if (slots.inserted_image) out += prompt.inserted_image_note;
        } else if (name == "step_index") {
          out += std::to_string(slots.step_index);
        } else {
          known = false;
        }
        if (known) {
          i = close + 1;
          continue;
        }
      }
    }
    out += text[i++];
  }
  return out;
}

void TraceConfig::validate() const {
  gating.validate();
  if (max_steps == 0) throw ConfigError("max_steps must be positive");
  if (max_step_tokens == 0) {
    throw ConfigError("max_step_tokens must be positive");
  }
  if (top_k < 2) throw ConfigError("top_k must be >= 2");
  if (labels.empty()) throw ConfigError("label set is empty");
}

const char* to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::Answered:
      return "answered";
    case Verdict::MaxStepsReached:
      return "max_steps_reached";
    case Verdict::Truncated:
      return "truncated";
    case Verdict::BackendFault:
      return "backend_fault";
  }
  return "unknown";
}

std::size_t ReasoningTrace::insertion_count() const {
  return static_cast<std::size_t>(
      std::count_if(steps.begin(), steps.end(),
                    [](const TraceStep& s) { return s.selected.has_value(); }));
}

Context initial_context(const PromptTemplate& prompt,
                        std::string_view question, const ImageRef& original,
                        const std::optional<OneShotExemplar>& exemplar) {
  Context context;
  if (!prompt.system.empty()) {
    context.push_back(ContextItem::make_text(Role::System, prompt.system));
  }
  if (exemplar) {
    const SlotValues slots{exemplar->question, {}, false, 1};
    context.push_back(ContextItem::make_text(
        Role::User, expand_template(prompt.initial_user, prompt, slots)));
    if (exemplar->image) {
      context.push_back(ContextItem::make_image(Role::User, *exemplar->image));
    }
    context.push_back(
        ContextItem::make_text(Role::Assistant, exemplar->reasoning));
  }
  const SlotValues slots{question, {}, false, 1};
  context.push_back(ContextItem::make_text(
      Role::User, expand_template(prompt.initial_user, prompt, slots)));
  context.push_back(ContextItem::make_image(Role::User, original));
  return context;
}

void append_rationale(Context& context, const StepRecord& step) {
  context.push_back(ContextItem::make_text(Role::Assistant, step.text));
}

std::optional<std::size_t> interleave(Context& context,
                                      const SelectedObject* selected,
                                      const InterleaveArgs& args) {
  std::optional<std::size_t> position;
  if (selected != nullptr) {
    position = context.size();
    context.push_back(
        ContextItem::make_image(Role::User, selected->candidate.crop));
  }
  const SlotValues slots{args.question, args.history, selected != nullptr,
                         args.next_step_index};
  const std::string& text =
      args.answer_turn ? args.prompt.answer_prompt : args.prompt.continue_prompt;
  context.push_back(ContextItem::make_text(
      Role::User, expand_template(text, args.prompt, slots)));
  return position;
}

namespace {

std::string escape_regex(std::string_view text) {
  static const std::string special = R"(\^$.|?*+()[]{})";
  std::string out;
  for (char c : text) {
    if (special.find(c) != std::string::npos) out += '\\';
    out += c;
  }
  return out;
}

std::string label_alternation(std::span<const std::string> labels) {
  std::vector<std::string> sorted(labels.begin(), labels.end());
  // Longer labels first so "AB" is not read as "A".
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const std::string& a, const std::string& b) {
                     return a.size() > b.size();
                   });
  std::string alt;
  for (const auto& label : sorted) {
    if (label.empty()) continue;
    if (!alt.empty()) alt += '|';
    alt += escape_regex(label);
  }
  return alt;
}

}  // namespace

std::optional<std::string> extract_answer(
    std::string_view text, std::span<const std::string> label_set) {
  const std::string alt = label_alternation(label_set);
  if (alt.empty()) return std::nullopt;
  const std::string haystack(text);

  const std::regex answer("[Aa]nswer\\s*:\\s*(?:\\(\\s*(" + alt +
                          ")\\s*\\)|(" + alt + ")(?![A-Za-z0-9_]))");
  std::optional<std::string> last;
  for (auto it = std::sregex_iterator(haystack.begin(), haystack.end(), answer);
       it != std::sregex_iterator(); ++it) {
    last = (*it)[1].matched ? (*it)[1].str() : (*it)[2].str();
  }
  if (last) return last;

  const std::regex trailing("(?:^|\\s)\\((" + alt + ")\\)\\s*\\.?\\s*$");
  std::smatch m;
  if (std::regex_search(haystack, m, trailing)) return m[1].str();
  return std::nullopt;
}

ReasoningTrace run_trace(std::string trace_id, std::string_view question,
                         const ImageRef& image, const ObjectPool& pool,
                         const TraceConfig& config,
                         const TraceProviders& providers,
                         json config_snapshot) {
  config.validate();
  ReasoningTrace trace;
  trace.trace_id = std::move(trace_id);
  trace.question = std::string(question);
  trace.source_image_id = image.id;
  trace.config_snapshot = std::move(config_snapshot);

  Context context =
      initial_context(config.prompt, question, image, config.exemplar);
  std::string history;
  std::size_t insertions = 0;
  bool answer_turn = false;
  std::optional<std::size_t> awaiting_usage;
  std::optional<std::string> answer;
  std::optional<Verdict> verdict;

  for (std::size_t t = 1; t <= config.max_steps; ++t) {
    const int step_index = static_cast<int>(t);
    GenerationRequest request{context,           config.stop_sequences,
                              config.max_step_tokens, config.top_k,
                              config.seed,       step_index};
    TraceStep entry;
    try {
      entry.step = providers.backend.generate_step(request);
    } catch (const ContextTooLong& e) {
      verdict = Verdict::Truncated;
      trace.fault = e.what();
      break;
    } catch (const std::exception& e) {
      verdict = Verdict::BackendFault;
      trace.fault = e.what();
      break;
    }
    entry.step.step_index = step_index;

    // Endpoint-reported image usage of this call minus the previous call is
    // the cost of the crop inserted in between.
    if (awaiting_usage) {
      TraceStep& previous = trace.steps[*awaiting_usage];
      if (previous.step.usage.image_tokens_reported &&
          entry.step.usage.image_tokens_reported) {
        previous.inserted_image_tokens =
            std::max<std::int64_t>(0, entry.step.usage.prompt_image_tokens -
                                          previous.step.usage.prompt_image_tokens);
      }
      awaiting_usage.reset();
    }

    try {
      entry.confidence = confidence_from_step(entry.step);
    } catch (const EmptyStep&) {
      // An empty rationale is the least confident signal possible.
      entry.empty_step = true;
      entry.confidence = ConfidenceReport{};
    } catch (const MarginUnavailable& e) {
      verdict = Verdict::BackendFault;
      trace.fault = e.what();
      break;
    }

    entry.gating =
        decide_insertion(entry.confidence.aggregate, config.gating, insertions);
    if (entry.gating.insert && pool.empty()) {
      entry.gating.insert = false;
      entry.gating.reason = GatingReason::EmptyCandidatePool;
    } else if (entry.gating.insert) {
      try {
        entry.scores = score_candidates(entry.step.text, pool,
                                        providers.relevance, step_index,
                                        config.scoring);
        entry.selected = select_object(entry.scores, pool);
      } catch (const std::exception& e) {
        entry.gating.insert = false;
        entry.fault = std::string("relevance scoring failed: ") + e.what();
        entry.scores.clear();
      }
    }

    append_rationale(context, entry.step);
    if (!history.empty()) history += "\n\n";
    history += entry.step.text;

    if (entry.selected) {
      ++insertions;
      entry.inserted_image_tokens =
          config.estimator.image_tokens(entry.selected->candidate.area_fraction);
    }
    answer_turn = entry.step.matched_stop.has_value() &&
                  *entry.step.matched_stop == config.prompt.answer_stop;
    entry.insertion_position =
        interleave(context, entry.selected ? &*entry.selected : nullptr,
                   {config.prompt, question, history, step_index + 1,
                    answer_turn});
    if (entry.selected) awaiting_usage = trace.steps.size();
    trace.steps.push_back(std::move(entry));

    answer = extract_answer(trace.steps.back().step.text, config.labels);
    if (answer) {
      verdict = Verdict::Answered;
      break;
    }
  }

  trace.verdict = verdict.value_or(Verdict::MaxStepsReached);
  if (trace.verdict == Verdict::Answered) trace.final_answer = answer;
  return trace;
}

}  // namespace gatedcot
