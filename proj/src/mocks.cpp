#include "gatedcot/mocks.hpp"

#include <cctype>
#include <cmath>
#include <json.hpp>

#include "gatedcot/digest.hpp"
#include "gatedcot/error.hpp"

namespace gatedcot {

using nlohmann::json;

namespace {

void validate_step(const ScriptedStep& s, const std::string& where) {
  const std::size_t n = s.tokens.empty() ? tokenize_for_script(s.text).size()
                                         : s.tokens.size();
  if (!s.margins.empty() && s.margins.size() != n) {
    throw ConfigError(where + ": " + std::to_string(s.margins.size()) +
                      " margins for " + std::to_string(n) + " tokens");
  }
  if (!s.top_two.empty() && s.top_two.size() != n) {
    throw ConfigError(where + ": " + std::to_string(s.top_two.size()) +
                      " top-2 pairs for " + std::to_string(n) + " tokens");
  }
  for (double m : s.margins) {
    if (!(m >= 0.0)) throw ConfigError(where + ": negative margin");
  }
  if (s.flat_margin && !(*s.flat_margin >= 0.0)) {
    throw ConfigError(where + ": negative margin");
  }
  for (const auto& [a, b] : s.top_two) {
    if (!(a >= b)) throw ConfigError(where + ": top-2 score above top-1");
  }
  if (s.alternatives == 0) throw ConfigError(where + ": zero alternatives");
  if (s.after_insertion.size() > 1) {
    throw ConfigError(where + ": more than one post-insertion variant");
  }
  for (const auto& v : s.after_insertion) {
    if (!v.after_insertion.empty()) {
      throw ConfigError(where + ": nested post-insertion variant");
    }
    validate_step(v, where + " (after insertion)");
  }
}

}  // namespace

void BackendScript::validate() const {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    validate_step(steps[i], "script step " + std::to_string(i + 1));
  }
}

std::vector<std::string> tokenize_for_script(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
    while (i < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
    tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

std::vector<PositionLogits> scripted_positions(const ScriptedStep& step,
                                               std::size_t top_k) {
  const auto tokens =
      step.tokens.empty() ? tokenize_for_script(step.text) : step.tokens;
  const std::size_t served = std::min(step.alternatives, top_k);
  std::vector<PositionLogits> positions;
  auto push = [&](const std::string& token, double top1, double top2) {
    PositionLogits p;
    p.position_index = positions.size();
    p.top_entries.push_back({token, top1});
    for (std::size_t k = 1; k < served; ++k) {
      // Further alternatives trail the runner-up by one nat each.
      p.top_entries.push_back({"<alt" + std::to_string(k) + ">",
                               top2 - static_cast<double>(k - 1)});
    }
    positions.push_back(std::move(p));
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!step.top_two.empty()) {
      push(tokens[i], step.top_two[i].first, step.top_two[i].second);
    } else {
      const double m = !step.margins.empty() ? step.margins[i]
                                             : step.flat_margin.value_or(1.0);
      push(tokens[i], 0.0, -m);
    }
  }
  if (step.stop_marker) {
    for (const auto& token : tokenize_for_script(*step.stop_marker)) {
      push(token, 0.0, -1.0);
    }
  }
  return positions;
}

namespace {

struct ScriptedGeneration {
  StopSplit split;
  StopReason reason = StopReason::EndOfAnswer;
  std::size_t generated = 0;
};

ScriptedGeneration run_script_step(const ScriptedStep& step,
                                   std::span<const std::string> stops,
                                   std::size_t max_tokens, std::size_t top_k) {
  auto positions = scripted_positions(step, top_k);
  bool truncated = false;
  if (positions.size() > max_tokens) {
    positions.resize(max_tokens);
    truncated = true;
  }
  ScriptedGeneration g;
  g.generated = positions.size();
  g.split = split_at_stop_sequence(std::move(positions), stops);
  if (g.split.matched) {
    g.reason = StopReason::StopSequence;
  } else if (truncated) {
    g.reason = StopReason::MaxTokens;
  } else {
    g.reason = step.stop_reason.value_or(StopReason::EndOfAnswer);
  }
  return g;
}

}  // namespace

namespace {

bool crop_since_last_turn(const Context& context) {
  bool image = false;
  for (auto it = context.rbegin(); it != context.rend(); ++it) {
    if (it->role == Role::Assistant) return image;
    image = image || it->kind == ContentKind::Image;
  }
  return false;
}

bool crop_since_last_turn(const json& messages) {
  bool image = false;
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->value("role", "") == "assistant") return image;
    const json& content = (*it)["content"];
    if (!content.is_array()) continue;
    for (const auto& part : content) {
      image = image || part.value("type", "") == "image_url";
    }
  }
  return false;
}

}  // namespace

ScriptedBackend::ScriptedBackend(BackendScript script, TokenEstimator estimator)
    : script_(std::move(script)), estimator_(estimator) {
  script_.validate();
}

StepRecord ScriptedBackend::generate_step(const GenerationRequest& request) {
  if (cursor_ >= script_.steps.size()) {
    throw ScriptExhausted("script has " + std::to_string(script_.steps.size()) +
                          " step(s); call " + std::to_string(cursor_ + 1) +
                          " has nothing to serve");
  }
  const bool inserted = cursor_ > 0 && crop_since_last_turn(request.context);
  const ScriptedStep& scripted = script_.steps[cursor_++].variant(inserted);
  auto g = run_script_step(scripted, request.stop_sequences,
                           request.max_step_tokens, request.top_k);
  require_top_two(g.split.kept);

  StepRecord step;
  step.step_index = request.step_index;
  step.text = std::move(g.split.kept_text);
  step.excluded_tail = std::move(g.split.excluded_text);
  step.position_logits = std::move(g.split.kept);
  step.excluded_positions = std::move(g.split.excluded);
  step.matched_stop = g.split.matched;
  step.stop_reason = g.reason;
  if (scripted.usage) {
    step.usage = *scripted.usage;
    step.usage.reported = true;
    step.usage.image_tokens_reported = true;
  } else {
    step.usage = estimator_.estimate_prompt(request.context);
    step.usage.completion_tokens = static_cast<std::int64_t>(g.generated);
  }
  return step;
}

ScriptedChatEndpoint::ScriptedChatEndpoint(BackendScript script,
                                           TokenEstimator estimator)
    : script_(std::move(script)), estimator_(estimator) {
  script_.validate();
}

std::size_t ScriptedChatEndpoint::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

namespace {

HttpResponse error_response(int status, const std::string& message) {
  return {status, json{{"error", {{"message", message}}}}.dump()};
}

std::int64_t image_part_tokens(const std::string& url) {
  const auto comma = url.find(',');
  if (url.rfind("data:", 0) != 0 || comma == std::string::npos) return 0;
  const auto dims = decode_dimensions(base64_decode(url.substr(comma + 1)));
  const std::int64_t pixels = dims.width * dims.height;
  return std::max<std::int64_t>(
      1, (pixels + ScriptedChatEndpoint::kPixelsPerImageToken - 1) /
             ScriptedChatEndpoint::kPixelsPerImageToken);
}

}  // namespace

HttpResponse ScriptedChatEndpoint::send(const HttpRequest& request) {
  std::lock_guard lock(mutex_);
  ++calls_;
  const json body = json::parse(request.body, nullptr, false);
  if (!body.is_object() || !body.contains("messages")) {
    return error_response(400, "malformed request");
  }
  if (cursor_ >= script_.steps.size()) {
    return error_response(500, "script exhausted after " +
                                   std::to_string(script_.steps.size()) +
                                   " step(s)");
  }
  const bool inserted = cursor_ > 0 && crop_since_last_turn(body["messages"]);
  const ScriptedStep& scripted = script_.steps[cursor_].variant(inserted);
  if (failures_served_ < scripted.failures.size()) {
    const auto& f = scripted.failures[failures_served_++];
    return error_response(f.status, f.message.empty() ? "scripted failure"
                                                      : f.message);
  }
  ++cursor_;
  failures_served_ = 0;

  std::int64_t prompt_text = 0;
  std::int64_t prompt_image = 0;
  for (const auto& message : body["messages"]) {
    const json& content = message["content"];
    if (content.is_string()) {
      prompt_text += estimator_.text_tokens(content.get<std::string>());
      continue;
    }
    for (const auto& part : content) {
      if (part.value("type", "") == "text") {
        prompt_text += estimator_.text_tokens(part.value("text", ""));
      } else if (part.value("type", "") == "image_url") {
        prompt_image += image_part_tokens(part["image_url"].value("url", ""));
      }
    }
  }

  const auto stops = body.value("stop", std::vector<std::string>{});
  const auto max_tokens = body.value("max_tokens", std::size_t{256});
  const auto top_k = body.value("top_logprobs", std::size_t{1});
  const bool logprobs = body.value("logprobs", false);
  auto g = run_script_step(scripted, stops, max_tokens, top_k);

  json choice = {{"index", 0},
                 {"message", {{"role", "assistant"}, {"content", g.split.kept_text}}}};
  choice["finish_reason"] =
      g.reason == StopReason::MaxTokens ? "length" : "stop";
  choice["stop_reason"] =
      g.split.matched ? json(*g.split.matched) : json(nullptr);
  if (logprobs) {
    json content = json::array();
    for (const auto& p : g.split.kept) {
      json alts = json::array();
      for (const auto& e : p.top_entries) {
        alts.push_back({{"token", e.token}, {"logprob", e.log_score}});
      }
      content.push_back({{"token", p.top_entries.front().token},
                         {"logprob", p.top_entries.front().log_score},
                         {"top_logprobs", std::move(alts)}});
    }
    choice["logprobs"] = {{"content", std::move(content)}};
  } else {
    choice["logprobs"] = nullptr;
  }

  json usage;
  if (scripted.usage) {
    usage = {{"prompt_tokens", scripted.usage->prompt_text_tokens +
                                   scripted.usage->prompt_image_tokens},
             {"completion_tokens", scripted.usage->completion_tokens},
             {"prompt_tokens_details",
              {{"image_tokens", scripted.usage->prompt_image_tokens}}}};
  } else {
    const auto completion = static_cast<std::int64_t>(g.generated);
    usage = {{"prompt_tokens", prompt_text + prompt_image},
             {"completion_tokens", completion},
             {"prompt_tokens_details", {{"image_tokens", prompt_image}}}};
  }
  usage["total_tokens"] = usage["prompt_tokens"].get<std::int64_t>() +
                          usage["completion_tokens"].get<std::int64_t>();

  const json response = {{"id", "scripted-" + std::to_string(cursor_)},
                         {"object", "chat.completion"},
                         {"model", body.value("model", "")},
                         {"choices", json::array({choice})},
                         {"usage", usage}};
  return {200, response.dump()};
}

ScriptedScorer::ScriptedScorer(Table table) : table_(std::move(table)) {}

double ScriptedScorer::score(const ScoringQuery& query,
                             const ObjectCandidate& candidate) {
  const auto it = table_.find({query.step_index, candidate.candidate_id});
  if (it == table_.end()) {
    throw ScriptMiss("no scripted score for step " +
                     std::to_string(query.step_index) + ", candidate " +
                     candidate.candidate_id);
  }
  return it->second;
}

ScriptedSegmentation::ScriptedSegmentation(
    std::vector<SegmentationRegion> regions, int unavailable_calls, bool reject)
    : regions_(std::move(regions)),
      unavailable_calls_(unavailable_calls),
      reject_(reject) {}

std::vector<SegmentationRegion> ScriptedSegmentation::segment(
    const std::string& image_id, const std::vector<unsigned char>&) {
  const int call = ++calls_;
  if (reject_) throw ProviderRejected("scripted rejection of " + image_id);
  if (call <= unavailable_calls_) {
    throw ProviderUnavailable("scripted timeout " + std::to_string(call));
  }
  return regions_;
}

}  // namespace gatedcot
