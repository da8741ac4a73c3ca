#include "gatedcot/codec.hpp"

#include <cmath>
#include <limits>

namespace gatedcot {

using nlohmann::json;

json real_to_json(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "+inf" : "-inf";
  return value;
}

double real_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "+inf" || s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw json::type_error::create(302, "not a real number: " + s, &j);
}

namespace {

template <typename T>
void put_opt(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <typename T>
void get_opt(const json& j, const char* key, std::optional<T>& v) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    v.reset();
  } else {
    v = it->template get<T>();
  }
}

void put_opt_real(json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = real_to_json(*v);
}

void get_opt_real(const json& j, const char* key, std::optional<double>& v) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    v.reset();
  } else {
    v = real_from_json(*it);
  }
}

json reals(const std::vector<double>& values) {
  json out = json::array();
  for (double v : values) out.push_back(real_to_json(v));
  return out;
}

std::vector<double> reals_from(const json& j) {
  std::vector<double> out;
  for (const auto& v : j) out.push_back(real_from_json(v));
  return out;
}

}  // namespace

void to_json(json& j, const TokenScore& v) {
  j = {{"token", v.token}, {"log_score", real_to_json(v.log_score)}};
}
void from_json(const json& j, TokenScore& v) {
  v.token = j.at("token").get<std::string>();
  v.log_score = real_from_json(j.at("log_score"));
}

void to_json(json& j, const PositionLogits& v) {
  j = {{"position_index", v.position_index}, {"top_entries", v.top_entries}};
}
void from_json(const json& j, PositionLogits& v) {
  j.at("position_index").get_to(v.position_index);
  j.at("top_entries").get_to(v.top_entries);
}

void to_json(json& j, const Usage& v) {
  j = {{"prompt_text_tokens", v.prompt_text_tokens},
       {"prompt_image_tokens", v.prompt_image_tokens},
       {"completion_tokens", v.completion_tokens},
       {"reported", v.reported},
       {"image_tokens_reported", v.image_tokens_reported}};
}
void from_json(const json& j, Usage& v) {
  j.at("prompt_text_tokens").get_to(v.prompt_text_tokens);
  j.at("prompt_image_tokens").get_to(v.prompt_image_tokens);
  j.at("completion_tokens").get_to(v.completion_tokens);
  v.reported = j.value("reported", false);
  v.image_tokens_reported = j.value("image_tokens_reported", false);
}

void to_json(json& j, const StepRecord& v) {
  j = {{"step_index", v.step_index},
       {"text", v.text},
       {"position_logits", v.position_logits},
       {"excluded_positions", v.excluded_positions},
       {"excluded_tail", v.excluded_tail},
       {"stop_reason", v.stop_reason},
       {"usage", v.usage}};
  put_opt(j, "matched_stop", v.matched_stop);
}
void from_json(const json& j, StepRecord& v) {
  j.at("step_index").get_to(v.step_index);
  j.at("text").get_to(v.text);
  j.at("position_logits").get_to(v.position_logits);
  j.at("excluded_positions").get_to(v.excluded_positions);
  j.at("excluded_tail").get_to(v.excluded_tail);
  j.at("stop_reason").get_to(v.stop_reason);
  j.at("usage").get_to(v.usage);
  get_opt(j, "matched_stop", v.matched_stop);
}

void to_json(json& j, const ConfidenceReport& v) {
  j = {{"margins", reals(v.margins)},
       {"aggregate", real_to_json(v.aggregate)},
       {"position_count", v.position_count}};
}
void from_json(const json& j, ConfidenceReport& v) {
  v.margins = reals_from(j.at("margins"));
  v.aggregate = real_from_json(j.at("aggregate"));
  j.at("position_count").get_to(v.position_count);
}

void to_json(json& j, const GatingConfig& v) {
  j = {{"tau", real_to_json(v.tau)}};
  put_opt(j, "max_insertions_per_trace", v.max_insertions_per_trace);
}
void from_json(const json& j, GatingConfig& v) {
  v.tau = real_from_json(j.at("tau"));
  get_opt(j, "max_insertions_per_trace", v.max_insertions_per_trace);
}

void to_json(json& j, const GatingDecision& v) {
  j = {{"insert", v.insert},
       {"confidence", real_to_json(v.confidence)},
       {"tau_used", real_to_json(v.tau_used)},
       {"reason", v.reason}};
}
void from_json(const json& j, GatingDecision& v) {
  j.at("insert").get_to(v.insert);
  v.confidence = real_from_json(j.at("confidence"));
  v.tau_used = real_from_json(j.at("tau_used"));
  j.at("reason").get_to(v.reason);
}

void to_json(json& j, const ImageRef& v) {
  j = {{"id", v.id},
       {"path", v.path},
       {"digest", v.digest},
       {"area_fraction", real_to_json(v.area_fraction)}};
}
void from_json(const json& j, ImageRef& v) {
  j.at("id").get_to(v.id);
  j.at("path").get_to(v.path);
  v.digest = j.value("digest", "");
  v.area_fraction = j.contains("area_fraction")
                        ? real_from_json(j.at("area_fraction"))
                        : 1.0;
}

void to_json(json& j, const ImageDimensions& v) {
  j = {{"width", v.width}, {"height", v.height}};
}
void from_json(const json& j, ImageDimensions& v) {
  j.at("width").get_to(v.width);
  j.at("height").get_to(v.height);
}

void to_json(json& j, const BoundingBox& v) {
  j = json::array({v.x, v.y, v.width, v.height});
}
void from_json(const json& j, BoundingBox& v) {
  if (!j.is_array() || j.size() != 4) {
    throw json::type_error::create(302, "box must be [x, y, w, h]", &j);
  }
  j[0].get_to(v.x);
  j[1].get_to(v.y);
  j[2].get_to(v.width);
  j[3].get_to(v.height);
}

void to_json(json& j, const ObjectCandidate& v) {
  j = {{"candidate_id", v.candidate_id},
       {"source_image_id", v.source_image_id},
       {"box", v.box},
       {"crop", v.crop},
       {"area_fraction", real_to_json(v.area_fraction)},
       {"provenance", v.provenance}};
  put_opt(j, "mask_ref", v.mask_ref);
}
void from_json(const json& j, ObjectCandidate& v) {
  j.at("candidate_id").get_to(v.candidate_id);
  j.at("source_image_id").get_to(v.source_image_id);
  j.at("box").get_to(v.box);
  j.at("crop").get_to(v.crop);
  v.area_fraction = real_from_json(j.at("area_fraction"));
  j.at("provenance").get_to(v.provenance);
  get_opt(j, "mask_ref", v.mask_ref);
}

void to_json(json& j, const ObjectPool& v) {
  j = {{"source_image_id", v.source_image_id},
       {"source_dimensions", v.source_dimensions},
       {"candidates", v.candidates},
       {"warnings", v.warnings}};
}
void from_json(const json& j, ObjectPool& v) {
  j.at("source_image_id").get_to(v.source_image_id);
  j.at("source_dimensions").get_to(v.source_dimensions);
  j.at("candidates").get_to(v.candidates);
  v.warnings = j.value("warnings", std::vector<std::string>{});
}

void to_json(json& j, const RelevanceScore& v) {
  j = {{"candidate_id", v.candidate_id}, {"score", real_to_json(v.score)}};
}
void from_json(const json& j, RelevanceScore& v) {
  j.at("candidate_id").get_to(v.candidate_id);
  v.score = real_from_json(j.at("score"));
}

void to_json(json& j, const SelectedObject& v) {
  j = {{"candidate", v.candidate},
       {"pool_index", v.pool_index},
       {"score", real_to_json(v.score)}};
  put_opt_real(j, "runner_up_score", v.runner_up_score);
  put_opt_real(j, "selection_margin", v.selection_margin);
}
void from_json(const json& j, SelectedObject& v) {
  j.at("candidate").get_to(v.candidate);
  j.at("pool_index").get_to(v.pool_index);
  v.score = real_from_json(j.at("score"));
  get_opt_real(j, "runner_up_score", v.runner_up_score);
  get_opt_real(j, "selection_margin", v.selection_margin);
}

void to_json(json& j, const TraceStep& v) {
  j = {{"step", v.step},
       {"confidence", v.confidence},
       {"gating", v.gating},
       {"scores", v.scores},
       {"inserted_image_tokens", v.inserted_image_tokens},
       {"empty_step", v.empty_step}};
  put_opt(j, "selected", v.selected);
  put_opt(j, "insertion_position", v.insertion_position);
  put_opt(j, "fault", v.fault);
}
void from_json(const json& j, TraceStep& v) {
  j.at("step").get_to(v.step);
  j.at("confidence").get_to(v.confidence);
  j.at("gating").get_to(v.gating);
  j.at("scores").get_to(v.scores);
  j.at("inserted_image_tokens").get_to(v.inserted_image_tokens);
  j.at("empty_step").get_to(v.empty_step);
  get_opt(j, "selected", v.selected);
  get_opt(j, "insertion_position", v.insertion_position);
  get_opt(j, "fault", v.fault);
}

void to_json(json& j, const ReasoningTrace& v) {
  j = {{"trace_id", v.trace_id},
       {"question", v.question},
       {"source_image_id", v.source_image_id},
       {"steps", v.steps},
       {"verdict", v.verdict},
       {"insertions", v.insertion_count()},
       {"config", v.config_snapshot}};
  put_opt(j, "final_answer", v.final_answer);
  put_opt(j, "fault", v.fault);
}
void from_json(const json& j, ReasoningTrace& v) {
  j.at("trace_id").get_to(v.trace_id);
  j.at("question").get_to(v.question);
  j.at("source_image_id").get_to(v.source_image_id);
  j.at("steps").get_to(v.steps);
  j.at("verdict").get_to(v.verdict);
  v.config_snapshot = j.value("config", json());
  get_opt(j, "final_answer", v.final_answer);
  get_opt(j, "fault", v.fault);
}

void to_json(json& j, const ContextItem& v) {
  j = {{"kind", v.kind}, {"role", v.role}};
  if (v.kind == ContentKind::Text) {
    j["text"] = v.text;
  } else if (v.image) {
    j["image"] = *v.image;
  }
}
void from_json(const json& j, ContextItem& v) {
  j.at("kind").get_to(v.kind);
  j.at("role").get_to(v.role);
  v.text = j.value("text", "");
  get_opt(j, "image", v.image);
}

void to_json(json& j, const HttpResponse& v) {
  j = {{"status", v.status}, {"body", v.body}};
}
void from_json(const json& j, HttpResponse& v) {
  j.at("status").get_to(v.status);
  j.at("body").get_to(v.body);
}

void to_json(json& j, const Interaction& v) {
  j = {{"method", v.method},
       {"url", v.url},
       {"request_hash", v.request_hash},
       {"response", v.response}};
}
void from_json(const json& j, Interaction& v) {
  j.at("method").get_to(v.method);
  j.at("url").get_to(v.url);
  j.at("request_hash").get_to(v.request_hash);
  j.at("response").get_to(v.response);
}

void to_json(json& j, const Cassette& v) {
  j = {{"interactions", v.interactions}};
}
void from_json(const json& j, Cassette& v) {
  j.at("interactions").get_to(v.interactions);
}

void to_json(json& j, const TokenLedger& v) {
  j = {{"trace_id", v.trace_id},
       {"text_tokens", v.text_tokens},
       {"image_tokens", v.image_tokens},
       {"total_tokens", v.total_tokens},
       {"insertions", v.insertions},
       {"inserted_image_tokens", v.inserted_image_tokens}};
}
void from_json(const json& j, TokenLedger& v) {
  j.at("trace_id").get_to(v.trace_id);
  j.at("text_tokens").get_to(v.text_tokens);
  j.at("image_tokens").get_to(v.image_tokens);
  j.at("total_tokens").get_to(v.total_tokens);
  j.at("insertions").get_to(v.insertions);
  j.at("inserted_image_tokens").get_to(v.inserted_image_tokens);
}

void to_json(json& j, const ScriptedFailure& v) {
  j = {{"status", v.status}, {"message", v.message}};
}
void from_json(const json& j, ScriptedFailure& v) {
  v.status = j.value("status", 503);
  v.message = j.value("message", "");
}

void to_json(json& j, const ScriptedStep& v) {
  j = {{"text", v.text}};
  if (!v.tokens.empty()) j["tokens"] = v.tokens;
  if (!v.margins.empty()) j["margins"] = reals(v.margins);
  put_opt_real(j, "margin", v.flat_margin);
  if (!v.top_two.empty()) {
    json pairs = json::array();
    for (const auto& [a, b] : v.top_two) {
      pairs.push_back({real_to_json(a), real_to_json(b)});
    }
    j["top2"] = std::move(pairs);
  }
  put_opt(j, "stop", v.stop_marker);
  put_opt(j, "stop_reason", v.stop_reason);
  if (v.usage) {
    j["usage"] = {v.usage->prompt_text_tokens, v.usage->prompt_image_tokens,
                  v.usage->completion_tokens};
  }
  if (v.alternatives != 2) j["alternatives"] = v.alternatives;
  if (!v.failures.empty()) j["failures"] = v.failures;
  if (!v.after_insertion.empty()) j["after_insertion"] = v.after_insertion.front();
}
void from_json(const json& j, ScriptedStep& v) {
  v = ScriptedStep{};
  v.text = j.value("text", "");
  v.tokens = j.value("tokens", std::vector<std::string>{});
  if (j.contains("margins")) v.margins = reals_from(j.at("margins"));
  get_opt_real(j, "margin", v.flat_margin);
  if (j.contains("top2")) {
    for (const auto& pair : j.at("top2")) {
      v.top_two.emplace_back(real_from_json(pair.at(0)),
                             real_from_json(pair.at(1)));
    }
  }
  get_opt(j, "stop", v.stop_marker);
  get_opt(j, "stop_reason", v.stop_reason);
  if (j.contains("usage")) {
    const auto& u = j.at("usage");
    Usage usage;
    if (u.is_array()) {
      u.at(0).get_to(usage.prompt_text_tokens);
      u.at(1).get_to(usage.prompt_image_tokens);
      u.at(2).get_to(usage.completion_tokens);
    } else {
      usage = u.get<Usage>();
    }
    usage.reported = true;
    usage.image_tokens_reported = true;
    v.usage = usage;
  }
  v.alternatives = j.value("alternatives", std::size_t{2});
  v.failures = j.value("failures", std::vector<ScriptedFailure>{});
  if (j.contains("after_insertion")) {
    v.after_insertion = {j.at("after_insertion").get<ScriptedStep>()};
  }
}

void to_json(json& j, const BackendScript& v) { j = {{"steps", v.steps}}; }
void from_json(const json& j, BackendScript& v) {
  j.at("steps").get_to(v.steps);
}

}  // namespace gatedcot
