#include "gatedcot/backend.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <stdexcept>

#include "gatedcot/digest.hpp"
#include "gatedcot/error.hpp"

namespace gatedcot {

using nlohmann::json;

const char* to_string(ContentKind kind) {
  return kind == ContentKind::Text ? "text" : "image";
}

const char* to_string(Role role) {
  switch (role) {
    case Role::System:
      return "system";
    case Role::User:
      return "user";
    case Role::Assistant:
      return "assistant";
  }
  return "unknown";
}

ContextItem ContextItem::make_text(Role role, std::string text) {
  ContextItem item;
  item.kind = ContentKind::Text;
  item.role = role;
  item.text = std::move(text);
  return item;
}

ContextItem ContextItem::make_image(Role role, ImageRef image) {
  ContextItem item;
  item.kind = ContentKind::Image;
  item.role = role;
  item.image = std::move(image);
  return item;
}

std::int64_t TokenEstimator::text_tokens(std::string_view text) const {
  const auto per = std::max<std::int64_t>(1, bytes_per_text_token);
  return (static_cast<std::int64_t>(text.size()) + per - 1) / per;
}

std::int64_t TokenEstimator::image_tokens(double area_fraction) const {
  return static_cast<std::int64_t>(
      std::ceil(static_cast<double>(full_image_tokens) * area_fraction));
}

Usage TokenEstimator::estimate_prompt(const Context& context) const {
  Usage usage;
  for (const auto& item : context) {
    if (item.kind == ContentKind::Text) {
      usage.prompt_text_tokens += text_tokens(item.text);
    } else if (item.image) {
      usage.prompt_image_tokens += image_tokens(item.image->area_fraction);
    }
  }
  return usage;
}

StopSplit split_at_stop_sequence(std::vector<PositionLogits> positions,
                                 std::span<const std::string> stop_sequences) {
  std::string text;
  std::vector<std::size_t> starts;
  starts.reserve(positions.size());
  for (const auto& p : positions) {
    starts.push_back(text.size());
    if (!p.top_entries.empty()) text += p.top_entries.front().token;
  }

  std::size_t match_at = std::string::npos;
  std::optional<std::string> matched;
  for (const auto& stop : stop_sequences) {
    if (stop.empty()) continue;
    const auto at = text.find(stop);
    if (at < match_at) {
      match_at = at;
      matched = stop;
    }
  }

  StopSplit split;
  if (!matched) {
    split.kept = std::move(positions);
    split.kept_text = std::move(text);
    return split;
  }
  // Index of the token holding the first byte of the match; a token that
  // straddles the boundary goes to the excluded tail as a whole.
  const std::size_t cut = static_cast<std::size_t>(
      std::upper_bound(starts.begin(), starts.end(), match_at) -
      starts.begin() - 1);
  split.matched = matched;
  split.kept.assign(std::make_move_iterator(positions.begin()),
                    std::make_move_iterator(positions.begin() + cut));
  split.excluded.assign(std::make_move_iterator(positions.begin() + cut),
                        std::make_move_iterator(positions.end()));
  const std::size_t kept_bytes = cut < starts.size() ? starts[cut] : text.size();
  split.kept_text = text.substr(0, kept_bytes);
  split.excluded_text = text.substr(kept_bytes);
  for (std::size_t i = 0; i < split.kept.size(); ++i) {
    split.kept[i].position_index = i;
  }
  return split;
}

void require_top_two(std::span<const PositionLogits> positions) {
  for (const auto& p : positions) {
    if (p.top_entries.size() < 2) {
      throw LogprobsUnsupported(
          "endpoint returned " + std::to_string(p.top_entries.size()) +
          " alternative(s) at position " + std::to_string(p.position_index) +
          "; confidence gating needs top_logprobs >= 2. Enable logprobs "
          "with top_logprobs >= 2 on the serving endpoint.");
    }
  }
}

ChatCompletionsBackend::ChatCompletionsBackend(
    ChatBackendConfig config, std::shared_ptr<HttpTransport> transport,
    TokenEstimator estimator)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      estimator_(estimator) {}

namespace {

json image_part(const ImageRef& image) {
  const auto bytes = read_file_bytes(image.path);
  return {{"type", "image_url"},
          {"image_url",
           {{"url", "data:" + sniff_image_mime(bytes) + ";base64," +
                        base64_encode(bytes)}}}};
}

json encode_messages(const Context& context) {
  json messages = json::array();
  std::size_t i = 0;
  while (i < context.size()) {
    const Role role = context[i].role;
    json parts = json::array();
    bool has_image = false;
    for (; i < context.size() && context[i].role == role; ++i) {
      const auto& item = context[i];
      if (item.kind == ContentKind::Text) {
        parts.push_back({{"type", "text"}, {"text", item.text}});
      } else if (item.image) {
        parts.push_back(image_part(*item.image));
        has_image = true;
      }
    }
    json message = {{"role", to_string(role)}};
    if (!has_image && parts.size() == 1) {
      message["content"] = parts[0]["text"];
    } else {
      message["content"] = std::move(parts);
    }
    messages.push_back(std::move(message));
  }
  return messages;
}

std::string error_text(const std::string& body) {
  const json parsed = json::parse(body, nullptr, false);
  if (parsed.is_object() && parsed.contains("error")) {
    const auto& err = parsed["error"];
    if (err.is_string()) return err.get<std::string>();
    if (err.is_object()) {
      std::string out = err.value("message", std::string{});
      if (err.contains("code") && err["code"].is_string()) {
        out += " [" + err["code"].get<std::string>() + "]";
      }
      return out;
    }
  }
  return body.substr(0, 512);
}

bool mentions(std::string haystack, std::initializer_list<const char*> words) {
  std::transform(haystack.begin(), haystack.end(), haystack.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return std::all_of(words.begin(), words.end(), [&](const char* w) {
    return haystack.find(w) != std::string::npos;
  });
}

}  // namespace

std::string ChatCompletionsBackend::encode_request(
    const GenerationRequest& request) const {
  json body = {
      {"model", config_.model},
      {"messages", encode_messages(request.context)},
      {"stop", request.stop_sequences},
      {"max_tokens", request.max_step_tokens},
      {"logprobs", true},
      {"top_logprobs", request.top_k},
  };
  if (request.seed) body["seed"] = *request.seed;
  if (config_.temperature) body["temperature"] = *config_.temperature;
  return body.dump();
}

StepRecord ChatCompletionsBackend::decode_response(
    const HttpResponse& response, const GenerationRequest& request) const {
  if (response.status != 200) {
    const std::string message = error_text(response.body);
    if (is_transient_status(response.status)) {
      throw EndpointUnavailable("HTTP " + std::to_string(response.status) +
                                ": " + message);
    }
    if (mentions(message, {"context"}) &&
        (mentions(message, {"length"}) || mentions(message, {"too long"}) ||
         mentions(message, {"maximum"}))) {
      throw ContextTooLong(message);
    }
    if (mentions(message, {"logprobs"})) throw LogprobsUnsupported(message);
    throw ProtocolError("HTTP " + std::to_string(response.status) + ": " +
                        message);
  }

  const json doc = json::parse(response.body, nullptr, false);
  if (doc.is_discarded() || !doc.contains("choices") ||
      !doc["choices"].is_array() || doc["choices"].empty()) {
    throw ProtocolError("response carries no choices");
  }
  const json& choice = doc["choices"][0];

  const json* token_list = nullptr;
  if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
      choice["logprobs"].contains("content") &&
      choice["logprobs"]["content"].is_array()) {
    token_list = &choice["logprobs"]["content"];
  }
  if (token_list == nullptr) {
    throw LogprobsUnsupported(
        "endpoint returned no token log-probabilities; request logprobs "
        "with top_logprobs >= 2");
  }

  std::vector<PositionLogits> positions;
  positions.reserve(token_list->size());
  for (const auto& entry : *token_list) {
    PositionLogits p;
    p.position_index = positions.size();
    if (entry.contains("top_logprobs") && entry["top_logprobs"].is_array()) {
      for (const auto& alt : entry["top_logprobs"]) {
        p.top_entries.push_back(
            {alt.value("token", std::string{}), alt.value("logprob", 0.0)});
      }
    }
    if (p.top_entries.empty()) {
      p.top_entries.push_back({entry.value("token", std::string{}),
                               entry.value("logprob", 0.0)});
    }
    std::stable_sort(p.top_entries.begin(), p.top_entries.end(),
                     [](const TokenScore& a, const TokenScore& b) {
                       return a.log_score > b.log_score;
                     });
    positions.push_back(std::move(p));
  }
  const std::size_t generated = positions.size();

  StepRecord step;
  step.step_index = request.step_index;
  const json& message = choice.value("message", json::object());
  std::string content =
      message.contains("content") && message["content"].is_string()
          ? message["content"].get<std::string>()
          : std::string{};

  StopSplit split = split_at_stop_sequence(std::move(positions),
                                           request.stop_sequences);
  require_top_two(split.kept);
  const std::string finish = choice.value("finish_reason", std::string{});
  if (split.matched) {
    step.stop_reason = StopReason::StopSequence;
    step.matched_stop = split.matched;
    const auto at = content.find(*split.matched);
    step.text = content.substr(0, at);
    step.excluded_tail =
        at == std::string::npos ? split.excluded_text : content.substr(at);
  } else {
    step.text = std::move(content);
    if (finish == "length") {
      step.stop_reason = StopReason::MaxTokens;
    } else if (choice.contains("stop_reason") &&
               choice["stop_reason"].is_string()) {
      // vLLM names the stop string that ended generation; it is not part
      // of the returned content.
      step.stop_reason = StopReason::StopSequence;
      step.matched_stop = choice["stop_reason"].get<std::string>();
      step.excluded_tail = *step.matched_stop;
    } else {
      step.stop_reason = StopReason::EndOfAnswer;
    }
  }
  step.position_logits = std::move(split.kept);
  step.excluded_positions = std::move(split.excluded);

  const Usage estimate = estimator_.estimate_prompt(request.context);
  if (doc.contains("usage") && doc["usage"].is_object()) {
    const json& u = doc["usage"];
    const std::int64_t prompt = u.value("prompt_tokens", std::int64_t{0});
    step.usage.reported = true;
    step.usage.completion_tokens =
        u.value("completion_tokens", static_cast<std::int64_t>(generated));
    std::int64_t image = estimate.prompt_image_tokens;
    if (u.contains("prompt_tokens_details") &&
        u["prompt_tokens_details"].is_object() &&
        u["prompt_tokens_details"].contains("image_tokens")) {
      image = u["prompt_tokens_details"]["image_tokens"].get<std::int64_t>();
      step.usage.image_tokens_reported = true;
    }
    image = std::min(image, prompt);
    step.usage.prompt_image_tokens = image;
    step.usage.prompt_text_tokens = prompt - image;
  } else {
    step.usage = estimate;
    step.usage.completion_tokens = static_cast<std::int64_t>(generated);
  }
  return step;
}

StepRecord ChatCompletionsBackend::generate_step(
    const GenerationRequest& request) {
  if (request.context.empty()) {
    throw std::invalid_argument("generation context is empty");
  }
  if (request.top_k < 2) {
    throw std::invalid_argument("top_k must be >= 2 to compute margins");
  }
  HttpRequest http;
  http.method = "POST";
  http.url = config_.url;
  http.timeout = config_.timeout;
  http.headers["Content-Type"] = "application/json";
  if (!config_.api_key.empty()) {
    http.headers["Authorization"] = "Bearer " + config_.api_key;
  }
  http.body = encode_request(request);
  return with_retry(config_.retry, [&] {
    return decode_response(transport_->send(http), request);
  });
}

}  // namespace gatedcot
