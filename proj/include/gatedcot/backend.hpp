#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gatedcot/http.hpp"
#include "gatedcot/image.hpp"
#include "gatedcot/step.hpp"

namespace gatedcot {

enum class ContentKind { Text, Image };
enum class Role { System, User, Assistant };

const char* to_string(ContentKind kind);
const char* to_string(Role role);

// One element of the generation context. Exactly one of `text` / `image` is
// meaningful, matching `kind`.
struct ContextItem {
  ContentKind kind = ContentKind::Text;
  Role role = Role::User;
  std::string text;
  std::optional<ImageRef> image;

  static ContextItem make_text(Role role, std::string text);
  static ContextItem make_image(Role role, ImageRef image);

  bool operator==(const ContextItem&) const = default;
};

using Context = std::vector<ContextItem>;

struct GenerationRequest {
  Context context;
  std::vector<std::string> stop_sequences;
  std::size_t max_step_tokens = 256;
  std::size_t top_k = 5;
  std::optional<std::int64_t> seed;
  int step_index = 1;
};

// Produces one reasoning step per call. One instance serves one trace at a
// time; separate traces use separate instances or a thread-safe backend.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual StepRecord generate_step(const GenerationRequest& request) = 0;
};

// Fallback token costs for endpoints that do not report usage.
struct TokenEstimator {
  // Image tokens billed for a full-size image; crops cost proportionally.
  std::int64_t full_image_tokens = 256;
  std::int64_t bytes_per_text_token = 4;

  std::int64_t text_tokens(std::string_view text) const;
  /// ceil(full_image_tokens * area_fraction)
  std::int64_t image_tokens(double area_fraction) const;
  /// Prompt-side usage of a whole context; completion_tokens is left 0.
  Usage estimate_prompt(const Context& context) const;
};

struct StopSplit {
  std::vector<PositionLogits> kept;
  std::vector<PositionLogits> excluded;
  std::string kept_text;
  std::string excluded_text;
  std::optional<std::string> matched;
};

/// Splits generated positions at the earliest occurrence of any stop
/// sequence in the top-1 text. The position containing the first byte of the
/// match and everything after it are excluded. Kept positions are
/// re-indexed from 0.
StopSplit split_at_stop_sequence(std::vector<PositionLogits> positions,
                                 std::span<const std::string> stop_sequences);

/// Throws LogprobsUnsupported when any position carries fewer than two
/// alternatives, with a hint on raising the endpoint's top-k.
void require_top_two(std::span<const PositionLogits> positions);

struct ChatBackendConfig {
  std::string url;
  std::string model;
  std::string api_key;
  std::chrono::milliseconds timeout{120000};
  RetryPolicy retry;
  std::optional<double> temperature;
};

// Client for chat-completions style endpoints that return per-token top-k
// log-probabilities (OpenAI / vLLM wire format).
class ChatCompletionsBackend final : public GenerationBackend {
 public:
  ChatCompletionsBackend(ChatBackendConfig config,
                         std::shared_ptr<HttpTransport> transport,
                         TokenEstimator estimator = {});

  StepRecord generate_step(const GenerationRequest& request) override;

  /// Request body for `request`; exposed for wire-format tests.
  std::string encode_request(const GenerationRequest& request) const;
  /// Maps a response (status + body) to a StepRecord or a typed error.
  StepRecord decode_response(const HttpResponse& response,
                             const GenerationRequest& request) const;

 private:
  ChatBackendConfig config_;
  std::shared_ptr<HttpTransport> transport_;
  TokenEstimator estimator_;
};

}  // namespace gatedcot
