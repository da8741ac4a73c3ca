#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gatedcot {

struct TokenScore {
  std::string token;
  double log_score = 0.0;

  bool operator==(const TokenScore&) const = default;
};

// Top-k alternatives served for one generated position, best first.
struct PositionLogits {
  std::size_t position_index = 0;
  std::vector<TokenScore> top_entries;

  bool operator==(const PositionLogits&) const = default;
};

enum class StopReason { StopSequence, MaxTokens, EndOfAnswer };

struct Usage {
  std::int64_t prompt_text_tokens = 0;
  std::int64_t prompt_image_tokens = 0;
  std::int64_t completion_tokens = 0;
  // False when the endpoint sent no usage payload and the numbers come from
  // the estimator.
  bool reported = false;
  // Endpoints rarely split prompt tokens by modality; when they do not, the
  // image share is estimated and the text share is the remainder.
  bool image_tokens_reported = false;

  std::int64_t total() const {
    return prompt_text_tokens + prompt_image_tokens + completion_tokens;
  }
  bool operator==(const Usage&) const = default;
};

// One bounded generation call: the rationale text T_t and everything needed
// to score its confidence.
//
// `position_logits` holds the counted positions only. Positions consumed by a
// matched stop sequence (or forced by a template) live in
// `excluded_positions`, and their text in `excluded_tail`, so that
// text == concat(top-1 tokens of position_logits).
struct StepRecord {
  int step_index = 1;
  std::string text;
  std::vector<PositionLogits> position_logits;
  std::vector<PositionLogits> excluded_positions;
  std::string excluded_tail;
  StopReason stop_reason = StopReason::EndOfAnswer;
  std::optional<std::string> matched_stop;
  Usage usage;

  bool operator==(const StepRecord&) const = default;
};

const char* to_string(StopReason reason);

}  // namespace gatedcot
