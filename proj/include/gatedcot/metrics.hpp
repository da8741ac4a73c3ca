#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gatedcot/orchestrator.hpp"

namespace gatedcot {

// Token accounting for one trace. text/image are summed over every
// generation call of the trace (prompt + completion), plus the cost of a
// crop interleaved after the final step; inserted_image_tokens is the part
// of the image cost attributed to inserted crops.
struct TokenLedger {
  std::string trace_id;
  std::int64_t text_tokens = 0;
  std::int64_t image_tokens = 0;
  std::int64_t total_tokens = 0;
  std::size_t insertions = 0;
  std::int64_t inserted_image_tokens = 0;

  bool operator==(const TokenLedger&) const = default;
};

struct ConfidenceDelta {
  std::string trace_id;
  int step_index = 0;
  double before = 0.0;
  double after = 0.0;
  bool improved = false;
};

/// Rounds half-up to one decimal (percentages are reported this way).
double round_half_up_1(double value);

TokenLedger tally_tokens(const ReasoningTrace& trace);

/// 100 * (baseline - candidate) / baseline, one decimal.
/// Throws DivisionByZeroBaseline when baseline <= 0.
double reduction_ratio(double candidate_mean_tokens,
                       double baseline_mean_tokens);

struct InsertionStats {
  double mean_insertions = 0.0;
  double mean_image_tokens = 0.0;
};

/// Throws EmptyInput on an empty list.
InsertionStats insertion_stats(std::span<const ReasoningTrace> traces);

/// Before/after pairs for every insertion that was followed by another
/// step: `before` is the confidence that triggered the insertion, `after`
/// the confidence of the next step.
std::vector<ConfidenceDelta> confidence_deltas(const ReasoningTrace& trace);

struct ConfidenceDeltaStats {
  double improved_fraction = 0.0;
  double mean_delta = 0.0;
  std::size_t insertions = 0;

  double improved_percent() const {
    return round_half_up_1(100.0 * improved_fraction);
  }
};

/// Throws NoInsertions when no measurable insertion exists.
ConfidenceDeltaStats confidence_delta_stats(
    std::span<const ReasoningTrace> traces);

/// Percentage of positions whose prediction is present and equals gold.
/// Throws LengthMismatch.
double score_accuracy(std::span<const std::optional<std::string>> predictions,
                      std::span<const std::string> gold);

}  // namespace gatedcot
