#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace gatedcot {

// Threshold rule for visual-thought insertion. The next step receives a crop
// when the current step confidence is strictly below `tau`.
//
// tau = +infinity is the "always insert" sentinel; tau = 0 never inserts
// because step confidences are non-negative.
struct GatingConfig {
  double tau = 0.2;
  // nullopt means unlimited.
  std::optional<std::size_t> max_insertions_per_trace;

  /// Throws ConfigError when tau is NaN or -infinity.
  void validate() const;
  /// True when tau lies outside the [0, 1] search range (allowed, but
  /// worth a warning). The +infinity sentinel is not flagged.
  bool outside_search_range() const;

  bool operator==(const GatingConfig&) const = default;
};

enum class GatingReason {
  BelowThreshold,
  AtOrAboveThreshold,
  InsertionBudgetExhausted,
  EmptyCandidatePool,
};

const char* to_string(GatingReason reason);

struct GatingDecision {
  bool insert = false;
  double confidence = 0.0;
  double tau_used = 0.0;
  GatingReason reason = GatingReason::AtOrAboveThreshold;

  bool operator==(const GatingDecision&) const = default;
};

GatingDecision decide_insertion(double confidence, const GatingConfig& config,
                                std::size_t insertions_so_far);

struct SweepCount {
  double tau = 0.0;
  std::size_t total_insertions = 0;
};

/// Insertions over all sequences for each tau in `tau_grid`, with an
/// unlimited budget. Counts are non-decreasing when the grid is ascending.
std::vector<SweepCount> sweep_insertion_counts(
    std::span<const std::vector<double>> confidence_sequences,
    std::span<const double> tau_grid);

}  // namespace gatedcot
