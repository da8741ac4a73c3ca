#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gatedcot/step.hpp"

namespace gatedcot {

struct ConfidenceReport {
  std::vector<double> margins;
  double aggregate = 0.0;
  std::size_t position_count = 0;

  bool operator==(const ConfidenceReport&) const = default;
};

/// Gap between the best and runner-up score at one decoding position.
///
/// Works on raw logits or on served log-probabilities alike: log-softmax
/// subtracts the same normalizer from every entry, so the top-2 gap is the
/// same number. Throws MarginUnavailable when fewer than two entries were
/// served, and std::invalid_argument when the entries are not sorted best
/// first.
double local_margin(const PositionLogits& position);

/// Mean of the per-position margins. Throws EmptyStep on an empty list.
double aggregate_confidence(std::span<const double> margins);

/// Margins and step confidence for every counted position of `step`.
/// Positions listed in step.excluded_positions never contribute.
ConfidenceReport confidence_from_step(const StepRecord& step,
                                      std::size_t k_required = 2);

}  // namespace gatedcot
