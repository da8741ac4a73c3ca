#include "gatedcot/gating.hpp"

#include <cmath>
#include <stdexcept>

#include "gatedcot/error.hpp"

namespace gatedcot {

void GatingConfig::validate() const {
  if (std::isnan(tau)) throw ConfigError("tau must not be NaN");
  if (std::isinf(tau) && tau < 0) {
    throw ConfigError("tau must not be -infinity");
  }
}

bool GatingConfig::outside_search_range() const {
  if (std::isinf(tau) && tau > 0) return false;
  return tau < 0.0 || tau > 1.0;
}

const char* to_string(GatingReason reason) {
  switch (reason) {
    case GatingReason::BelowThreshold:
      return "below_threshold";
    case GatingReason::AtOrAboveThreshold:
      return "at_or_above_threshold";
    case GatingReason::InsertionBudgetExhausted:
      return "insertion_budget_exhausted";
    case GatingReason::EmptyCandidatePool:
      return "empty_candidate_pool";
  }
  return "unknown";
}

GatingDecision decide_insertion(double confidence, const GatingConfig& config,
                                std::size_t insertions_so_far) {
  if (!(confidence >= 0.0)) {
    throw std::invalid_argument("step confidence must be a number >= 0");
  }
  GatingDecision decision;
  decision.confidence = confidence;
  decision.tau_used = config.tau;
  if (!(confidence < config.tau)) {
    decision.reason = GatingReason::AtOrAboveThreshold;
    return decision;
  }
  if (config.max_insertions_per_trace &&
      insertions_so_far >= *config.max_insertions_per_trace) {
    decision.reason = GatingReason::InsertionBudgetExhausted;
    return decision;
  }
  decision.insert = true;
  decision.reason = GatingReason::BelowThreshold;
  return decision;
}

std::vector<SweepCount> sweep_insertion_counts(
    std::span<const std::vector<double>> confidence_sequences,
    std::span<const double> tau_grid) {
  std::vector<SweepCount> table;
  table.reserve(tau_grid.size());
  const GatingConfig unlimited{};
  for (double tau : tau_grid) {
    GatingConfig config = unlimited;
    config.tau = tau;
    SweepCount row{tau, 0};
    for (const auto& sequence : confidence_sequences) {
      for (double c : sequence) {
        if (decide_insertion(c, config, 0).insert) ++row.total_insertions;
      }
    }
    table.push_back(row);
  }
  return table;
}

}  // namespace gatedcot
