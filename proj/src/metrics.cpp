#include "gatedcot/metrics.hpp"

#include <cmath>

#include "gatedcot/error.hpp"

namespace gatedcot {

double round_half_up_1(double value) {
  // The 1e-9 nudge keeps exact halves that floating point lands just below
  // (e.g. 0.05 * 100 * 10) on the upper side.
  return std::floor(value * 10.0 + 0.5 + 1e-9) / 10.0;
}

TokenLedger tally_tokens(const ReasoningTrace& trace) {
  TokenLedger ledger;
  ledger.trace_id = trace.trace_id;
  for (const auto& entry : trace.steps) {
    const Usage& u = entry.step.usage;
    ledger.text_tokens += u.prompt_text_tokens + u.completion_tokens;
    ledger.image_tokens += u.prompt_image_tokens;
    if (entry.selected) {
      ++ledger.insertions;
      ledger.inserted_image_tokens += entry.inserted_image_tokens;
    }
  }
  // A crop interleaved after the last step never reached a prompt; it is
  // billed at its attributed cost so the final context is fully accounted.
  if (!trace.steps.empty() && trace.steps.back().selected) {
    ledger.image_tokens += trace.steps.back().inserted_image_tokens;
  }
  ledger.total_tokens = ledger.text_tokens + ledger.image_tokens;
  return ledger;
}

double reduction_ratio(double candidate_mean_tokens,
                       double baseline_mean_tokens) {
  if (!(baseline_mean_tokens > 0.0)) {
    throw DivisionByZeroBaseline("baseline token mean must be positive");
  }
  return round_half_up_1(100.0 *
                         (baseline_mean_tokens - candidate_mean_tokens) /
                         baseline_mean_tokens);
}

InsertionStats insertion_stats(std::span<const ReasoningTrace> traces) {
  if (traces.empty()) throw EmptyInput("no traces");
  double insertions = 0.0;
  double image_tokens = 0.0;
  for (const auto& trace : traces) {
    const TokenLedger ledger = tally_tokens(trace);
    insertions += static_cast<double>(ledger.insertions);
    image_tokens += static_cast<double>(ledger.inserted_image_tokens);
  }
  const double n = static_cast<double>(traces.size());
  return {insertions / n, image_tokens / n};
}

std::vector<ConfidenceDelta> confidence_deltas(const ReasoningTrace& trace) {
  std::vector<ConfidenceDelta> out;
  for (std::size_t i = 0; i + 1 < trace.steps.size(); ++i) {
    const auto& step = trace.steps[i];
    if (!step.selected) continue;
    const double before = step.confidence.aggregate;
    const double after = trace.steps[i + 1].confidence.aggregate;
    out.push_back({trace.trace_id, step.step.step_index, before, after,
                   after > before});
  }
  return out;
}

ConfidenceDeltaStats confidence_delta_stats(
    std::span<const ReasoningTrace> traces) {
  ConfidenceDeltaStats stats;
  std::size_t improved = 0;
  double delta_sum = 0.0;
  for (const auto& trace : traces) {
    for (const auto& d : confidence_deltas(trace)) {
      ++stats.insertions;
      if (d.improved) ++improved;
      delta_sum += d.after - d.before;
    }
  }
  if (stats.insertions == 0) {
    throw NoInsertions("no insertion was followed by another step");
  }
  const double n = static_cast<double>(stats.insertions);
  stats.improved_fraction = static_cast<double>(improved) / n;
  stats.mean_delta = delta_sum / n;
  return stats;
}

double score_accuracy(std::span<const std::optional<std::string>> predictions,
                      std::span<const std::string> gold) {
  if (predictions.size() != gold.size()) {
    throw LengthMismatch(std::to_string(predictions.size()) +
                         " predictions for " + std::to_string(gold.size()) +
                         " gold labels");
  }
  if (gold.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predictions[i] && *predictions[i] == gold[i]) ++correct;
  }
  return round_half_up_1(100.0 * static_cast<double>(correct) /
                         static_cast<double>(gold.size()));
}

}  // namespace gatedcot
