#include "gatedcot/confidence.hpp"

#include <stdexcept>
#include <string>

#include "gatedcot/error.hpp"

namespace gatedcot {

const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::StopSequence:
      return "stop_sequence";
    case StopReason::MaxTokens:
      return "max_tokens";
    case StopReason::EndOfAnswer:
      return "end_of_answer";
  }
  return "unknown";
}

double local_margin(const PositionLogits& position) {
  const auto& entries = position.top_entries;
  if (entries.size() < 2) {
    throw MarginUnavailable("position " +
                            std::to_string(position.position_index) +
                            " has " + std::to_string(entries.size()) +
                            " scored alternative(s); at least 2 are needed");
  }
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].log_score > entries[i - 1].log_score) {
      throw std::invalid_argument(
          "top entries at position " +
          std::to_string(position.position_index) +
          " are not sorted by descending score");
    }
  }
  return entries[0].log_score - entries[1].log_score;
}

double aggregate_confidence(std::span<const double> margins) {
  if (margins.empty()) {
    throw EmptyStep("cannot aggregate confidence over zero positions");
  }
  double sum = 0.0;
  for (double m : margins) sum += m;
  return sum / static_cast<double>(margins.size());
}

ConfidenceReport confidence_from_step(const StepRecord& step,
                                      std::size_t k_required) {
  if (k_required < 2) k_required = 2;
  if (step.position_logits.empty()) {
    throw EmptyStep("step " + std::to_string(step.step_index) +
                    " has no scored positions");
  }
  ConfidenceReport report;
  report.margins.reserve(step.position_logits.size());
  for (const auto& position : step.position_logits) {
    if (position.top_entries.size() < k_required) {
      throw MarginUnavailable(
          "step " + std::to_string(step.step_index) + " position " +
          std::to_string(position.position_index) + " has " +
          std::to_string(position.top_entries.size()) + " of " +
          std::to_string(k_required) + " required alternatives");
    }
    report.margins.push_back(local_margin(position));
  }
  report.aggregate = aggregate_confidence(report.margins);
  report.position_count = report.margins.size();
  return report;
}

}  // namespace gatedcot
