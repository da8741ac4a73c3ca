#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gatedcot/objectpool.hpp"

namespace gatedcot {

struct RelevanceScore {
  std::string candidate_id;
  double score = 0.0;

  bool operator==(const RelevanceScore&) const = default;
};

struct SelectedObject {
  ObjectCandidate candidate;
  std::size_t pool_index = 0;
  double score = 0.0;
  std::optional<double> runner_up_score;
  std::optional<double> selection_margin;

  bool operator==(const SelectedObject&) const = default;
};

struct ScoringQuery {
  int step_index = 1;
  std::string_view rationale;
};

// Cross-modal relevance between the current rationale and one candidate.
// Implementations must be callable concurrently.
class RelevanceProvider {
 public:
  virtual ~RelevanceProvider() = default;
  virtual double score(const ScoringQuery& query,
                       const ObjectCandidate& candidate) = 0;
};

struct ScoringOptions {
  // Candidates of one step scored in parallel; 1 scores sequentially.
  std::size_t max_concurrency = 1;
};

/// One score per candidate, in pool order.
/// Throws EmptyPool, std::invalid_argument on a blank rationale, and
/// NonFiniteScore when the provider returns NaN or infinity.
std::vector<RelevanceScore> score_candidates(std::string_view rationale,
                                             const ObjectPool& pool,
                                             RelevanceProvider& provider,
                                             int step_index = 1,
                                             const ScoringOptions& options = {});

/// Highest-scoring candidate; ties go to the earliest pool position.
/// Throws EmptyPool when `scores` is empty and std::invalid_argument when
/// scores and pool are not aligned.
SelectedObject select_object(std::span<const RelevanceScore> scores,
                             const ObjectPool& pool);

}  // namespace gatedcot
