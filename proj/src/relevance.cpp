#include "gatedcot/relevance.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <future>
#include <stdexcept>

#include "gatedcot/error.hpp"

namespace gatedcot {

namespace {

bool blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

std::vector<RelevanceScore> score_candidates(std::string_view rationale,
                                             const ObjectPool& pool,
                                             RelevanceProvider& provider,
                                             int step_index,
                                             const ScoringOptions& options) {
  if (pool.empty()) throw EmptyPool("no candidates to score");
  if (blank(rationale)) {
    throw std::invalid_argument("rationale is empty after trimming");
  }
  const ScoringQuery query{step_index, rationale};
  const auto& candidates = pool.candidates;
  std::vector<double> values(candidates.size());

  const std::size_t width = std::max<std::size_t>(1, options.max_concurrency);
  if (width == 1) {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      values[i] = provider.score(query, candidates[i]);
    }
  } else {
    for (std::size_t begin = 0; begin < candidates.size(); begin += width) {
      const std::size_t end = std::min(candidates.size(), begin + width);
      std::vector<std::future<double>> batch;
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(std::async(std::launch::async, [&, i] {
          return provider.score(query, candidates[i]);
        }));
      }
      // get() every future before rethrowing so no task outlives `query`.
      std::exception_ptr failure;
      for (std::size_t i = begin; i < end; ++i) {
        try {
          values[i] = batch[i - begin].get();
        } catch (...) {
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);
    }
  }

  std::vector<RelevanceScore> scores;
  scores.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NonFiniteScore("non-finite relevance score for candidate " +
                           candidates[i].candidate_id);
    }
    scores.push_back({candidates[i].candidate_id, values[i]});
  }
  return scores;
}

SelectedObject select_object(std::span<const RelevanceScore> scores,
                             const ObjectPool& pool) {
  if (scores.empty()) throw EmptyPool("no scored candidates to select from");
  if (scores.size() != pool.candidates.size()) {
    throw std::invalid_argument("scores do not align with the pool");
  }
  std::size_t best = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].candidate_id != pool.candidates[i].candidate_id) {
      throw std::invalid_argument("score " + std::to_string(i) +
                                  " belongs to " + scores[i].candidate_id +
                                  ", pool holds " +
                                  pool.candidates[i].candidate_id);
    }
    if (scores[i].score > scores[best].score) best = i;
  }
  SelectedObject selected;
  selected.candidate = pool.candidates[best];
  selected.pool_index = best;
  selected.score = scores[best].score;
  if (scores.size() >= 2) {
    std::optional<double> runner_up;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (i == best) continue;
      if (!runner_up || scores[i].score > *runner_up) runner_up = scores[i].score;
    }
    selected.runner_up_score = runner_up;
    selected.selection_margin = selected.score - *runner_up;
  }
  return selected;
}

}  // namespace gatedcot
