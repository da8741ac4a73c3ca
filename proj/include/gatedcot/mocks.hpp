#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gatedcot/backend.hpp"
#include "gatedcot/http.hpp"
#include "gatedcot/relevance.hpp"
#include "gatedcot/segmentation.hpp"

namespace gatedcot {

struct ScriptedFailure {
  int status = 503;
  std::string message;

  bool operator==(const ScriptedFailure&) const = default;
};

// One scripted generation. Confidence is given either as per-token margins
// (or one flat margin) or as explicit (top-1, top-2) log-score pairs.
struct ScriptedStep {
  std::string text;
  // Token split of `text`; derived with tokenize_for_script when empty.
  std::vector<std::string> tokens;
  std::vector<double> margins;
  std::optional<double> flat_margin;
  std::vector<std::pair<double, double>> top_two;
  // Appended after the text, as if the model went on to emit it.
  std::optional<std::string> stop_marker;
  std::optional<StopReason> stop_reason;
  std::optional<Usage> usage;
  // Alternatives served per position (1 simulates a top-1-only endpoint).
  std::size_t alternatives = 2;
  // Wire emulation only: HTTP failures returned before this step succeeds.
  std::vector<ScriptedFailure> failures;
  // At most one entry: served instead of this step when a crop was
  // interleaved after the previous assistant turn.
  std::vector<ScriptedStep> after_insertion;

  const ScriptedStep& variant(bool inserted) const {
    return inserted && !after_insertion.empty() ? after_insertion.front() : *this;
  }
  bool operator==(const ScriptedStep&) const = default;
};

struct BackendScript {
  std::vector<ScriptedStep> steps;

  /// Throws ConfigError when a step is inconsistent (negative margin, margin
  /// count differing from token count, top-2 above top-1).
  void validate() const;
  bool operator==(const BackendScript&) const = default;
};

/// Splits text into tokens that each begin with their leading whitespace:
/// "The rock\n\nStep" -> {"The", " rock", "\n\nStep"}.
std::vector<std::string> tokenize_for_script(std::string_view text);

/// Generated positions of one scripted step, including `stop_marker`
/// tokens. Margin m becomes the pair (0, -m) so the margin is exact.
std::vector<PositionLogits> scripted_positions(const ScriptedStep& step,
                                               std::size_t top_k);

// Direct GenerationBackend over a script; one cursor per instance.
class ScriptedBackend final : public GenerationBackend {
 public:
  explicit ScriptedBackend(BackendScript script, TokenEstimator estimator = {});

  /// Throws ScriptExhausted once every scripted step was served.
  StepRecord generate_step(const GenerationRequest& request) override;
  std::size_t calls() const { return cursor_; }

 private:
  BackendScript script_;
  TokenEstimator estimator_;
  std::size_t cursor_ = 0;
};

// Emulates a chat-completions endpoint (vLLM flavour: server-side stop
// handling, `stop_reason`, usage with prompt_tokens_details.image_tokens)
// so the real wire client can be exercised, recorded and replayed.
// Image tokens are billed per 28x28 pixel patch.
class ScriptedChatEndpoint final : public HttpTransport {
 public:
  explicit ScriptedChatEndpoint(BackendScript script,
                                TokenEstimator estimator = {});

  HttpResponse send(const HttpRequest& request) override;
  std::size_t calls() const;

  static constexpr std::int64_t kPixelsPerImageToken = 28 * 28;

 private:
  BackendScript script_;
  TokenEstimator estimator_;
  mutable std::mutex mutex_;
  std::size_t cursor_ = 0;
  std::size_t failures_served_ = 0;
  std::size_t calls_ = 0;
};

// Relevance lookup keyed by (step index, candidate id).
class ScriptedScorer final : public RelevanceProvider {
 public:
  using Table = std::map<std::pair<int, std::string>, double>;
  explicit ScriptedScorer(Table table);

  /// Throws ScriptMiss for keys absent from the table.
  double score(const ScoringQuery& query,
               const ObjectCandidate& candidate) override;

 private:
  Table table_;
};

class ScriptedSegmentation final : public SegmentationProvider {
 public:
  explicit ScriptedSegmentation(std::vector<SegmentationRegion> regions,
                                int unavailable_calls = 0,
                                bool reject = false);

  std::vector<SegmentationRegion> segment(
      const std::string& image_id,
      const std::vector<unsigned char>& bytes) override;
  int calls() const { return calls_.load(); }

 private:
  std::vector<SegmentationRegion> regions_;
  int unavailable_calls_;
  bool reject_;
  std::atomic<int> calls_{0};
};

}  // namespace gatedcot
