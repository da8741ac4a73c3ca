#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gatedcot/backend.hpp"
#include "gatedcot/confidence.hpp"
#include "gatedcot/gating.hpp"
#include "gatedcot/objectpool.hpp"
#include "gatedcot/relevance.hpp"

namespace gatedcot {

// Prompt text around the reasoning loop. Templates may use the slots
// {question}, {history}, {inserted_image} and {step_index}.
//
// {inserted_image} expands to `inserted_image_note` when a crop was placed
// before the prompt and to nothing otherwise; the crop itself is always
// attached directly after the latest rationale.
struct PromptTemplate {
  std::string system;
  std::string initial_user;
  std::string continue_prompt;
  // Used instead of continue_prompt after a step stopped at `answer_stop`.
  std::string answer_prompt;
  std::string inserted_image_note;
  std::string answer_stop = "\n\nAnswer";

  static PromptTemplate defaults();
  /// Reads a JSON object with any subset of the fields above; missing
  /// fields keep their defaults. Throws ConfigError.
  static PromptTemplate load(const std::filesystem::path& path);

  bool operator==(const PromptTemplate&) const = default;
};

struct SlotValues {
  std::string_view question;
  std::string_view history;
  bool inserted_image = false;
  int step_index = 1;
};

/// Replaces the known slots in `text`; unknown braces are left alone.
std::string expand_template(std::string_view text,
                            const PromptTemplate& prompt,
                            const SlotValues& slots);

struct OneShotExemplar {
  std::string question;
  std::string reasoning;
  std::optional<ImageRef> image;

  bool operator==(const OneShotExemplar&) const = default;
};

struct TraceConfig {
  GatingConfig gating;
  std::size_t max_steps = 8;
  std::size_t max_step_tokens = 256;
  std::size_t top_k = 5;
  std::vector<std::string> stop_sequences{"\n\nStep", "\n\nAnswer"};
  std::vector<std::string> labels{"A", "B", "C", "D", "E"};
  PromptTemplate prompt = PromptTemplate::defaults();
  std::optional<OneShotExemplar> exemplar;
  std::optional<std::int64_t> seed;
  ScoringOptions scoring;
  TokenEstimator estimator;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

struct TraceProviders {
  GenerationBackend& backend;
  RelevanceProvider& relevance;
};

// Everything recorded for one reasoning step t.
struct TraceStep {
  StepRecord step;
  ConfidenceReport confidence;
  GatingDecision gating;
  // Present iff gating.insert is true (which implies a non-empty pool).
  std::optional<SelectedObject> selected;
  std::vector<RelevanceScore> scores;
  // Index of the inserted crop in the generation context.
  std::optional<std::size_t> insertion_position;
  // Image tokens attributed to the inserted crop.
  std::int64_t inserted_image_tokens = 0;
  // The step produced no scored positions; confidence was taken as 0.
  bool empty_step = false;
  // Scorer failure that cancelled an insertion.
  std::optional<std::string> fault;

  bool operator==(const TraceStep&) const = default;
};

enum class Verdict { Answered, MaxStepsReached, Truncated, BackendFault };

const char* to_string(Verdict verdict);

struct ReasoningTrace {
  std::string trace_id;
  std::string question;
  std::string source_image_id;
  std::vector<TraceStep> steps;
  std::optional<std::string> final_answer;
  Verdict verdict = Verdict::MaxStepsReached;
  std::optional<std::string> fault;
  nlohmann::json config_snapshot;

  std::size_t insertion_count() const;
  bool operator==(const ReasoningTrace&) const = default;
};

/// First turn(s): system prompt, optional worked exemplar, then the
/// question followed by the original image.
Context initial_context(const PromptTemplate& prompt,
                        std::string_view question, const ImageRef& original,
                        const std::optional<OneShotExemplar>& exemplar);

/// Appends the rationale of `step` as an assistant turn.
void append_rationale(Context& context, const StepRecord& step);

struct InterleaveArgs {
  const PromptTemplate& prompt;
  std::string_view question;
  std::string_view history;
  int next_step_index = 2;
  bool answer_turn = false;
};

/// Adds the next user turn: the selected crop (when given) immediately after
/// the latest rationale, then the continue or answer prompt. Returns the
/// context index of the inserted crop.
std::optional<std::size_t> interleave(Context& context,
                                      const SelectedObject* selected,
                                      const InterleaveArgs& args);

/// Label from the last "Answer: (X)" / "Answer: X" match, else from a final
/// standalone "(X)". Only labels in `label_set` are accepted.
std::optional<std::string> extract_answer(
    std::string_view text, std::span<const std::string> label_set);

/// The confidence-gated loop: generate a step, score its confidence, gate,
/// and when gated select the most relevant crop and interleave it before the
/// next step. Backend failures end the trace with a verdict instead of
/// throwing.
ReasoningTrace run_trace(std::string trace_id, std::string_view question,
                         const ImageRef& image, const ObjectPool& pool,
                         const TraceConfig& config,
                         const TraceProviders& providers,
                         nlohmann::json config_snapshot = {});

}  // namespace gatedcot
