#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gatedcot/gating.hpp"
#include "gatedcot/metrics.hpp"
#include "gatedcot/objectpool.hpp"
#include "gatedcot/orchestrator.hpp"

namespace gatedcot {

// ---------------------------------------------------------------- datasets

enum class Split { Train, Val, Test };

const char* to_string(Split split);

struct AnswerOption {
  std::string label;
  std::string text;

  bool operator==(const AnswerOption&) const = default;
};

// Normalized multiple-choice item. JSONL schema, one object per line:
//   {"sample_id", "question", "image_path", "options": [{"label", "text"}],
//    "gold_label", "split": "train"|"val"|"test", "image_id"?}
// image_path is resolved against the dataset file's directory; image_id
// (the manifest key) defaults to sample_id.
struct Sample {
  std::string sample_id;
  std::string question;
  std::filesystem::path image_path;
  std::vector<AnswerOption> options;
  std::string gold_label;
  Split split = Split::Test;
  std::string image_id;

  std::vector<std::string> labels() const;
  bool operator==(const Sample&) const = default;
};

/// The question followed by one "(L) text" line per option.
std::string format_question(const Sample& sample);

/// Reads JSONL samples in file order; blank lines are skipped.
/// Throws DatasetParseError (with the 1-based line), DuplicateId, IoError.
std::vector<Sample> load_dataset(const std::filesystem::path& path);
std::vector<Sample> parse_dataset(std::istream& in,
                                  const std::filesystem::path& base_dir);

nlohmann::json sample_to_json(const Sample& sample);

enum class SourceFormat { M3CoT, ScienceQA, MME };

/// Throws ConfigError for unknown names ("m3cot", "scienceqa", "mme").
SourceFormat source_format_from_string(std::string_view name);

struct ConversionStats {
  std::size_t converted = 0;
  std::size_t skipped = 0;
};

/// Rewrites a source benchmark export as normalized JSONL.
///
/// m3cot: JSONL with id, question, choices[], answer (letter), image path
///   under "image" or "image_path", split.
/// scienceqa: JSON object keyed by problem id with question, choices[],
///   answer (index), image (file name), split; problems without an image
///   are skipped. Images are looked up as <image_root>/<id>/<image>.
/// mme: TSV rows "image_name<TAB>question<TAB>Yes|No" (optionally with a
///   leading category column); options are A=Yes, B=No.
///
/// Throws DatasetParseError, IoError.
ConversionStats convert_dataset(SourceFormat format,
                                const std::filesystem::path& input,
                                const std::filesystem::path& image_root,
                                std::ostream& out);

// ------------------------------------------------------------------ config

enum class Shots { ZeroShot, OneShot };
enum class BackendKind { Chat, Scripted };
enum class RelevanceKind { Embedding, Scripted };

struct BackendSettings {
  BackendKind kind = BackendKind::Chat;
  std::string url;
  std::string model;
  std::string api_key_env = "ICOT_API_KEY";
  std::int64_t timeout_ms = 120000;
  int max_retries = 2;
  std::int64_t backoff_ms = 500;
  std::int64_t full_image_tokens = 256;
  std::optional<double> temperature;
  // Scripted kind: file with per-sample backend scripts and score tables.
  std::filesystem::path script;
};

struct RelevanceSettings {
  RelevanceKind kind = RelevanceKind::Embedding;
  std::string text_url;
  std::string image_url;
  std::string model;
  std::int64_t max_in_flight = 4;
  std::size_t max_concurrency = 1;
};

struct PoolSettings {
  std::optional<std::filesystem::path> manifest;
  std::string segmentation_url;
  std::optional<std::filesystem::path> crop_dir;
  FilterOptions filter;
};

// Everything that determines a run. Relative paths in a config file are
// resolved against the file's directory.
struct RunConfig {
  GatingConfig gating;
  Shots shots = Shots::ZeroShot;
  std::optional<OneShotExemplar> exemplar;
  std::size_t max_steps = 8;
  std::size_t max_step_tokens = 256;
  std::size_t top_k = 5;
  std::optional<std::int64_t> seed = 0;
  std::size_t workers = 1;
  std::vector<std::string> stop_sequences{"\n\nStep", "\n\nAnswer"};
  std::optional<std::filesystem::path> template_path;
  BackendSettings backend;
  RelevanceSettings relevance;
  PoolSettings pool;
  std::filesystem::path runs_dir = "runs";

  /// Throws ConfigError for malformed input.
  static RunConfig from_json(const nlohmann::json& doc,
                             const std::filesystem::path& base_dir);
  /// Throws ConfigError (including for unreadable files).
  static RunConfig load(const std::filesystem::path& path);

  /// Canonical description of the run-determining settings. Output
  /// locations (runs_dir) and worker count are left out.
  nlohmann::json to_json() const;
  /// First 12 hex digits of the sha256 of the canonical to_json().
  std::string config_hash() const;

  /// Caps positive, tau valid, referenced files present, endpoints named.
  /// Throws ConfigError.
  void validate() const;

  TraceConfig trace_config() const;
};

/// tau rendered for humans and file names: "always", "never" or the value.
std::string tau_label(double tau);

enum class Policy { Gated, Always, Never };

const char* to_string(Policy policy);
/// Throws ConfigError for names other than gated, always, never.
Policy policy_from_string(std::string_view name);
/// Copy of `cfg` with tau replaced by the policy's sentinel (gated keeps
/// the configured tau).
RunConfig apply_policy(RunConfig cfg, Policy policy);

// ------------------------------------------------------------------- runs

struct SampleResult {
  std::string sample_id;
  std::string gold_label;
  std::optional<std::string> prediction;
  bool correct = false;
  Verdict verdict = Verdict::MaxStepsReached;
  std::size_t steps = 0;
  TokenLedger ledger;
  std::optional<std::string> fault;
  std::string trace_file;
};

struct RunReport {
  std::string run_id;
  std::string config_hash;
  double tau = 0.0;
  std::size_t sample_count = 0;
  double accuracy = 0.0;
  std::map<std::string, double> per_label_accuracy;
  std::map<std::string, std::size_t> verdicts;
  double mean_text_tokens = 0.0;
  double mean_image_tokens = 0.0;
  double mean_total_tokens = 0.0;
  InsertionStats insertions;
  std::optional<ConfidenceDeltaStats> confidence;
  std::vector<SampleResult> samples;
};

nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& doc);

struct RunOptions {
  // Cassettes live at <dir>/<sample_id>/cassette-<hash>.json.
  std::optional<std::filesystem::path> replay_dir;
  std::optional<std::filesystem::path> record_dir;
  // Write the run directory (traces, report, config) under cfg.runs_dir.
  bool write_run_dir = true;
};

struct RunResult {
  RunReport report;
  std::optional<std::filesystem::path> run_dir;
  // Ordered by sample_id.
  std::vector<ReasoningTrace> traces;
};

/// Evaluates every sample with run_trace on `cfg.workers` threads and folds
/// the results in sample_id order. Per-sample faults become trace verdicts;
/// only configuration problems throw (ConfigError).
RunResult run_benchmark(std::span<const Sample> dataset, const RunConfig& cfg,
                        const RunOptions& options = {});

/// Aggregates finished traces into a report (no I/O).
RunReport summarize_run(std::span<const Sample> dataset,
                        std::span<const ReasoningTrace> traces,
                        const RunConfig& cfg, std::string run_id);

struct SweepRow {
  double tau = 0.0;
  double accuracy = 0.0;
  double mean_insertions = 0.0;
  double mean_total_tokens = 0.0;
  std::optional<std::filesystem::path> run_dir;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  // Highest accuracy; ties go to the smallest tau.
  double best_tau = 0.0;
};

/// Parses "start:stop:step" (inclusive stop) or a comma list. Values are
/// snapped to multiples of 1e-9 so 0.1 steps land on 0.3, not
/// 0.30000000000000004. Throws ConfigError.
std::vector<double> parse_tau_grid(std::string_view spec);

/// One run per tau. Replay/record directories get a "tau-<value>"
/// subdirectory per grid point. Throws ConfigError on an empty grid.
SweepTable sweep_tau(std::span<const Sample> dataset, const RunConfig& base,
                     std::span<const double> grid,
                     const RunOptions& options = {});

nlohmann::json sweep_to_json(const SweepTable& table);

struct PolicyOutcome {
  Policy policy = Policy::Gated;
  RunReport report;
  std::optional<std::filesystem::path> run_dir;
};

struct Comparison {
  std::vector<PolicyOutcome> outcomes;
  // reduction_ratio(gated mean tokens, always mean tokens), when both ran.
  std::optional<double> gated_vs_always_reduction;
};

/// Runs each policy over the dataset. Replay/record directories get one
/// subdirectory per policy name. Throws ConfigError for fewer than two
/// policies or duplicates.
Comparison compare_policies(std::span<const Sample> dataset,
                            const RunConfig& cfg,
                            std::span<const Policy> policies,
                            const RunOptions& options = {});

nlohmann::json comparison_to_json(const Comparison& comparison);

/// Report of a finished run directory.
/// Throws IoError, HashMismatch, UnknownSchemaVersion.
RunReport read_run_report(const std::filesystem::path& run_dir);

/// Plain-text summary; with a baseline, adds the token reduction relative
/// to it.
std::string render_report(const RunReport& report,
                          const RunReport* baseline = nullptr);

/// Tab-separated per-trace table with a header row.
std::string render_trace_table(const RunReport& report);

}  // namespace gatedcot
