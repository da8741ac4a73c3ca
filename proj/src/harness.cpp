#include "gatedcot/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "gatedcot/cassette.hpp"
#include "gatedcot/codec.hpp"
#include "gatedcot/digest.hpp"
#include "gatedcot/embedding.hpp"
#include "gatedcot/error.hpp"
#include "gatedcot/mocks.hpp"
#include "gatedcot/segmentation.hpp"
#include "gatedcot/tracestore.hpp"

namespace gatedcot {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

fs::path resolve(const fs::path& base, const std::string& value) {
  fs::path p(value);
  if (p.is_relative()) p = base / p;
  return fs::absolute(p).lexically_normal();
}

void check_keys(const json& node, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& [key, value] : node.items()) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

double parse_tau(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "always") return kInf;
    if (s == "never") return 0.0;
    try {
      return real_from_json(j);
    } catch (const json::exception&) {
      throw ConfigError("tau must be a number, \"always\" or \"never\"");
    }
  }
  if (!j.is_number()) {
    throw ConfigError("tau must be a number, \"always\" or \"never\"");
  }
  return j.get<double>();
}

std::string sanitize(std::string_view id) {
  std::string out;
  for (char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' ||
                    c == '_' || c == '-';
    out += ok ? c : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

}  // namespace

std::string tau_label(double tau) {
  if (std::isinf(tau) && tau > 0) return "always";
  if (tau == 0.0) return "never";
  std::ostringstream s;
  s << std::setprecision(12) << tau;
  return s.str();
}

const char* to_string(Policy policy) {
  switch (policy) {
    case Policy::Gated:
      return "gated";
    case Policy::Always:
      return "always";
    case Policy::Never:
      return "never";
  }
  return "unknown";
}

Policy policy_from_string(std::string_view name) {
  if (name == "gated") return Policy::Gated;
  if (name == "always") return Policy::Always;
  if (name == "never") return Policy::Never;
  throw ConfigError("unknown policy '" + std::string(name) +
                    "' (expected gated, always or never)");
}

RunConfig apply_policy(RunConfig cfg, Policy policy) {
  if (policy == Policy::Always) cfg.gating.tau = kInf;
  if (policy == Policy::Never) cfg.gating.tau = 0.0;
  return cfg;
}

RunConfig RunConfig::from_json(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  check_keys(doc,
             {"tau", "max_insertions", "shots", "exemplar", "max_steps",
              "max_step_tokens", "top_k", "seed", "workers", "stop_sequences",
              "template", "backend", "relevance", "pool", "runs_dir"},
             "config");
  RunConfig cfg;
  try {
    if (doc.contains("tau")) cfg.gating.tau = parse_tau(doc["tau"]);
    if (doc.contains("max_insertions") && !doc["max_insertions"].is_null()) {
      cfg.gating.max_insertions_per_trace =
          doc["max_insertions"].get<std::size_t>();
    }
    if (doc.contains("shots")) {
      const json& shots = doc["shots"];
      const bool one = shots.is_number() ? shots.get<int>() == 1
                                         : shots.get<std::string>() == "one";
      const bool zero = shots.is_number() ? shots.get<int>() == 0
                                          : shots.get<std::string>() == "zero";
      if (!one && !zero) throw ConfigError("shots must be 0, 1, \"zero\" or \"one\"");
      cfg.shots = one ? Shots::OneShot : Shots::ZeroShot;
    }
    if (doc.contains("exemplar")) {
      const json& e = doc["exemplar"];
      check_keys(e, {"question", "reasoning", "image"}, "exemplar");
      OneShotExemplar ex;
      ex.question = e.at("question").get<std::string>();
      ex.reasoning = e.at("reasoning").get<std::string>();
      if (e.contains("image")) {
        ex.image = make_image_ref("exemplar",
                                  resolve(base_dir, e["image"].get<std::string>()));
      }
      cfg.exemplar = std::move(ex);
    }
    cfg.max_steps = doc.value("max_steps", cfg.max_steps);
    cfg.max_step_tokens = doc.value("max_step_tokens", cfg.max_step_tokens);
    cfg.top_k = doc.value("top_k", cfg.top_k);
    if (doc.contains("seed")) {
      cfg.seed = doc["seed"].is_null()
                     ? std::nullopt
                     : std::optional<std::int64_t>(doc["seed"].get<std::int64_t>());
    }
    cfg.workers = doc.value("workers", cfg.workers);
    cfg.stop_sequences = doc.value("stop_sequences", cfg.stop_sequences);
    if (doc.contains("template")) {
      cfg.template_path = resolve(base_dir, doc["template"].get<std::string>());
    }
    if (doc.contains("runs_dir")) {
      cfg.runs_dir = resolve(base_dir, doc["runs_dir"].get<std::string>());
    } else {
      cfg.runs_dir = resolve(base_dir, "runs");
    }

    if (doc.contains("backend")) {
      const json& b = doc["backend"];
      check_keys(b,
                 {"kind", "url", "model", "api_key_env", "timeout_ms",
                  "max_retries", "backoff_ms", "full_image_tokens",
                  "temperature", "script"},
                 "backend");
      const std::string kind = b.value("kind", "chat");
      if (kind == "chat") {
        cfg.backend.kind = BackendKind::Chat;
      } else if (kind == "scripted") {
        cfg.backend.kind = BackendKind::Scripted;
      } else {
        throw ConfigError("backend.kind must be chat or scripted");
      }
      cfg.backend.url = b.value("url", "");
      cfg.backend.model = b.value("model", "");
      cfg.backend.api_key_env = b.value("api_key_env", cfg.backend.api_key_env);
      cfg.backend.timeout_ms = b.value("timeout_ms", cfg.backend.timeout_ms);
      cfg.backend.max_retries = b.value("max_retries", cfg.backend.max_retries);
      cfg.backend.backoff_ms = b.value("backoff_ms", cfg.backend.backoff_ms);
      cfg.backend.full_image_tokens =
          b.value("full_image_tokens", cfg.backend.full_image_tokens);
      if (b.contains("temperature") && !b["temperature"].is_null()) {
        cfg.backend.temperature = b["temperature"].get<double>();
      }
      if (b.contains("script")) {
        cfg.backend.script = resolve(base_dir, b["script"].get<std::string>());
      }
    }

    if (doc.contains("relevance")) {
      const json& r = doc["relevance"];
      check_keys(r,
                 {"kind", "text_url", "image_url", "model", "max_in_flight",
                  "max_concurrency"},
                 "relevance");
      const std::string kind = r.value("kind", "embedding");
      if (kind == "embedding") {
        cfg.relevance.kind = RelevanceKind::Embedding;
      } else if (kind == "scripted") {
        cfg.relevance.kind = RelevanceKind::Scripted;
      } else {
        throw ConfigError("relevance.kind must be embedding or scripted");
      }
      cfg.relevance.text_url = r.value("text_url", "");
      cfg.relevance.image_url = r.value("image_url", "");
      cfg.relevance.model = r.value("model", "");
      cfg.relevance.max_in_flight =
          r.value("max_in_flight", cfg.relevance.max_in_flight);
      cfg.relevance.max_concurrency =
          r.value("max_concurrency", cfg.relevance.max_concurrency);
    }

    if (doc.contains("pool")) {
      const json& p = doc["pool"];
      check_keys(p, {"manifest", "segmentation_url", "crop_dir", "filter"},
                 "pool");
      if (p.contains("manifest")) {
        cfg.pool.manifest = resolve(base_dir, p["manifest"].get<std::string>());
      }
      cfg.pool.segmentation_url = p.value("segmentation_url", "");
      if (p.contains("crop_dir")) {
        cfg.pool.crop_dir = resolve(base_dir, p["crop_dir"].get<std::string>());
      }
      if (p.contains("filter")) {
        const json& f = p["filter"];
        check_keys(f,
                   {"min_area_fraction", "max_candidates", "overlap_threshold"},
                   "pool.filter");
        cfg.pool.filter.min_area_fraction =
            f.value("min_area_fraction", cfg.pool.filter.min_area_fraction);
        cfg.pool.filter.max_candidates =
            f.value("max_candidates", cfg.pool.filter.max_candidates);
        cfg.pool.filter.overlap_threshold =
            f.value("overlap_threshold", cfg.pool.filter.overlap_threshold);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) {
    throw ConfigError("config " + path.string() + " is not valid JSON");
  }
  return from_json(doc, path.parent_path());
}

json RunConfig::to_json() const {
  json j;
  j["tau"] = real_to_json(gating.tau);
  j["max_insertions"] = gating.max_insertions_per_trace
                            ? json(*gating.max_insertions_per_trace)
                            : json(nullptr);
  j["shots"] = shots == Shots::OneShot ? "one" : "zero";
  if (exemplar) {
    j["exemplar"] = {{"question", exemplar->question},
                     {"reasoning", exemplar->reasoning}};
    if (exemplar->image) j["exemplar"]["image"] = exemplar->image->path;
  }
  j["max_steps"] = max_steps;
  j["max_step_tokens"] = max_step_tokens;
  j["top_k"] = top_k;
  j["seed"] = seed ? json(*seed) : json(nullptr);
  j["stop_sequences"] = stop_sequences;
  if (template_path) j["template"] = template_path->generic_string();
  j["backend"] = {{"kind", backend.kind == BackendKind::Chat ? "chat" : "scripted"},
                  {"url", backend.url},
                  {"model", backend.model},
                  {"api_key_env", backend.api_key_env},
                  {"timeout_ms", backend.timeout_ms},
                  {"max_retries", backend.max_retries},
                  {"backoff_ms", backend.backoff_ms},
                  {"full_image_tokens", backend.full_image_tokens}};
  if (backend.temperature) j["backend"]["temperature"] = *backend.temperature;
  if (!backend.script.empty()) {
    j["backend"]["script"] = backend.script.generic_string();
  }
  j["relevance"] = {
      {"kind",
       relevance.kind == RelevanceKind::Embedding ? "embedding" : "scripted"},
      {"text_url", relevance.text_url},
      {"image_url", relevance.image_url},
      {"model", relevance.model},
      {"max_in_flight", relevance.max_in_flight},
      {"max_concurrency", relevance.max_concurrency}};
  json pool_json = {{"segmentation_url", pool.segmentation_url},
                    {"filter",
                     {{"min_area_fraction", pool.filter.min_area_fraction},
                      {"max_candidates", pool.filter.max_candidates},
                      {"overlap_threshold", pool.filter.overlap_threshold}}}};
  if (pool.manifest) pool_json["manifest"] = pool.manifest->generic_string();
  if (pool.crop_dir) pool_json["crop_dir"] = pool.crop_dir->generic_string();
  j["pool"] = std::move(pool_json);
  return j;
}

std::string RunConfig::config_hash() const {
  return sha256_hex(canonical_bytes(to_json())).substr(0, 12);
}

void RunConfig::validate() const {
  gating.validate();
  if (max_steps == 0) throw ConfigError("max_steps must be positive");
  if (max_step_tokens == 0) throw ConfigError("max_step_tokens must be positive");
  if (top_k < 2) throw ConfigError("top_k must be at least 2");
  if (workers == 0) throw ConfigError("workers must be positive");
  if (gating.max_insertions_per_trace && *gating.max_insertions_per_trace == 0) {
    throw ConfigError("max_insertions must be positive (use tau \"never\")");
  }
  if (relevance.max_concurrency == 0 || relevance.max_in_flight <= 0) {
    throw ConfigError("relevance concurrency limits must be positive");
  }
  if (backend.full_image_tokens <= 0) {
    throw ConfigError("backend.full_image_tokens must be positive");
  }
  if (backend.timeout_ms <= 0 || backend.max_retries < 0 ||
      backend.backoff_ms < 0) {
    throw ConfigError("backend timeout/retry settings out of range");
  }
  pool.filter.validate();

  auto require_file = [](const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) {
      throw ConfigError(what + " not found: " + p.string());
    }
  };
  if (shots == Shots::OneShot && !exemplar) {
    throw ConfigError("shots = one requires an exemplar");
  }
  if (exemplar && exemplar->image) {
    require_file(exemplar->image->path, "exemplar image");
  }
  if (template_path) require_file(*template_path, "prompt template");

  if (backend.kind == BackendKind::Chat) {
    if (backend.url.empty() || backend.model.empty()) {
      throw ConfigError("backend.url and backend.model are required");
    }
  } else {
    if (backend.script.empty()) {
      throw ConfigError("a scripted backend needs backend.script");
    }
    require_file(backend.script, "backend script");
    if (relevance.kind != RelevanceKind::Scripted) {
      throw ConfigError("a scripted backend requires scripted relevance");
    }
    if (!pool.manifest) {
      throw ConfigError("a scripted backend requires a manifest pool");
    }
  }
  if (relevance.kind == RelevanceKind::Embedding &&
      (relevance.text_url.empty() || relevance.image_url.empty())) {
    throw ConfigError("relevance.text_url and relevance.image_url are required");
  }
  if (relevance.kind == RelevanceKind::Scripted &&
      backend.kind != BackendKind::Scripted) {
    throw ConfigError("scripted relevance reads scores from backend.script");
  }
  if (pool.manifest) {
    require_file(*pool.manifest, "manifest");
  } else if (pool.segmentation_url.empty()) {
    throw ConfigError("pool needs a manifest or a segmentation_url");
  }
}

TraceConfig RunConfig::trace_config() const {
  TraceConfig tc;
  tc.gating = gating;
  tc.max_steps = max_steps;
  tc.max_step_tokens = max_step_tokens;
  tc.top_k = top_k;
  tc.stop_sequences = stop_sequences;
  tc.prompt = template_path ? PromptTemplate::load(*template_path)
                            : PromptTemplate::defaults();
  if (shots == Shots::OneShot) tc.exemplar = exemplar;
  tc.seed = seed;
  tc.scoring.max_concurrency = relevance.max_concurrency;
  tc.estimator.full_image_tokens = backend.full_image_tokens;
  return tc;
}

// ------------------------------------------------------------------ reports

namespace {

json sample_result_json(const SampleResult& r) {
  json j = {{"sample_id", r.sample_id},
            {"gold_label", r.gold_label},
            {"correct", r.correct},
            {"verdict", r.verdict},
            {"steps", r.steps},
            {"ledger", r.ledger},
            {"trace_file", r.trace_file}};
  j["prediction"] = r.prediction ? json(*r.prediction) : json(nullptr);
  if (r.fault) j["fault"] = *r.fault;
  return j;
}

SampleResult sample_result_from(const json& j) {
  SampleResult r;
  j.at("sample_id").get_to(r.sample_id);
  j.at("gold_label").get_to(r.gold_label);
  j.at("correct").get_to(r.correct);
  j.at("verdict").get_to(r.verdict);
  j.at("steps").get_to(r.steps);
  j.at("ledger").get_to(r.ledger);
  j.at("trace_file").get_to(r.trace_file);
  if (!j.at("prediction").is_null()) r.prediction = j["prediction"].get<std::string>();
  if (j.contains("fault")) r.fault = j["fault"].get<std::string>();
  return r;
}

}  // namespace

json report_to_json(const RunReport& report) {
  json samples = json::array();
  for (const auto& s : report.samples) samples.push_back(sample_result_json(s));
  json j = {{"run_id", report.run_id},
            {"config_hash", report.config_hash},
            {"tau", real_to_json(report.tau)},
            {"sample_count", report.sample_count},
            {"accuracy", report.accuracy},
            {"per_label_accuracy", report.per_label_accuracy},
            {"verdicts", report.verdicts},
            {"mean_text_tokens", report.mean_text_tokens},
            {"mean_image_tokens", report.mean_image_tokens},
            {"mean_total_tokens", report.mean_total_tokens},
            {"mean_insertions", report.insertions.mean_insertions},
            {"mean_inserted_image_tokens", report.insertions.mean_image_tokens},
            {"samples", std::move(samples)}};
  if (report.confidence) {
    j["confidence"] = {{"improved_fraction", report.confidence->improved_fraction},
                       {"improved_percent", report.confidence->improved_percent()},
                       {"mean_delta", report.confidence->mean_delta},
                       {"insertions", report.confidence->insertions}};
  } else {
    j["confidence"] = nullptr;
  }
  return j;
}

RunReport report_from_json(const json& j) {
  RunReport r;
  j.at("run_id").get_to(r.run_id);
  j.at("config_hash").get_to(r.config_hash);
  r.tau = real_from_json(j.at("tau"));
  j.at("sample_count").get_to(r.sample_count);
  j.at("accuracy").get_to(r.accuracy);
  j.at("per_label_accuracy").get_to(r.per_label_accuracy);
  j.at("verdicts").get_to(r.verdicts);
  j.at("mean_text_tokens").get_to(r.mean_text_tokens);
  j.at("mean_image_tokens").get_to(r.mean_image_tokens);
  j.at("mean_total_tokens").get_to(r.mean_total_tokens);
  j.at("mean_insertions").get_to(r.insertions.mean_insertions);
  j.at("mean_inserted_image_tokens").get_to(r.insertions.mean_image_tokens);
  if (!j.at("confidence").is_null()) {
    const json& c = j["confidence"];
    ConfidenceDeltaStats stats;
    c.at("improved_fraction").get_to(stats.improved_fraction);
    c.at("mean_delta").get_to(stats.mean_delta);
    c.at("insertions").get_to(stats.insertions);
    r.confidence = stats;
  }
  for (const auto& s : j.at("samples")) r.samples.push_back(sample_result_from(s));
  return r;
}

RunReport summarize_run(std::span<const Sample> dataset,
                        std::span<const ReasoningTrace> traces,
                        const RunConfig& cfg, std::string run_id) {
  std::map<std::string, const ReasoningTrace*> by_id;
  for (const auto& t : traces) by_id[t.trace_id] = &t;

  std::vector<const Sample*> ordered;
  for (const auto& s : dataset) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const Sample* a, const Sample* b) { return a->sample_id < b->sample_id; });

  RunReport report;
  report.run_id = std::move(run_id);
  report.config_hash = cfg.config_hash();
  report.tau = cfg.gating.tau;
  report.sample_count = ordered.size();

  std::vector<std::optional<std::string>> predictions;
  std::vector<std::string> gold;
  std::vector<ReasoningTrace> folded;
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_label;
  double text = 0.0;
  double image = 0.0;
  double total = 0.0;
  for (const Sample* s : ordered) {
    const auto it = by_id.find(s->sample_id);
    if (it == by_id.end()) {
      throw ConfigError("no trace for sample " + s->sample_id);
    }
    const ReasoningTrace& trace = *it->second;
    SampleResult r;
    r.sample_id = s->sample_id;
    r.gold_label = s->gold_label;
    r.prediction = trace.final_answer;
    r.correct = r.prediction && *r.prediction == s->gold_label;
    r.verdict = trace.verdict;
    r.steps = trace.steps.size();
    r.ledger = tally_tokens(trace);
    r.fault = trace.fault;
    predictions.push_back(r.prediction);
    gold.push_back(s->gold_label);
    auto& label = per_label[s->gold_label];
    ++label.second;
    if (r.correct) ++label.first;
    ++report.verdicts[to_string(trace.verdict)];
    text += static_cast<double>(r.ledger.text_tokens);
    image += static_cast<double>(r.ledger.image_tokens);
    total += static_cast<double>(r.ledger.total_tokens);
    report.samples.push_back(std::move(r));
    folded.push_back(trace);
  }

  report.accuracy = score_accuracy(predictions, gold);
  for (const auto& [label, counts] : per_label) {
    report.per_label_accuracy[label] = round_half_up_1(
        100.0 * static_cast<double>(counts.first) /
        static_cast<double>(counts.second));
  }
  if (!folded.empty()) {
    const double n = static_cast<double>(folded.size());
    report.mean_text_tokens = text / n;
    report.mean_image_tokens = image / n;
    report.mean_total_tokens = total / n;
    report.insertions = insertion_stats(folded);
    try {
      report.confidence = confidence_delta_stats(folded);
    } catch (const NoInsertions&) {
      report.confidence.reset();
    }
  }
  return report;
}

// --------------------------------------------------------------- execution

namespace {

struct ScriptEntry {
  BackendScript backend;
  ScriptedScorer::Table scores;
};

using ScriptBook = std::map<std::string, ScriptEntry>;

ScriptBook load_script_book(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open script " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  json doc = json::parse(buffer.str(), nullptr, false);
  if (doc.is_discarded()) throw ConfigError("script " + path.string() + " is not JSON");
  try {
    if (doc.contains("schema_version")) {
      doc = parse_document(buffer.str()).payload;
    }
  } catch (const Error& e) {
    throw ConfigError("script " + path.string() + ": " + e.what());
  }
  ScriptBook book;
  try {
    for (const auto& [id, entry] : doc.at("samples").items()) {
      ScriptEntry e;
      e.backend = entry.at("steps").is_array()
                      ? BackendScript{entry.at("steps").get<std::vector<ScriptedStep>>()}
                      : BackendScript{};
      e.backend.validate();
      if (entry.contains("scores")) {
        for (const auto& [step, table] : entry["scores"].items()) {
          const int step_index = std::stoi(step);
          for (const auto& [cid, score] : table.items()) {
            e.scores[{step_index, cid}] = real_from_json(score);
          }
        }
      }
      book.emplace(id, std::move(e));
    }
  } catch (const json::exception& e) {
    throw ConfigError("script " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument&) {
    throw ConfigError("script " + path.string() + ": score keys must be step numbers");
  }
  return book;
}

Cassette load_cassette(const fs::path& dir) {
  std::vector<fs::path> found;
  if (fs::is_directory(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("cassette-", 0) == 0 && entry.path().extension() == ".json") {
        found.push_back(entry.path());
      }
    }
  }
  if (found.size() != 1) {
    throw ConfigError("expected exactly one cassette in " + dir.string() +
                      ", found " + std::to_string(found.size()));
  }
  try {
    return read_document(found.front(), DocumentKind::Cassette)
        .payload.get<Cassette>();
  } catch (const json::exception& e) {
    throw ConfigError("cassette " + found.front().string() + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

void store_cassette(const Cassette& cassette, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("cassette-", 0) == 0) fs::remove(entry.path());
  }
  write_document(seal(DocumentKind::Cassette, json(cassette)), dir);
}

// Shared, read-only state of one run.
struct RunPlan {
  const RunConfig& cfg;
  const RunOptions& options;
  TraceConfig trace_config;
  json snapshot;
  std::optional<Manifest> manifest;
  std::optional<ScriptBook> scripts;
  std::shared_ptr<HttpTransport> network;
  std::string api_key;
};

ReasoningTrace failed_trace(const Sample& sample, const RunPlan& plan,
                            const std::string& fault) {
  ReasoningTrace t;
  t.trace_id = sample.sample_id;
  t.question = format_question(sample);
  t.source_image_id = sample.image_id;
  t.verdict = Verdict::BackendFault;
  t.fault = fault;
  t.config_snapshot = plan.snapshot;
  return t;
}

ReasoningTrace run_sample(const Sample& sample, const RunPlan& plan) {
  const RunConfig& cfg = plan.cfg;
  const ScriptEntry* script = nullptr;
  if (plan.scripts) {
    const auto it = plan.scripts->find(sample.sample_id);
    if (it == plan.scripts->end()) {
      return failed_trace(sample, plan,
                          "no script for sample " + sample.sample_id);
    }
    script = &it->second;
  }

  std::shared_ptr<HttpTransport> transport;
  if (plan.options.replay_dir) {
    transport = std::make_shared<ReplayTransport>(
        load_cassette(*plan.options.replay_dir / sanitize(sample.sample_id)));
  } else if (script) {
    transport = std::make_shared<ScriptedChatEndpoint>(
        script->backend, plan.trace_config.estimator);
  } else {
    transport = plan.network;
  }
  std::shared_ptr<RecordingTransport> recorder;
  if (plan.options.record_dir) {
    recorder = std::make_shared<RecordingTransport>(transport);
    transport = recorder;
  }

  RetryPolicy retry;
  retry.max_retries = cfg.backend.max_retries;
  retry.initial_backoff = std::chrono::milliseconds(cfg.backend.backoff_ms);

  ChatBackendConfig chat;
  chat.url = script ? "scripted://chat/completions" : cfg.backend.url;
  chat.model = script ? std::string("scripted") : cfg.backend.model;
  chat.api_key = plan.api_key;
  chat.timeout = std::chrono::milliseconds(cfg.backend.timeout_ms);
  chat.retry = retry;
  chat.temperature = cfg.backend.temperature;
  ChatCompletionsBackend backend(chat, transport, plan.trace_config.estimator);

  std::unique_ptr<RelevanceProvider> relevance;
  if (script) {
    relevance = std::make_unique<ScriptedScorer>(script->scores);
  } else {
    EmbeddingEndpoints endpoints;
    endpoints.text_url = cfg.relevance.text_url;
    endpoints.image_url = cfg.relevance.image_url;
    endpoints.model = cfg.relevance.model;
    endpoints.api_key = plan.api_key;
    endpoints.retry = retry;
    endpoints.max_in_flight = cfg.relevance.max_in_flight;
    relevance = std::make_unique<CosineRelevanceProvider>(
        std::make_shared<EmbeddingClient>(endpoints, transport));
  }

  const ImageRef image = make_image_ref(sample.image_id, sample.image_path);
  ObjectPool pool;
  pool.source_image_id = sample.image_id;
  if (plan.manifest) {
    const auto it = plan.manifest->find(sample.image_id);
    if (it != plan.manifest->end()) pool = it->second;
  } else {
    SegmentationEndpoint endpoint;
    endpoint.url = cfg.pool.segmentation_url;
    endpoint.api_key = plan.api_key;
    endpoint.timeout = std::chrono::milliseconds(cfg.backend.timeout_ms);
    HttpSegmentationProvider provider(endpoint, transport);
    try {
      pool = request_segmentation(image, provider, {retry, cfg.pool.crop_dir});
    } catch (const std::exception& e) {
      if (recorder) {
        store_cassette(recorder->cassette(),
                       *plan.options.record_dir / sanitize(sample.sample_id));
      }
      return failed_trace(sample, plan,
                          std::string("segmentation failed: ") + e.what());
    }
  }
  pool = filter_candidates(pool, cfg.pool.filter);

  TraceConfig tc = plan.trace_config;
  tc.labels = sample.labels();
  ReasoningTrace trace =
      run_trace(sample.sample_id, format_question(sample), image, pool, tc,
                {backend, *relevance}, plan.snapshot);

  if (recorder) {
    store_cassette(recorder->cassette(),
                   *plan.options.record_dir / sanitize(sample.sample_id));
  }
  return trace;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return s.str();
}

fs::path create_run_dir(const fs::path& runs_dir, const std::string& hash) {
  fs::create_directories(runs_dir);
  const std::string base = utc_timestamp() + "-" + hash;
  for (int attempt = 0;; ++attempt) {
    const fs::path dir =
        runs_dir / (attempt == 0 ? base : base + "-" + std::to_string(attempt));
    if (fs::create_directory(dir)) return dir;
  }
}

}  // namespace

RunResult run_benchmark(std::span<const Sample> dataset, const RunConfig& cfg,
                        const RunOptions& options) {
  cfg.validate();
  if (options.replay_dir && !fs::is_directory(*options.replay_dir)) {
    throw ConfigError("replay directory not found: " +
                      options.replay_dir->string());
  }

  RunPlan plan{cfg, options, cfg.trace_config(), cfg.to_json(), {}, {}, {}, {}};
  plan.trace_config.validate();
  try {
    if (cfg.pool.manifest) plan.manifest = load_manifest(*cfg.pool.manifest);
  } catch (const Error& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  if (cfg.backend.kind == BackendKind::Scripted) {
    plan.scripts = load_script_book(cfg.backend.script);
  } else if (!options.replay_dir) {
    plan.network = make_network_transport();
  }
  if (const char* key = std::getenv(cfg.backend.api_key_env.c_str())) {
    plan.api_key = key;
  }

  std::vector<ReasoningTrace> traces(dataset.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr config_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < dataset.size(); i = next++) {
      try {
        traces[i] = run_sample(dataset[i], plan);
      } catch (const ConfigError&) {
        std::lock_guard lock(error_mutex);
        if (!config_error) config_error = std::current_exception();
      } catch (const std::exception& e) {
        traces[i] = failed_trace(dataset[i], plan, e.what());
      }
    }
  };
  const std::size_t workers = std::min(cfg.workers, std::max<std::size_t>(1, dataset.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  if (config_error) std::rethrow_exception(config_error);

  std::sort(traces.begin(), traces.end(),
            [](const ReasoningTrace& a, const ReasoningTrace& b) {
              return a.trace_id < b.trace_id;
            });

  RunResult result;
  std::string run_id = utc_timestamp() + "-" + cfg.config_hash();
  if (options.write_run_dir) {
    result.run_dir = create_run_dir(cfg.runs_dir, cfg.config_hash());
    run_id = result.run_dir->filename().string();
  }
  result.report = summarize_run(dataset, traces, cfg, run_id);

  if (result.run_dir) {
    try {
      const fs::path traces_dir = *result.run_dir / "traces";
      fs::create_directories(traces_dir);
      for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto path =
            write_document(seal(DocumentKind::Trace, json(traces[i])),
                           traces_dir, sanitize(traces[i].trace_id));
        result.report.samples[i].trace_file =
            fs::relative(path, *result.run_dir).generic_string();
      }
      write_document_to(seal(DocumentKind::Report, report_to_json(result.report)),
                        *result.run_dir / "report.json");
      std::ofstream config(*result.run_dir / "config.json");
      config << cfg.to_json().dump(2) << '\n';
      if (!config) throw IoError("cannot write config.json");
    } catch (const fs::filesystem_error& e) {
      throw IoError(e.what());
    }
  }
  result.traces = std::move(traces);
  return result;
}

std::vector<double> parse_tau_grid(std::string_view spec) {
  auto number = [&](std::string_view text) {
    const std::string s(text);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + s + "' in grid");
    }
    if (used != s.size() || !std::isfinite(v)) {
      throw ConfigError("bad number '" + s + "' in grid");
    }
    return v;
  };
  auto snap = [](double v) { return std::round(v * 1e9) / 1e9; };

  std::vector<double> grid;
  if (spec.find(':') != std::string_view::npos) {
    const auto a = spec.find(':');
    const auto b = spec.find(':', a + 1);
    if (b == std::string_view::npos || spec.find(':', b + 1) != std::string_view::npos) {
      throw ConfigError("grid must be start:stop:step");
    }
    const double start = number(spec.substr(0, a));
    const double stop = number(spec.substr(a + 1, b - a - 1));
    const double step = number(spec.substr(b + 1));
    if (!(step > 0.0) || stop < start) {
      throw ConfigError("grid needs step > 0 and stop >= start");
    }
    const auto count =
        static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < count; ++i) {
      grid.push_back(snap(start + static_cast<double>(i) * step));
    }
  } else {
    std::size_t pos = 0;
    while (pos <= spec.size()) {
      const auto comma = spec.find(',', pos);
      const auto end = comma == std::string_view::npos ? spec.size() : comma;
      grid.push_back(snap(number(spec.substr(pos, end - pos))));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
  }
  if (grid.empty()) throw ConfigError("empty grid");
  return grid;
}

namespace {

RunOptions sub_options(const RunOptions& options, const std::string& name) {
  RunOptions sub = options;
  if (sub.replay_dir) sub.replay_dir = *sub.replay_dir / name;
  if (sub.record_dir) sub.record_dir = *sub.record_dir / name;
  return sub;
}

}  // namespace

SweepTable sweep_tau(std::span<const Sample> dataset, const RunConfig& base,
                     std::span<const double> grid, const RunOptions& options) {
  if (grid.empty()) throw ConfigError("tau grid is empty");
  SweepTable table;
  std::optional<std::size_t> best;
  for (double tau : grid) {
    RunConfig cfg = base;
    cfg.gating.tau = tau;
    const RunResult run =
        run_benchmark(dataset, cfg, sub_options(options, "tau-" + tau_label(tau)));
    table.rows.push_back({tau, run.report.accuracy,
                          run.report.insertions.mean_insertions,
                          run.report.mean_total_tokens, run.run_dir});
    const std::size_t i = table.rows.size() - 1;
    if (!best || table.rows[i].accuracy > table.rows[*best].accuracy ||
        (table.rows[i].accuracy == table.rows[*best].accuracy &&
         tau < table.rows[*best].tau)) {
      best = i;
    }
  }
  table.best_tau = table.rows[*best].tau;
  return table;
}

json sweep_to_json(const SweepTable& table) {
  json rows = json::array();
  for (const auto& r : table.rows) {
    json row = {{"tau", real_to_json(r.tau)},
                {"accuracy", r.accuracy},
                {"mean_insertions", r.mean_insertions},
                {"mean_total_tokens", r.mean_total_tokens}};
    if (r.run_dir) row["run_dir"] = r.run_dir->generic_string();
    rows.push_back(std::move(row));
  }
  return {{"rows", std::move(rows)}, {"best_tau", real_to_json(table.best_tau)}};
}

Comparison compare_policies(std::span<const Sample> dataset,
                            const RunConfig& cfg,
                            std::span<const Policy> policies,
                            const RunOptions& options) {
  if (policies.size() < 2) throw ConfigError("compare needs at least two policies");
  std::set<Policy> seen(policies.begin(), policies.end());
  if (seen.size() != policies.size()) throw ConfigError("duplicate policy");

  Comparison comparison;
  for (Policy policy : policies) {
    const RunResult run = run_benchmark(dataset, apply_policy(cfg, policy),
                                        sub_options(options, to_string(policy)));
    comparison.outcomes.push_back({policy, run.report, run.run_dir});
  }
  auto find = [&](Policy p) -> const RunReport* {
    for (const auto& o : comparison.outcomes) {
      if (o.policy == p) return &o.report;
    }
    return nullptr;
  };
  const RunReport* gated = find(Policy::Gated);
  const RunReport* always = find(Policy::Always);
  if (gated && always && always->mean_total_tokens > 0.0) {
    comparison.gated_vs_always_reduction =
        reduction_ratio(gated->mean_total_tokens, always->mean_total_tokens);
  }
  return comparison;
}

json comparison_to_json(const Comparison& comparison) {
  json outcomes = json::array();
  for (const auto& o : comparison.outcomes) {
    json entry = {{"policy", to_string(o.policy)},
                  {"tau", real_to_json(o.report.tau)},
                  {"accuracy", o.report.accuracy},
                  {"mean_total_tokens", o.report.mean_total_tokens},
                  {"mean_text_tokens", o.report.mean_text_tokens},
                  {"mean_image_tokens", o.report.mean_image_tokens},
                  {"mean_insertions", o.report.insertions.mean_insertions}};
    json ledgers = json::array();
    for (const auto& s : o.report.samples) ledgers.push_back(s.ledger);
    entry["ledgers"] = std::move(ledgers);
    if (o.run_dir) entry["run_dir"] = o.run_dir->generic_string();
    outcomes.push_back(std::move(entry));
  }
  json j = {{"policies", std::move(outcomes)}};
  j["gated_vs_always_reduction"] =
      comparison.gated_vs_always_reduction
          ? json(*comparison.gated_vs_always_reduction)
          : json(nullptr);
  return j;
}

RunReport read_run_report(const fs::path& run_dir) {
  const StoredDocument doc =
      read_document(run_dir / "report.json", DocumentKind::Report);
  try {
    return report_from_json(doc.payload);
  } catch (const json::exception& e) {
    throw HashMismatch(std::string("report payload is malformed: ") + e.what());
  }
}

std::string render_report(const RunReport& report, const RunReport* baseline) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "run            " << report.run_id << '\n'
      << "tau            " << tau_label(report.tau) << '\n'
      << "samples        " << report.sample_count << '\n'
      << "accuracy       " << report.accuracy << "%\n";
  for (const auto& [label, acc] : report.per_label_accuracy) {
    out << "  gold " << label << "       " << acc << "%\n";
  }
  out << std::setprecision(2)
      << "mean tokens    " << report.mean_total_tokens << " (text "
      << report.mean_text_tokens << ", image " << report.mean_image_tokens
      << ")\n"
      << "insertions     " << report.insertions.mean_insertions
      << " per sample, " << report.insertions.mean_image_tokens
      << " crop tokens per sample\n";
  if (report.confidence) {
    out << std::setprecision(1) << "confidence up  "
        << report.confidence->improved_percent() << "% of "
        << report.confidence->insertions << " insertions (mean delta "
        << std::setprecision(4) << report.confidence->mean_delta << ")\n";
  }
  out << "verdicts      ";
  for (const auto& [verdict, n] : report.verdicts) out << ' ' << verdict << '=' << n;
  out << '\n';
  if (baseline) {
    out << std::setprecision(1) << "vs " << baseline->run_id << ": ";
    if (baseline->mean_total_tokens > 0.0) {
      out << reduction_ratio(report.mean_total_tokens, baseline->mean_total_tokens)
          << "% fewer tokens";
    } else {
      out << "baseline has no tokens";
    }
    out << ", accuracy " << std::showpos
        << round_half_up_1(report.accuracy - baseline->accuracy) << std::noshowpos
        << " points\n";
  }
  return out.str();
}

std::string render_trace_table(const RunReport& report) {
  std::ostringstream out;
  out << "sample_id\tgold\tprediction\tcorrect\tverdict\tsteps\tinsertions\t"
         "text_tokens\timage_tokens\ttotal_tokens\n";
  for (const auto& s : report.samples) {
    out << s.sample_id << '\t' << s.gold_label << '\t'
        << s.prediction.value_or("-") << '\t' << (s.correct ? 1 : 0) << '\t'
        << to_string(s.verdict) << '\t' << s.steps << '\t' << s.ledger.insertions
        << '\t' << s.ledger.text_tokens << '\t' << s.ledger.image_tokens << '\t'
        << s.ledger.total_tokens << '\n';
  }
  return out.str();
}

}  // namespace gatedcot
