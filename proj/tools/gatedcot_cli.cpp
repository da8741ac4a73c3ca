// gatedcot: run, sweep and compare confidence-gated visual reasoning over a
// normalized dataset; convert benchmark exports; inspect run reports.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error,
// 3 dataset error.

#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "gatedcot/error.hpp"
#include "gatedcot/harness.hpp"
#include "gatedcot/tracestore.hpp"

namespace {

using namespace gatedcot;
namespace fs = std::filesystem;

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDataset = 3;

struct DatasetFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<Sample> dataset_or_fail(const fs::path& path) {
  try {
    return load_dataset(path);
  } catch (const DatasetParseError& e) {
    throw DatasetFailure(path.string() + ": " + e.what());
  } catch (const DuplicateId& e) {
    throw DatasetFailure(path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw DatasetFailure(e.what());
  }
}

double parse_tau_flag(const std::string& text) {
  if (text == "always") return std::numeric_limits<double>::infinity();
  if (text == "never") return 0.0;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || std::isnan(v)) {
    throw ConfigError("--tau expects a number, always or never");
  }
  return v;
}

struct CommonArgs {
  std::string dataset;
  std::string config;
  std::string replay;
  std::string record;
  std::string runs_dir;
  std::size_t workers = 0;
  bool json_out = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--dataset", args.dataset, "normalized JSONL dataset")
      ->required();
  cmd->add_option("--config", args.config, "run configuration (JSON)")
      ->required();
  cmd->add_option("--replay", args.replay, "replay cassettes from DIR");
  cmd->add_option("--record", args.record, "record cassettes into DIR");
  cmd->add_option("--workers", args.workers, "override the worker count");
  cmd->add_option("--runs-dir", args.runs_dir, "override where run directories go");
  cmd->add_flag("--json", args.json_out, "print machine-readable output");
}

RunOptions run_options(const CommonArgs& args) {
  if (!args.replay.empty() && !args.record.empty()) {
    throw ConfigError("--replay and --record are mutually exclusive");
  }
  RunOptions options;
  if (!args.replay.empty()) options.replay_dir = args.replay;
  if (!args.record.empty()) options.record_dir = args.record;
  return options;
}

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = RunConfig::load(args.config);
  if (args.workers > 0) cfg.workers = args.workers;
  if (!args.runs_dir.empty()) cfg.runs_dir = args.runs_dir;
  return cfg;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence-gated visual reasoning runner"};
  app.require_subcommand(1);

  CommonArgs run_args;
  std::string tau_text;
  std::string policy_text;
  auto* run = app.add_subcommand("run", "evaluate one configuration");
  add_common(run, run_args);
  auto* tau_opt = run->add_option("--tau", tau_text, "threshold, always or never");
  run->add_option("--policy", policy_text, "gated, always or never")
      ->excludes(tau_opt);

  CommonArgs sweep_args;
  std::string grid_text = "0.1:1.0:0.1";
  auto* sweep = app.add_subcommand("sweep", "one run per tau value");
  add_common(sweep, sweep_args);
  sweep->add_option("--grid", grid_text, "start:stop:step or a comma list")
      ->capture_default_str();

  CommonArgs compare_args;
  std::string policies_text = "gated,always,never";
  auto* compare = app.add_subcommand("compare", "run several insertion policies");
  add_common(compare, compare_args);
  compare->add_option("--policies", policies_text, "comma-separated policies")
      ->capture_default_str();

  std::string from_text;
  std::string convert_input;
  std::string image_root;
  std::string convert_output;
  auto* convert = app.add_subcommand(
      "convert-dataset", "rewrite a benchmark export as normalized JSONL");
  convert->add_option("--from", from_text, "m3cot, scienceqa or mme")->required();
  convert->add_option("--input", convert_input, "source file")->required();
  convert->add_option("--image-root", image_root, "directory holding the images")
      ->required();
  convert->add_option("--output", convert_output, "JSONL output (default stdout)");

  std::string report_run;
  std::string report_baseline;
  bool report_table = false;
  auto* report = app.add_subcommand("report", "summarize a run directory");
  report->add_option("--run", report_run, "run directory")->required();
  report->add_option("--baseline", report_baseline, "baseline run directory");
  report->add_flag("--table", report_table, "per-trace TSV instead of a summary");

  std::string seal_kind;
  std::string seal_input;
  std::string seal_output;
  auto* seal_cmd = app.add_subcommand(
      "seal", "wrap a JSON payload as a hashed, versioned document");
  seal_cmd->add_option("--kind", seal_kind,
                       "trace, cassette, report, manifest or script")
      ->required();
  seal_cmd->add_option("--input", seal_input, "payload JSON")->required();
  seal_cmd->add_option("--output", seal_output, "output file")->required();

  std::string verify_path;
  auto* verify = app.add_subcommand("verify", "check a stored document");
  verify->add_option("path", verify_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      RunConfig cfg = load_config(run_args);
      if (!tau_text.empty()) cfg.gating.tau = parse_tau_flag(tau_text);
      if (!policy_text.empty()) {
        cfg = apply_policy(cfg, policy_from_string(policy_text));
      }
      const auto samples = dataset_or_fail(run_args.dataset);
      const RunResult result =
          run_benchmark(samples, cfg, run_options(run_args));
      if (run_args.json_out) {
        std::cout << report_to_json(result.report).dump(2) << '\n';
      } else {
        std::cout << render_report(result.report);
        if (result.run_dir) std::cout << "written to     " << result.run_dir->string() << '\n';
      }
    } else if (*sweep) {
      const RunConfig cfg = load_config(sweep_args);
      const auto grid = parse_tau_grid(grid_text);
      const auto samples = dataset_or_fail(sweep_args.dataset);
      const SweepTable table =
          sweep_tau(samples, cfg, grid, run_options(sweep_args));
      if (sweep_args.json_out) {
        std::cout << sweep_to_json(table).dump(2) << '\n';
      } else {
        std::cout << "tau\taccuracy\tmean_insertions\tmean_tokens\n";
        for (const auto& row : table.rows) {
          std::cout << tau_label(row.tau) << '\t' << row.accuracy << '\t'
                    << row.mean_insertions << '\t' << row.mean_total_tokens
                    << '\n';
        }
        std::cout << "best tau: " << tau_label(table.best_tau) << '\n';
      }
    } else if (*compare) {
      const RunConfig cfg = load_config(compare_args);
      std::vector<Policy> policies;
      std::stringstream list(policies_text);
      for (std::string name; std::getline(list, name, ',');) {
        policies.push_back(policy_from_string(name));
      }
      const auto samples = dataset_or_fail(compare_args.dataset);
      const Comparison result =
          compare_policies(samples, cfg, policies, run_options(compare_args));
      if (compare_args.json_out) {
        std::cout << comparison_to_json(result).dump(2) << '\n';
      } else {
        std::cout << "policy\ttau\taccuracy\tmean_insertions\tmean_tokens\n";
        for (const auto& o : result.outcomes) {
          std::cout << to_string(o.policy) << '\t' << tau_label(o.report.tau)
                    << '\t' << o.report.accuracy << '\t'
                    << o.report.insertions.mean_insertions << '\t'
                    << o.report.mean_total_tokens << '\n';
        }
        if (result.gated_vs_always_reduction) {
          std::cout << "gated uses " << *result.gated_vs_always_reduction
                    << "% fewer tokens than always\n";
        }
      }
    } else if (*convert) {
      const SourceFormat format = source_format_from_string(from_text);
      ConversionStats stats;
      try {
        if (convert_output.empty()) {
          stats = convert_dataset(format, convert_input, image_root, std::cout);
        } else {
          std::ofstream out(convert_output);
          if (!out) throw IoError("cannot write " + convert_output);
          stats = convert_dataset(format, convert_input, image_root, out);
        }
      } catch (const DatasetParseError& e) {
        throw DatasetFailure(convert_input + ": " + e.what());
      } catch (const IoError& e) {
        throw DatasetFailure(e.what());
      }
      std::cerr << "converted " << stats.converted << ", skipped "
                << stats.skipped << '\n';
    } else if (*report) {
      const RunReport r = read_run_report(report_run);
      if (report_table) {
        std::cout << render_trace_table(r);
      } else if (!report_baseline.empty()) {
        const RunReport b = read_run_report(report_baseline);
        std::cout << render_report(r, &b);
      } else {
        std::cout << render_report(r);
      }
    } else if (*seal_cmd) {
      const DocumentKind kind = [&] {
        try {
          return document_kind_from_string(seal_kind);
        } catch (const Error& e) {
          throw ConfigError(e.what());
        }
      }();
      const auto payload = nlohmann::json::parse(read_text(seal_input), nullptr, false);
      if (payload.is_discarded()) throw ConfigError(seal_input + " is not valid JSON");
      const StoredDocument doc = seal(kind, payload);
      write_document_to(doc, seal_output);
      std::cout << doc.content_hash << '\n';
    } else if (*verify) {
      const StoredDocument doc = read_document(verify_path);
      std::cout << to_string(doc.kind) << ' ' << doc.content_hash << " ok\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DatasetFailure& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    return kExitDataset;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
