#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "entlab/errors.hpp"
#include "entlab/harness.hpp"
#include "entlab/verify.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode : int { kSuccess = 0, kValidation = 1, kDivergence = 2, kVerification = 3 };

fs::path output_dir(const std::string& flag, const entlab::ExperimentConfig& config) {
  if (!flag.empty()) return flag;
  if (!config.output_path.empty()) return config.output_path;
  if (const char* env = std::getenv("ENTLAB_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return "entlab_out";
}

void print_json(const entlab::Json& j) { std::cout << j.dump(2) << '\n'; }

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out) {
  entlab::ExperimentConfig config = entlab::load_config(config_path);
  if (seed) config.rng_seed = *seed;
  const entlab::TrainingTrace trace = entlab::run_experiment(config);
  const fs::path dir = output_dir(out, config);
  const auto files = entlab::emit_outputs(
      trace, config, dir,
      {entlab::OutputFormat::Jsonl, entlab::OutputFormat::Csv, entlab::OutputFormat::Summary});
  entlab::Json written = entlab::Json::array();
  for (const fs::path& f : files) written.push_back(f.string());
  print_json({{"config_digest", trace.config_digest},
              {"steps_completed", trace.steps_completed},
              {"diverged", trace.diverged},
              {"final_reward", entlab::final_reward(config, trace)},
              {"final_entropy", entlab::final_entropy(config, trace)},
              {"files", written}});
  return trace.diverged ? kDivergence : kSuccess;
}

int cmd_sweep(const std::string& config_path, const std::string& grid_path, const std::string& out) {
  const entlab::ExperimentConfig config = entlab::load_config(config_path);
  entlab::Json grid;
  try {
    grid = entlab::Json::parse(entlab::read_text(grid_path));
  } catch (const entlab::Json::parse_error& e) {
    throw entlab::ParseError(grid_path + ": " + e.what());
  }
  const auto points = entlab::run_sweep(config, grid);
  const fs::path dir = output_dir(out, config);
  for (const entlab::SweepPoint& p : points) {
    if (!p.error.empty()) continue;
    entlab::emit_outputs(p.trace, p.config, dir / ("point_" + std::to_string(p.index)),
                         {entlab::OutputFormat::Jsonl, entlab::OutputFormat::Csv, entlab::OutputFormat::Summary});
  }
  const entlab::Json summary = entlab::sweep_summary(points);
  entlab::write_text(dir / "sweep_summary.json", summary.dump(2) + "\n");
  print_json(summary);
  for (const entlab::SweepPoint& p : points) {
    if (!p.error.empty() || p.trace.diverged) return kDivergence;
  }
  return kSuccess;
}

int cmd_verify(bool self_check, const std::string& report_path) {
  const entlab::VerifyReport report = entlab::verify_suite(self_check);
  for (const entlab::CheckResult& c : report.checks) {
    std::printf("%s check %s (%s: %s)\n", c.passed ? "[PASS]" : "[FAIL]", c.id.c_str(), c.module.c_str(),
                c.theorem.c_str());
  }
  for (const entlab::CriterionResult& r : report.criteria) std::printf("%s\n", entlab::format_criterion_line(r).c_str());
  if (!report_path.empty()) entlab::write_text(report_path, report.to_json().dump(2) + "\n");
  return report.passed ? kSuccess : kVerification;
}

int cmd_fit(const std::string& trace_path) {
  const entlab::LoadedTrace loaded = entlab::read_jsonl(trace_path);
  std::vector<std::pair<double, double>> points;
  for (const entlab::StepDiagnostics& d : loaded.trace.records) points.emplace_back(d.avg_entropy, d.expected_reward);
  print_json(entlab::fit_to_json(entlab::fit_exponential_law(points)));
  return kSuccess;
}

int cmd_report(const std::string& trace_path, const std::string& format) {
  const entlab::LoadedTrace loaded = entlab::read_jsonl(trace_path);
  if (format == "csv") {
    std::cout << entlab::trace_to_csv(loaded.trace);
  } else if (format == "jsonl") {
    const entlab::ExperimentConfig config = entlab::config_from_json(loaded.config, fs::path(trace_path).parent_path());
    std::cout << entlab::trace_to_jsonl(loaded.trace, config);
  } else {
    const entlab::ExperimentConfig config = entlab::config_from_json(loaded.config, fs::path(trace_path).parent_path());
    print_json(entlab::trace_summary(loaded.trace, &config));
  }
  return kSuccess;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-dynamics laboratory for tabular softmax policies"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  auto* train = app.add_subcommand("train", "Run one experiment and write trace.jsonl, trace.csv and summary.json");
  train->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  auto* seed_opt = train->add_option("--seed", seed, "Override rng_seed");
  train->add_option("--out", out, "Output directory (default: config output_path, then $ENTLAB_OUTPUT_DIR)");

  std::string grid_path;
  auto* sweep = app.add_subcommand("sweep", "Run a parameter grid over a base config");
  sweep->add_option("--config", config_path, "Base config (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("--grid", grid_path, "Grid {\"dotted.key\": [values]} (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", out, "Output directory");

  double epsilon = 0.01;
  auto* probe = app.add_subcommand("probe-stability", "Stability margins at the final policy of a run");
  probe->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  probe->add_option("--epsilon", epsilon, "KL budget")->required();

  bool self_check = false;
  std::string report_path;
  auto* verify = app.add_subcommand("verify", "Run the property checks and acceptance criteria");
  verify->add_flag("--self-check", self_check, "Swap in a mutated clipping formula; the suite must then fail");
  verify->add_option("--report", report_path, "Write the JSON report here");

  std::string trace_path;
  auto* fit = app.add_subcommand("fit", "Fit R = -a exp(H) + b to a trace");
  fit->add_option("--trace", trace_path, "trace.jsonl")->required()->check(CLI::ExistingFile);

  std::string format = "summary";
  auto* report = app.add_subcommand("report", "Re-emit a trace as csv, jsonl or a summary");
  report->add_option("--trace", trace_path, "trace.jsonl")->required()->check(CLI::ExistingFile);
  report->add_option("--format", format, "Output format")
      ->required()
      ->check(CLI::IsMember({"csv", "jsonl", "summary"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kValidation;
  }

  try {
    if (*train) {
      return cmd_train(config_path, seed_opt->count() > 0 ? std::optional<std::uint64_t>(seed) : std::nullopt, out);
    }
    if (*sweep) return cmd_sweep(config_path, grid_path, out);
    if (*probe) {
      print_json(entlab::probe_stability(entlab::load_config(config_path), epsilon));
      return kSuccess;
    }
    if (*verify) return cmd_verify(self_check, report_path);
    if (*fit) return cmd_fit(trace_path);
    if (*report) return cmd_report(trace_path, format);
  } catch (const entlab::NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDivergence;
  } catch (const entlab::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  }
  return kSuccess;
}
