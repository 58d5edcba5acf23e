#include <doctest.h>

#include <filesystem>
#include <map>
#include <sstream>

#include "entlab/errors.hpp"
#include "entlab/harness.hpp"
#include "entlab/verify.hpp"

using namespace entlab;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(ENTLAB_SOURCE_DIR) / "configs";

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("entlab_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_of(const Json& j) {
  try {
    (void)config_from_json(j);
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n' ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("minimal config gets documented defaults") {
  const ExperimentConfig c = config_from_json(Json::parse(R"({"task": "bandit10"})"));
  CHECK(c.steps == 2000);
  CHECK(c.eta == 0.1);
  CHECK(c.log_every == 4);
  CHECK(c.rng_seed == 0);
  CHECK(c.mode == UpdateMode::ExactExpectation);
  CHECK(c.rule.variant() == RuleVariant::Vanilla);
  CHECK(c.rule.learning_rate == 0.1);
  CHECK(c.task.num_actions == 10);
  CHECK_FALSE(c.initial_policy.has_value());
}

TEST_CASE("config validation errors name the field") {
  CHECK(error_of(Json::parse(R"({"task":"bandit2","rule":{"variant":"entropy_reg","alpha":-0.1}})")).rfind("rule.alpha", 0) == 0);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"task":"bandit2","rule":{"variant":"entropy_reg","alpha":-0.1}})")),
                  ValidationError);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"task":"bandit2","stepz":3})")), UnknownKeyError);
  CHECK(error_of(Json::parse(R"({"task":"bandit2","rule":{"variant":"vanilla","alpha":0.1}})")).find("rule.alpha") !=
        std::string::npos);
  CHECK(error_of(Json::parse(R"({"task":"bandit2","steps":0})")).rfind("steps", 0) == 0);
  CHECK(error_of(Json::parse(R"({"task":"bandit2","log_every":0})")).rfind("log_every", 0) == 0);
  CHECK(error_of(Json::parse(R"({"task":"bandit2","mode":"sampled","batch_size":0})")).rfind("batch_size", 0) == 0);
  CHECK(error_of(Json::parse(R"({"task":"nope"})")).find("task") != std::string::npos);
  CHECK(error_of(Json::parse(R"({"steps":3})")).find("task") != std::string::npos);

  const fs::path dir = scratch_dir("parse");
  write_text(dir / "broken.json", "{\"task\": ");
  CHECK_THROWS_AS(load_config(dir / "broken.json"), ParseError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), IoError);
}

TEST_CASE("KL-Cov config with a small selection ratio") {
  const ExperimentConfig c =
      config_from_json(Json::parse(R"({"task":"bandit10","rule":{"variant":"kl_cov","select_fraction":0.002}})"));
  REQUIRE(c.rule.variant() == RuleVariant::KLCov);
  const auto& p = std::get<KLCovParams>(c.rule.params);
  CHECK(p.select_fraction == 0.002);
  CHECK(p.beta == 1.0);
  CHECK(p.schedule == BetaSchedule::constant());
}

TEST_CASE("rule and config JSON round trip") {
  const std::vector<UpdateRule> rules{
      UpdateRule::vanilla(0.3), UpdateRule::entropy_reg(0.3, 0.01), UpdateRule::clip_cov(0.3, 0.2),
      UpdateRule::clip_cov(0.3, 0.2, -1.0, 2.0), UpdateRule::kl_cov(0.3, 0.1, 2.0, BetaSchedule::inverse_time(50.0))};
  for (const UpdateRule& r : rules) CHECK(rule_from_json(rule_to_json(r), 0.3, UpdateMode::ExactExpectation) == r);

  ExperimentConfig c = scenarios::heavy_tail_bandit10();
  const ExperimentConfig back = config_from_json(config_to_json(c));
  CHECK(config_digest(back) == config_digest(c));
  CHECK(back.initial_policy == c.initial_policy);
  c.task_ref = "inline";
  c.task.reward(0, 3) = 0.123;
  const ExperimentConfig inl = config_from_json(config_to_json(c));
  CHECK(inl.task.reward(0, 3) == 0.123);
}

TEST_CASE("bundled configs reproduce the verification scenarios") {
  const std::map<std::string, ExperimentConfig> expected{
      {"collapse_bandit2.json", scenarios::collapse_bandit2()},
      {"heavy_tail_bandit10.json", scenarios::heavy_tail_bandit10()},
      {"sensitivity_bandit10.json", scenarios::sensitivity_bandit10()},
      {"klcov_bandit2.json", scenarios::klcov_bandit2()},
      {"annealed_klcov_bandit2.json", scenarios::annealed_klcov("bandit2")},
      {"annealed_klcov_bandit10.json", scenarios::annealed_klcov("bandit10")},
      {"vanilla_rate_bandit2.json", scenarios::vanilla_rate_bandit2()},
      {"snapshot_bandit10.json", scenarios::snapshot_bandit10()},
      {"exp_law_bandit10.json", scenarios::exp_law_bandit10()}};
  for (const auto& [file, cfg] : expected) {
    CAPTURE(file);
    CHECK(config_digest(load_config(kConfigs / file)) == config_digest(cfg));
  }
  CHECK(Json::parse(read_text(kConfigs / "alpha_grid.json")) == scenarios::sensitivity_grid());
  const Json manifest = Json::parse(read_text(kConfigs / "manifest.json"));
  CHECK(manifest["criteria"].size() == 14);
  for (const Json& entry : manifest["criteria"]) {
    for (const Json& f : entry.value("configs", Json::array())) CHECK(fs::exists(kConfigs / f.get<std::string>()));
  }
}

TEST_CASE("training is deterministic and the digest is stable") {
  ExperimentConfig c = scenarios::klcov_bandit2();
  c.steps = 60;
  const TrainingTrace a = run_experiment(c);
  const TrainingTrace b = run_experiment(c);
  CHECK(trace_to_jsonl(a, c) == trace_to_jsonl(b, c));
  CHECK(a.config_digest == config_digest(c));
  c.output_path = "/somewhere/else";
  CHECK(config_digest(c) == a.config_digest);
  c.rng_seed = 1;
  CHECK(config_digest(c) != a.config_digest);

  ExperimentConfig s = scenarios::heavy_tail_bandit10();
  s.steps = 30;
  s.rule = UpdateRule::clip_cov(0.1, 0.2);
  s.rule.mode = UpdateMode::Sampled;
  CHECK(trace_to_jsonl(run_experiment(s), s) == trace_to_jsonl(run_experiment(s), s));
}

TEST_CASE("records are strictly increasing and follow log_every") {
  ExperimentConfig c = scenarios::collapse_bandit2();
  c.steps = 23;
  c.log_every = 4;
  const TrainingTrace t = run_experiment(c);
  REQUIRE(t.records.size() == 6);
  for (std::size_t i = 0; i < t.records.size(); ++i) CHECK(t.records[i].step == 4 * i);
  CHECK(t.steps_completed == 23);
}

TEST_CASE("JSONL round trip, CSV rows and summary contents") {
  ExperimentConfig c = scenarios::klcov_bandit2();
  c.steps = 50;
  c.log_every = 3;
  const TrainingTrace t = run_experiment(c);
  const LoadedTrace back = trace_from_jsonl(trace_to_jsonl(t, c));
  CHECK(back.trace == t);
  CHECK(back.config == config_to_json(c));

  const std::string csv = trace_to_csv(t);
  CHECK(count_lines(csv) == 1 + (50 + 3 - 1) / 3);
  CHECK(csv.rfind("step,entropy,reward,predicted_dH,actual_dH,grad_norm", 0) == 0);

  const Json summary = trace_summary(t, &c);
  REQUIRE(summary.contains("exp_fit"));
  CHECK(summary["exp_fit"].contains("r_squared"));
  c.steps = 20;
  const Json few = trace_summary(run_experiment(c), &c);
  CHECK_FALSE(few.contains("exp_fit"));

  const fs::path dir = scratch_dir("emit");
  const auto files = emit_outputs(t, c, dir, {OutputFormat::Jsonl, OutputFormat::Csv, OutputFormat::Summary});
  CHECK(files.size() == 3);
  CHECK(read_jsonl(dir / "trace.jsonl").trace == t);
  write_text(dir / "blocker", "x");
  CHECK_THROWS_AS(emit_outputs(t, c, dir / "blocker", {OutputFormat::Csv}), IoError);
}

TEST_CASE("divergence truncates the trace") {
  ExperimentConfig c = scenarios::collapse_bandit2();
  c.eta = 1e7;
  c.rule = UpdateRule::vanilla(1e7);
  c.steps = 100;
  const TrainingTrace t = run_experiment(c);
  CHECK(t.diverged);
  REQUIRE(t.divergence_step.has_value());
  CHECK(t.steps_completed == *t.divergence_step);
  CHECK_FALSE(t.divergence_reason.empty());
  CHECK(trace_from_jsonl(trace_to_jsonl(t, c)).trace == t);
}

TEST_CASE("sweeps") {
  ExperimentConfig base = scenarios::sensitivity_bandit10();
  base.steps = 40;
  const auto points = run_sweep(base, Json::parse(R"({"rule.alpha": [0.0001, 0.001, 0.005, 0.01]})"));
  REQUIRE(points.size() == 4);
  for (std::size_t i = 0; i < points.size(); ++i) {
    CHECK(points[i].error.empty());
    CHECK(points[i].config.rng_seed == i);
  }
  CHECK(std::get<EntropyRegParams>(points[2].config.rule.params).alpha == 0.005);
  CHECK(sweep_summary(points)["points"].size() == 4);
  CHECK_THROWS_AS(run_sweep(base, Json::object()), ValidationError);

  const auto mixed = run_sweep(base, Json::parse(R"({"rule.alpha": [0.01, -1.0], "eta": [0.5]})"));
  REQUIRE(mixed.size() == 2);
  CHECK(mixed[0].error.empty());
  CHECK_FALSE(mixed[1].error.empty());
}

TEST_CASE("verification report structure and self-check") {
  const auto checks = run_property_checks(false);
  for (const CheckResult& c : checks) {
    CAPTURE(c.id);
    CHECK(c.passed);
    CHECK_FALSE(c.theorem.empty());
    CHECK_FALSE(c.module.empty());
  }
  const auto mutated = run_property_checks(true);
  for (const CheckResult& c : mutated) {
    if (c.id == "effective-covariance-identity") CHECK_FALSE(c.passed);
    else CHECK(c.passed);
  }
  CHECK_FALSE(run_criterion(3, true).passed);
  CHECK(run_criterion(3, false).passed);
  const CriterionResult r = run_criterion(4);
  CHECK(format_criterion_line(r).rfind("[PASS] 4 advantage-centering", 0) == 0);
}
