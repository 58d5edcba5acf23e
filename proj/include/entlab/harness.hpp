#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "entlab/diagnostics.hpp"
#include "entlab/policy.hpp"
#include "entlab/task.hpp"
#include "entlab/updaters.hpp"

namespace entlab {

using Json = nlohmann::json;

// Policy: {"num_states", "num_actions", "logits": row-major flat array}.
Json policy_to_json(const SoftmaxPolicy& policy);
SoftmaxPolicy policy_from_json(const Json& j, const std::string& path = "policy");

// Task: {"num_states", "num_actions", "horizon", "initial_dist", "transition",
// "reward", optional "reward_bound"}; transition and reward row-major flat.
Json task_to_json(const TabularTask& task);
TabularTask task_from_json(const Json& j, const std::string& path = "task");
TabularTask load_task(const std::filesystem::path& file);

Json rule_to_json(const UpdateRule& rule);
/// Parses the "rule" object; eta and mode live at the config's top level and
/// are passed in.
UpdateRule rule_from_json(const Json& j, double eta, UpdateMode mode, const std::string& path = "rule");

Json step_to_json(const StepDiagnostics& step);
StepDiagnostics step_from_json(const Json& j);

Json quantiles_to_json(const QuantileTable& table);
Json fit_to_json(const ExpFit& fit);

struct ExperimentConfig {
  /// Builtin task name, task file path (as written in the config), or
  /// "inline" for an embedded definition.
  std::string task_ref = "bandit2";
  TabularTask task = two_action_bandit();
  UpdateRule rule = UpdateRule::vanilla(0.1);
  std::size_t steps = 2000;
  double eta = 0.1;
  UpdateMode mode = UpdateMode::ExactExpectation;
  std::size_t batch_size = 64;
  std::uint64_t rng_seed = 0;
  std::size_t log_every = 4;
  std::string output_path;
  /// Starting policy; uniform when empty.
  std::optional<SoftmaxPolicy> initial_policy;
  AdvantageEstimator advantage_estimator = AdvantageEstimator::Exact;

  void validate() const;
};

/// Parses and validates a config object. Relative task paths resolve against
/// `base_dir`. Unknown keys raise UnknownKeyError naming the key path.
ExperimentConfig config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& file);
/// Canonical form: builtin and file tasks are kept by reference, inline tasks
/// are embedded.
Json config_to_json(const ExperimentConfig& config);

/// FNV-1a 64 of the canonical config JSON, as 16 hex digits.
std::string config_digest(const ExperimentConfig& config);

struct TrainingTrace {
  std::string config_digest;
  std::vector<StepDiagnostics> records;
  SoftmaxPolicy final_policy{1, 1};
  /// Policy one step before final_policy (equal to it after zero steps).
  SoftmaxPolicy previous_policy{1, 1};
  std::size_t steps_completed = 0;
  bool diverged = false;
  std::optional<std::size_t> divergence_step;
  std::string divergence_reason;

  bool operator==(const TrainingTrace&) const = default;
};

/// Logits beyond this magnitude count as divergence.
inline constexpr double kLogitDivergenceBound = 1e6;

/// Runs the configured loop. Per step t: the KL anchor is the policy of step
/// t - 1, advantages are evaluated exactly, the rule update is computed
/// (sampled batch seed derive_seed(rng_seed, t), Clip-Cov draw seed
/// derive_aux_seed(rng_seed, t)), diagnostics are recorded on steps that are
/// multiples of log_every, and the update is applied.
TrainingTrace run_experiment(const ExperimentConfig& config);

struct SweepPoint {
  std::size_t index = 0;
  Json overrides;
  ExperimentConfig config;
  TrainingTrace trace;
  double final_reward = 0.0;
  double final_entropy = 0.0;
  std::string error;
};

/// Grid: {"dotted.key": [values...], ...}; cartesian product in key order
/// with the last key varying fastest. Point i runs with seed
/// derive_seed(base.rng_seed, i). Runs that fail or diverge are recorded
/// and the sweep continues.
std::vector<SweepPoint> run_sweep(const ExperimentConfig& base, const Json& grid);
Json sweep_summary(const std::vector<SweepPoint>& points);

/// Final expected reward and occupancy-weighted entropy of a trace's policy.
double final_reward(const ExperimentConfig& config, const TrainingTrace& trace);
double final_entropy(const ExperimentConfig& config, const TrainingTrace& trace);

void write_jsonl(const TrainingTrace& trace, const ExperimentConfig& config, const std::filesystem::path& file);
std::string trace_to_jsonl(const TrainingTrace& trace, const ExperimentConfig& config);
struct LoadedTrace {
  Json config;
  TrainingTrace trace;
};
LoadedTrace read_jsonl(const std::filesystem::path& file);
LoadedTrace trace_from_jsonl(const std::string& text);

/// Columns: step, entropy, reward, predicted_dH, actual_dH, grad_norm.
std::string trace_to_csv(const TrainingTrace& trace);

/// Fit (when >= 8 logged points), correlation, covariance sparsity and
/// convergence statistics of a trace.
Json trace_summary(const TrainingTrace& trace, const ExperimentConfig* config = nullptr);

enum class OutputFormat { Jsonl, Csv, Summary };

/// Writes trace.jsonl / trace.csv / summary.json under `dir`.
std::vector<std::filesystem::path> emit_outputs(const TrainingTrace& trace, const ExperimentConfig& config,
                                                const std::filesystem::path& dir,
                                                const std::vector<OutputFormat>& formats);

void write_text(const std::filesystem::path& file, const std::string& text);
std::string read_text(const std::filesystem::path& file);

/// Stability probes at the final policy of a run. alpha, k and beta come from
/// the config's rule when it defines them, otherwise 0.1, 0.01 and 1.
Json probe_stability(const ExperimentConfig& config, double epsilon);
Json stability_to_json(const StabilityComparison& cmp);

}  // namespace entlab
