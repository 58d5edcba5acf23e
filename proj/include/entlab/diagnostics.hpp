#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "entlab/policy.hpp"
#include "entlab/task.hpp"
#include "entlab/updaters.hpp"

namespace entlab {

/// Summary of a set of token covariances. top_*_mean are means of the largest
/// ceil(q * N) values.
struct QuantileTable {
  std::size_t count = 0;
  double mean = 0.0;
  double max = 0.0;
  double top10_mean = 0.0;
  double top1_mean = 0.0;
  double top01_mean = 0.0;
  double positive_fraction = 0.0;
  bool operator==(const QuantileTable&) const = default;
};

QuantileTable token_cov_quantiles(std::span<const double> token_cov);

/// One logged optimizer step.
struct StepDiagnostics {
  std::size_t step = 0;
  double avg_entropy = 0.0;
  std::vector<double> per_state_entropy;
  double expected_reward = 0.0;
  /// Exact ||dJ/dz|| of the unregularized objective at the step's policy.
  double grad_norm = 0.0;
  /// Cov_{a~pi}(log pi, pi A) per state.
  std::vector<double> state_cov;
  /// Occupancy-weighted sum of state_cov.
  double cov_term = 0.0;
  /// Occupancy-weighted prediction from the rule's closed form.
  double predicted_dH = 0.0;
  /// Same, with the exact covariance form of the entropy bonus (EntropyReg);
  /// equals predicted_dH for the other rules.
  double predicted_dH_exact_form = 0.0;
  /// -Cov(log pi, dz) of the realized update, occupancy-weighted.
  double firstorder_dH = 0.0;
  double actual_dH = 0.0;
  /// Occupancy-weighted KL-Cov term delta(s); 0 for other rules.
  double delta_s = 0.0;
  double beta_t = 0.0;
  QuantileTable token_cov_summary;
  std::vector<std::pair<std::size_t, std::size_t>> selected_clip;
  std::vector<std::pair<std::size_t, std::size_t>> selected_kl;

  bool operator==(const StepDiagnostics&) const = default;
};

/// -Cov_{a~pi(.|s)}(log pi(a|s), dz_{s,a}).
double firstorder_entropy_change(const SoftmaxPolicy& policy, const UpdateBatch& update, std::size_t state);

struct EntropyPrediction {
  /// Rule formula: PG covariance term, plus alpha*eta*w*Var(log pi) for
  /// EntropyReg, plus beta*delta(s) for KL-Cov.
  double predicted = 0.0;
  /// EntropyReg with alpha*eta*w*Cov(log pi, pi (log pi - mu)) in place of the
  /// variance term; equal to `predicted` otherwise.
  double exact_form = 0.0;
  /// delta(s) = eta * w * Cov(log pi, (pi - pi_old) 1[selected]); KL-Cov only.
  double delta = 0.0;
};

/// First-order entropy change of one state under a rule, in exact mode.
/// KL-Cov requires `policy_old` (the KL anchor) and uses `selected` as the KL
/// set when given, otherwise the top-k tokens of the exact base update. For
/// Clip-Cov, `selected` is the clip set (empty when absent). The rule's beta
/// is used as is (pass the annealed value).
EntropyPrediction predicted_entropy_change(const SoftmaxPolicy& policy, const AdvantageTable& table,
                                           const UpdateRule& rule, std::size_t state,
                                           const SoftmaxPolicy* policy_old = nullptr,
                                           const std::vector<std::size_t>* selected = nullptr);

/// average_entropy(apply_update(policy, update)) - average_entropy(policy),
/// both with the same state weights.
double actual_entropy_change(const SoftmaxPolicy& policy, const UpdateBatch& update,
                             const Vector& state_weights);

/// Mean token covariance over tokens outside the clip set (the mean over all
/// tokens when the set is empty). Throws ValidationError if every token is clipped.
double effective_covariance(std::span<const double> token_cov, const std::vector<std::size_t>& clip_set);

/// cov - r / (1 - r) * (E[C | clipped] - cov) with r = |clip| / N, cov the mean of all C.
double effective_covariance_formula(std::span<const double> token_cov,
                                    const std::vector<std::size_t>& clip_set);

struct StabilityProbeResult {
  double gamma = 0.0;
  double epsilon = 0.0;
  double kl_at_gamma = 0.0;
  /// KL at 2 * gamma; exceeds epsilon (bracketing witness).
  double kl_at_double = 0.0;
  RuleVariant rule = RuleVariant::Vanilla;
};

/// Occupancy-weighted KL(pi || softmax(z + step * direction)).
double step_kl(const SoftmaxPolicy& policy, const Matrix& direction, double step,
               const Vector& state_weights);

/// Largest step along `direction` (an update computed with eta = 1) whose
/// occupancy-weighted KL(pi_old || pi_new) stays within epsilon: exponential
/// bracketing followed by 40 bisection steps.
StabilityProbeResult stability_margin(const SoftmaxPolicy& policy, const UpdateBatch& direction,
                                      double epsilon, const Vector& state_weights,
                                      RuleVariant rule = RuleVariant::Vanilla);

struct StabilityComparison {
  StabilityProbeResult base;
  StabilityProbeResult reg;
  StabilityProbeResult klcov;
  /// ||entropy-bonus direction|| / ||base direction||.
  double kappa_hat = 0.0;
  bool reg_le_base = false;
  double klcov_rel_diff = 0.0;
  std::vector<std::size_t> kl_set;
};

/// Probes base, EntropyReg(alpha) and KL-Cov(k, beta) directions with a shared
/// epsilon. `policy_old` is the KL anchor for the KL-Cov direction.
StabilityComparison stability_comparison(const TabularTask& task, const SoftmaxPolicy& policy,
                                         const SoftmaxPolicy& policy_old, double alpha,
                                         double select_fraction, double beta, double epsilon);

struct SuboptimalityAudit {
  double j_star = 0.0;
  double j_reg_star = 0.0;
  double gap = 0.0;
  double entropy_star = 0.0;
  double entropy_reg_star = 0.0;
  /// gap <= alpha * (H(pi_reg*) - H(pi*)).
  bool entropy_bound_ok = false;
  bool ordering_ok = false;
};

/// Throws ScopeError for non-bandit tasks.
SuboptimalityAudit suboptimality_audit(const TabularTask& task, double alpha);

struct BiasVarianceReport {
  RuleVariant rule = RuleVariant::Vanilla;
  std::size_t num_batches = 0;
  Matrix mean_update;
  Matrix componentwise_variance;
  /// Vanilla estimator on the same batches.
  Matrix vanilla_mean;
  Matrix vanilla_variance;
  /// Exact expectation of the vanilla update.
  Matrix exact_vanilla;
  /// mean_update - exact_vanilla.
  Matrix bias_vector;
  /// Standard error of mean_update.
  Matrix bias_std_error;
  /// mean of (rule update - vanilla update) over the shared batches.
  Matrix rule_shift;
  /// Fraction of components whose rule_shift exceeds 1e-12 in magnitude.
  double bias_sparsity = 0.0;
  std::vector<std::size_t> bias_support;
  /// Components where the vanilla update is not identically zero.
  std::vector<std::size_t> active_components;
  std::vector<std::size_t> clip_eligible;
  std::vector<std::size_t> kl_set;
};

/// Per-component mean and variance of a rule's sampled update across
/// independent batches with empirical-return advantages. Every rule is
/// evaluated on the same batches as the vanilla estimator. Token selection
/// uses the exact token covariances at `policy`, so the selection does not
/// depend on the sampled update; the Clip-Cov draw is re-randomized per batch.
BiasVarianceReport bias_variance_report(const TabularTask& task, const SoftmaxPolicy& policy,
                                        const SoftmaxPolicy& policy_old, const UpdateRule& rule,
                                        std::size_t num_batches, std::size_t batch_size,
                                        std::uint64_t rng_seed);

struct ConvergenceReport {
  std::vector<double> min_sq_grad_norm_by_t;
  std::vector<double> envelope;
  bool rate_ok = true;
  /// Least-squares slope of log(running min) against log(T) over T >= 10.
  std::optional<double> loglog_slope;
};

/// Running minimum of the squared gradient norm against 2 (J_max - J_0) / (eta T),
/// where T = step + 1 of each record.
ConvergenceReport convergence_tracker(std::span<const StepDiagnostics> trace, double eta, double j_max);

struct ExpFit {
  double a = 0.0;
  double b = 0.0;
  double r_squared = 0.0;
  bool operator==(const ExpFit&) const = default;
};

/// Least squares for R = -a * exp(H) + b. Needs >= 8 points and at least two
/// distinct entropies.
ExpFit fit_exponential_law(std::span<const std::pair<double, double>> entropy_reward);

/// Pearson correlation; empty when either series is constant.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct TraceStatistics {
  /// Correlation of -actual_dH with the covariance term.
  std::optional<double> pearson_dH_vs_cov;
  /// Token covariance table of the first logged step.
  QuantileTable first_step;
};

TraceStatistics trace_statistics(std::span<const StepDiagnostics> trace);

}  // namespace entlab
