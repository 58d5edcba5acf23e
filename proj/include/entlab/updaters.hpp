#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "entlab/policy.hpp"
#include "entlab/task.hpp"

namespace entlab {

enum class RuleVariant { Vanilla, EntropyReg, ClipCov, KLCov };
enum class UpdateMode { ExactExpectation, Sampled };

std::string to_string(RuleVariant v);
std::string to_string(UpdateMode m);

struct BetaSchedule {
  enum class Kind { Constant, InverseTime };
  Kind kind = Kind::Constant;
  double t_half = 0.0;  // InverseTime only

  static BetaSchedule constant() { return {}; }
  static BetaSchedule inverse_time(double t_half) { return {Kind::InverseTime, t_half}; }
  bool operator==(const BetaSchedule&) const = default;
};

struct VanillaParams {
  bool operator==(const VanillaParams&) const = default;
};
struct EntropyRegParams {
  double alpha = 0.0;
  bool operator==(const EntropyRegParams&) const = default;
};
/// omega bounds left empty resolve per step to 1x / 5x the mean |C| over tokens.
struct ClipCovParams {
  double clip_ratio = 1e-2;
  std::optional<double> omega_low;
  std::optional<double> omega_high;
  bool operator==(const ClipCovParams&) const = default;
};
struct KLCovParams {
  double select_fraction = 2e-3;
  double beta = 1.0;
  BetaSchedule schedule;
  bool operator==(const KLCovParams&) const = default;
};

/// One of the four update rules plus the shared step size and mode. The
/// variant holds exactly the parameters of the active rule.
struct UpdateRule {
  double learning_rate = 0.1;
  UpdateMode mode = UpdateMode::ExactExpectation;
  std::variant<VanillaParams, EntropyRegParams, ClipCovParams, KLCovParams> params;

  RuleVariant variant() const { return static_cast<RuleVariant>(params.index()); }

  static UpdateRule vanilla(double eta);
  static UpdateRule entropy_reg(double eta, double alpha);
  static UpdateRule clip_cov(double eta, double clip_ratio, std::optional<double> omega_low = {},
                             std::optional<double> omega_high = {});
  static UpdateRule kl_cov(double eta, double select_fraction, double beta,
                           BetaSchedule schedule = BetaSchedule::constant());

  /// Throws ValidationError whose message starts with the offending field path
  /// relative to `prefix` (e.g. "rule.alpha").
  void validate(const std::string& prefix = "rule") const;

  bool operator==(const UpdateRule&) const = default;
};

/// Logit changes for one optimizer step plus the bookkeeping needed to
/// analyze them. Token sets hold flat indices state * num_actions + action.
struct UpdateBatch {
  Matrix deltas;
  std::vector<std::size_t> selected_clip;
  std::vector<std::size_t> selected_kl;
  /// Policy at which the update was computed.
  SoftmaxPolicy policy_old;
  /// Per-state action distribution that defines the centering means of token
  /// covariances: the policy itself in exact mode, the batch's empirical
  /// action frequencies in sampled mode.
  Matrix token_weights;
  UpdateMode mode = UpdateMode::ExactExpectation;
};

/// Per-state token covariances C(s,a) = (log pi - mu_log)(dz - mu_dz).
struct TokenCovariance {
  Vector token_cov;
  double mean_log_prob = 0.0;
  double mean_delta = 0.0;
  /// Mean of token_cov under the centering distribution = Cov(log pi, dz).
  double state_covariance = 0.0;
};

/// Vanilla logit update. Exact mode: dz = eta * visitation(s) * pi * A, which
/// is eta * dJ/dz (visitation is 1 on a bandit). Sampled mode: the
/// score-function estimate (eta / N) sum_i A_i (e_{a_i} - pi(.|s_i)).
UpdateBatch compute_base_update(const SoftmaxPolicy& policy, const AdvantageTable& table, double eta,
                                UpdateMode mode = UpdateMode::ExactExpectation,
                                const SampledBatch* batch = nullptr);

/// Base update plus the entropy bonus -alpha * eta * w(s) * pi (log pi - mu_log).
UpdateBatch compute_entropy_reg_update(const SoftmaxPolicy& policy, const AdvantageTable& table,
                                       double eta, double alpha,
                                       UpdateMode mode = UpdateMode::ExactExpectation,
                                       const SampledBatch* batch = nullptr);

TokenCovariance token_covariance(const SoftmaxPolicy& policy, const UpdateBatch& update,
                                 std::size_t state);

/// C for every token, flattened state-major.
std::vector<double> all_token_covariances(const SoftmaxPolicy& policy, const UpdateBatch& update);

struct ClipBand {
  double low = 0.0;
  double high = 0.0;
};

/// Fills unset bounds with 1x (low) and 5x (high) the mean |C|.
ClipBand resolve_clip_band(std::span<const double> token_cov, std::optional<double> omega_low,
                           std::optional<double> omega_high);

/// floor(r * N) tokens drawn uniformly without replacement among those with
/// C in [low, high]; all eligible tokens when fewer exist. Sorted ascending.
std::vector<std::size_t> select_clip_set(std::span<const double> token_cov, double omega_low,
                                         double omega_high, double clip_ratio, std::uint64_t rng_seed);

/// The ceil(k * N) tokens of largest |C|; ties go to the smaller index.
/// Sorted ascending.
std::vector<std::size_t> select_kl_set(std::span<const double> token_cov, double select_fraction);

/// Zeroes the deltas of the clip set and records it.
UpdateBatch apply_clip_cov(UpdateBatch update, const std::vector<std::size_t>& clip_set);

/// Base update with the KL penalty -eta * beta * w(s) * (pi - pi_old) added on kl_set.
UpdateBatch compute_kl_cov_update(const SoftmaxPolicy& policy, const SoftmaxPolicy& policy_old,
                                  const AdvantageTable& table, double eta, double beta,
                                  const std::vector<std::size_t>& kl_set,
                                  UpdateMode mode = UpdateMode::ExactExpectation,
                                  const SampledBatch* batch = nullptr);

double anneal_beta(double beta0, std::size_t step, const BetaSchedule& schedule);

/// New policy with logits z + dz. Throws NumericError on non-finite deltas.
SoftmaxPolicy apply_update(const SoftmaxPolicy& policy, const UpdateBatch& update);

/// Everything one optimizer step of a rule produces before it is applied.
struct RuleStep {
  UpdateBatch update;
  UpdateBatch base;
  double beta_t = 0.0;
  std::optional<ClipBand> clip_band;
};

/// Runs a rule end to end: base update, token covariances, selection and the
/// rule-specific modification. `kl_reference` is the KL-Cov anchor policy and
/// `selection_seed` drives the Clip-Cov draw.
RuleStep compute_rule_step(const UpdateRule& rule, const SoftmaxPolicy& policy,
                           const SoftmaxPolicy& kl_reference, const AdvantageTable& table,
                           std::size_t step, const SampledBatch* batch, std::uint64_t selection_seed);

}  // namespace entlab
