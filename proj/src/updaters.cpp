#include "entlab/updaters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "entlab/errors.hpp"
#include "entlab/rng.hpp"

namespace entlab {
namespace {

void check_shapes(const SoftmaxPolicy& policy, const AdvantageTable& table) {
  if (table.advantages.rows() != policy.logits().rows() ||
      table.advantages.cols() != policy.logits().cols()) {
    throw ValidationError("advantage table shape does not match policy");
  }
}

void check_finite_param(double value, const std::string& path) {
  if (!std::isfinite(value)) throw ValidationError(path + ": must be finite");
}

// Row-normalized empirical action frequencies; unvisited states use pi.
Matrix empirical_weights(const SoftmaxPolicy& policy, const SampledBatch& batch) {
  Matrix counts = Matrix::Zero(policy.logits().rows(), policy.logits().cols());
  for (const SampleRecord& r : batch.records) {
    counts(static_cast<Eigen::Index>(r.state), static_cast<Eigen::Index>(r.action)) += 1.0;
  }
  for (Eigen::Index s = 0; s < counts.rows(); ++s) {
    const double n = counts.row(s).sum();
    if (n > 0.0) {
      counts.row(s) /= n;
    } else {
      counts.row(s) = policy.probabilities().row(s);
    }
  }
  return counts;
}

}  // namespace

std::string to_string(RuleVariant v) {
  switch (v) {
    case RuleVariant::Vanilla: return "vanilla";
    case RuleVariant::EntropyReg: return "entropy_reg";
    case RuleVariant::ClipCov: return "clip_cov";
    case RuleVariant::KLCov: return "kl_cov";
  }
  return "unknown";
}

std::string to_string(UpdateMode m) {
  return m == UpdateMode::ExactExpectation ? "exact" : "sampled";
}

UpdateRule UpdateRule::vanilla(double eta) { return {eta, UpdateMode::ExactExpectation, VanillaParams{}}; }

UpdateRule UpdateRule::entropy_reg(double eta, double alpha) {
  return {eta, UpdateMode::ExactExpectation, EntropyRegParams{alpha}};
}

UpdateRule UpdateRule::clip_cov(double eta, double clip_ratio, std::optional<double> omega_low,
                                std::optional<double> omega_high) {
  return {eta, UpdateMode::ExactExpectation, ClipCovParams{clip_ratio, omega_low, omega_high}};
}

UpdateRule UpdateRule::kl_cov(double eta, double select_fraction, double beta, BetaSchedule schedule) {
  return {eta, UpdateMode::ExactExpectation, KLCovParams{select_fraction, beta, schedule}};
}

void UpdateRule::validate(const std::string& prefix) const {
  const std::string p = prefix.empty() ? "" : prefix + ".";
  check_finite_param(learning_rate, p + "eta");
  if (!(learning_rate > 0.0)) throw ValidationError(p + "eta: must be > 0");
  if (const auto* reg = std::get_if<EntropyRegParams>(&params)) {
    check_finite_param(reg->alpha, p + "alpha");
    if (reg->alpha < 0.0) throw ValidationError(p + "alpha: must be >= 0");
  } else if (const auto* clip = std::get_if<ClipCovParams>(&params)) {
    check_finite_param(clip->clip_ratio, p + "clip_ratio");
    if (!(clip->clip_ratio > 0.0 && clip->clip_ratio < 1.0)) {
      throw ValidationError(p + "clip_ratio: must lie in (0, 1)");
    }
    if (clip->omega_low && std::isnan(*clip->omega_low)) throw ValidationError(p + "omega_low: NaN");
    if (clip->omega_high && std::isnan(*clip->omega_high)) throw ValidationError(p + "omega_high: NaN");
    if (clip->omega_low && clip->omega_high && *clip->omega_low > *clip->omega_high) {
      throw ValidationError(p + "omega_low: must not exceed omega_high");
    }
  } else if (const auto* kl = std::get_if<KLCovParams>(&params)) {
    check_finite_param(kl->select_fraction, p + "select_fraction");
    if (!(kl->select_fraction > 0.0 && kl->select_fraction < 1.0)) {
      throw ValidationError(p + "select_fraction: must lie in (0, 1)");
    }
    check_finite_param(kl->beta, p + "beta");
    if (kl->beta < 0.0) throw ValidationError(p + "beta: must be >= 0");
    if (kl->schedule.kind == BetaSchedule::Kind::InverseTime &&
        !(kl->schedule.t_half > 0.0 && std::isfinite(kl->schedule.t_half))) {
      throw ValidationError(p + "schedule.t_half: must be > 0");
    }
  }
}

UpdateBatch compute_base_update(const SoftmaxPolicy& policy, const AdvantageTable& table, double eta,
                                UpdateMode mode, const SampledBatch* batch) {
  check_shapes(policy, table);
  const Matrix& probs = policy.probabilities();
  if (mode == UpdateMode::ExactExpectation) {
    Matrix deltas = probs.cwiseProduct(table.advantages);
    for (Eigen::Index s = 0; s < deltas.rows(); ++s) deltas.row(s) *= eta * table.visitation[s];
    return UpdateBatch{std::move(deltas), {}, {}, policy, probs, mode};
  }
  if (batch == nullptr) throw ValidationError("sampled mode requires a sampled batch");
  if (batch->num_trajectories == 0) throw ValidationError("sampled batch has no trajectories");
  Matrix deltas = Matrix::Zero(probs.rows(), probs.cols());
  for (const SampleRecord& r : batch->records) {
    if (r.state >= policy.num_states() || r.action >= policy.num_actions()) {
      throw ValidationError("sampled record outside the policy's index range");
    }
    const auto s = static_cast<Eigen::Index>(r.state);
    deltas.row(s) -= r.advantage_estimate * probs.row(s);
    deltas(s, static_cast<Eigen::Index>(r.action)) += r.advantage_estimate;
  }
  deltas *= eta / static_cast<double>(batch->num_trajectories);
  return UpdateBatch{std::move(deltas), {}, {}, policy, empirical_weights(policy, *batch), mode};
}

UpdateBatch compute_entropy_reg_update(const SoftmaxPolicy& policy, const AdvantageTable& table,
                                       double eta, double alpha, UpdateMode mode,
                                       const SampledBatch* batch) {
  if (!(alpha >= 0.0)) throw DomainError("entropy coefficient alpha must be >= 0");
  UpdateBatch update = compute_base_update(policy, table, eta, mode, batch);
  if (alpha == 0.0) return update;
  for (std::size_t s = 0; s < policy.num_states(); ++s) {
    const auto row = static_cast<Eigen::Index>(s);
    // entropy_gradient is -pi (log pi - mu), so adding it is the bonus term.
    update.deltas.row(row) +=
        (alpha * eta * table.visitation[row]) * entropy_gradient(policy, s).transpose();
  }
  return update;
}

TokenCovariance token_covariance(const SoftmaxPolicy& policy, const UpdateBatch& update,
                                 std::size_t state) {
  if (update.deltas.rows() != policy.logits().rows() || update.deltas.cols() != policy.logits().cols()) {
    throw ValidationError("update shape does not match policy");
  }
  const Vector lp = log_probabilities(policy, state);
  const auto row = static_cast<Eigen::Index>(state);
  const Vector w = update.token_weights.row(row).transpose();
  const Vector dz = update.deltas.row(row).transpose();
  TokenCovariance tc;
  tc.mean_log_prob = w.dot(lp);
  tc.mean_delta = w.dot(dz);
  tc.token_cov = ((lp.array() - tc.mean_log_prob) * (dz.array() - tc.mean_delta)).matrix();
  tc.state_covariance = w.dot(tc.token_cov);
  return tc;
}

std::vector<double> all_token_covariances(const SoftmaxPolicy& policy, const UpdateBatch& update) {
  std::vector<double> out;
  out.reserve(policy.num_tokens());
  for (std::size_t s = 0; s < policy.num_states(); ++s) {
    const TokenCovariance tc = token_covariance(policy, update, s);
    out.insert(out.end(), tc.token_cov.data(), tc.token_cov.data() + tc.token_cov.size());
  }
  return out;
}

ClipBand resolve_clip_band(std::span<const double> token_cov, std::optional<double> omega_low,
                           std::optional<double> omega_high) {
  double mean_abs = 0.0;
  for (double c : token_cov) mean_abs += std::abs(c);
  if (!token_cov.empty()) mean_abs /= static_cast<double>(token_cov.size());
  return {omega_low.value_or(mean_abs), omega_high.value_or(5.0 * mean_abs)};
}

std::vector<std::size_t> select_clip_set(std::span<const double> token_cov, double omega_low,
                                         double omega_high, double clip_ratio, std::uint64_t rng_seed) {
  if (token_cov.empty()) throw ValidationError("select_clip_set: empty token set");
  if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) throw ValidationError("clip_ratio must lie in (0, 1)");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < token_cov.size(); ++i) {
    if (token_cov[i] >= omega_low && token_cov[i] <= omega_high) eligible.push_back(i);
  }
  const auto quota = static_cast<std::size_t>(std::floor(clip_ratio * static_cast<double>(token_cov.size())));
  if (quota >= eligible.size()) return eligible;
  // Partial Fisher-Yates: the first `quota` slots become a uniform sample.
  Rng rng(rng_seed);
  for (std::size_t i = 0; i < quota; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(quota);
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

std::vector<std::size_t> select_kl_set(std::span<const double> token_cov, double select_fraction) {
  if (!(select_fraction > 0.0 && select_fraction < 1.0)) {
    throw ValidationError("select_fraction must lie in (0, 1)");
  }
  for (double c : token_cov) {
    if (std::isnan(c)) throw ValidationError("select_kl_set: NaN token covariance");
  }
  const auto quota = std::min(
      token_cov.size(),
      static_cast<std::size_t>(std::ceil(select_fraction * static_cast<double>(token_cov.size()))));
  std::vector<std::size_t> order(token_cov.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(quota), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double ca = std::abs(token_cov[a]);
                      const double cb = std::abs(token_cov[b]);
                      return ca != cb ? ca > cb : a < b;
                    });
  order.resize(quota);
  std::sort(order.begin(), order.end());
  return order;
}

UpdateBatch apply_clip_cov(UpdateBatch update, const std::vector<std::size_t>& clip_set) {
  const auto cols = static_cast<std::size_t>(update.deltas.cols());
  const auto total = static_cast<std::size_t>(update.deltas.size());
  for (std::size_t idx : clip_set) {
    if (idx >= total) throw ValidationError("clip set index out of range");
    update.deltas(static_cast<Eigen::Index>(idx / cols), static_cast<Eigen::Index>(idx % cols)) = 0.0;
  }
  update.selected_clip = clip_set;
  return update;
}

UpdateBatch compute_kl_cov_update(const SoftmaxPolicy& policy, const SoftmaxPolicy& policy_old,
                                  const AdvantageTable& table, double eta, double beta,
                                  const std::vector<std::size_t>& kl_set, UpdateMode mode,
                                  const SampledBatch* batch) {
  if (policy_old.num_states() != policy.num_states() || policy_old.num_actions() != policy.num_actions()) {
    throw ValidationError("policy_old shape does not match policy");
  }
  if (!(beta >= 0.0)) throw DomainError("beta must be >= 0");
  UpdateBatch update = compute_base_update(policy, table, eta, mode, batch);
  const auto cols = policy.num_actions();
  for (std::size_t idx : kl_set) {
    if (idx >= policy.num_tokens()) throw ValidationError("kl set index out of range");
  }
  update.selected_kl = kl_set;
  if (beta == 0.0) return update;
  for (std::size_t idx : kl_set) {
    const auto s = static_cast<Eigen::Index>(idx / cols);
    const auto a = static_cast<Eigen::Index>(idx % cols);
    const double drift = policy.probabilities()(s, a) - policy_old.probabilities()(s, a);
    update.deltas(s, a) -= eta * beta * table.visitation[s] * drift;
  }
  return update;
}

double anneal_beta(double beta0, std::size_t step, const BetaSchedule& schedule) {
  if (schedule.kind == BetaSchedule::Kind::Constant) return beta0;
  if (!(schedule.t_half > 0.0)) throw DomainError("t_half must be > 0");
  return beta0 / (1.0 + static_cast<double>(step) / schedule.t_half);
}

SoftmaxPolicy apply_update(const SoftmaxPolicy& policy, const UpdateBatch& update) {
  if (update.deltas.rows() != policy.logits().rows() || update.deltas.cols() != policy.logits().cols()) {
    throw ValidationError("update shape does not match policy");
  }
  if (!update.deltas.allFinite()) throw NumericError("update contains non-finite logit deltas");
  Matrix next = policy.logits() + update.deltas;
  if (!next.allFinite()) throw NumericError("updated logits are not finite");
  return SoftmaxPolicy(std::move(next));
}

RuleStep compute_rule_step(const UpdateRule& rule, const SoftmaxPolicy& policy,
                           const SoftmaxPolicy& kl_reference, const AdvantageTable& table,
                           std::size_t step, const SampledBatch* batch, std::uint64_t selection_seed) {
  const double eta = rule.learning_rate;
  UpdateBatch base = compute_base_update(policy, table, eta, rule.mode, batch);
  RuleStep out{base, base, 0.0, std::nullopt};
  switch (rule.variant()) {
    case RuleVariant::Vanilla:
      break;
    case RuleVariant::EntropyReg: {
      const auto& p = std::get<EntropyRegParams>(rule.params);
      out.update = compute_entropy_reg_update(policy, table, eta, p.alpha, rule.mode, batch);
      break;
    }
    case RuleVariant::ClipCov: {
      const auto& p = std::get<ClipCovParams>(rule.params);
      const std::vector<double> cov = all_token_covariances(policy, base);
      const ClipBand band = resolve_clip_band(cov, p.omega_low, p.omega_high);
      out.clip_band = band;
      out.update = apply_clip_cov(base, select_clip_set(cov, band.low, band.high, p.clip_ratio, selection_seed));
      break;
    }
    case RuleVariant::KLCov: {
      const auto& p = std::get<KLCovParams>(rule.params);
      out.beta_t = anneal_beta(p.beta, step, p.schedule);
      const std::vector<double> cov = all_token_covariances(policy, base);
      out.update = compute_kl_cov_update(policy, kl_reference, table, eta, out.beta_t,
                                         select_kl_set(cov, p.select_fraction), rule.mode, batch);
      break;
    }
  }
  return out;
}

}  // namespace entlab
