#include "entlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "entlab/errors.hpp"
#include "entlab/rng.hpp"

namespace entlab {
namespace {

// Cov_{a~p}(x, y).
double weighted_cov(const Vector& p, const Vector& x, const Vector& y) {
  const double mx = p.dot(x);
  const double my = p.dot(y);
  return p.dot(((x.array() - mx) * (y.array() - my)).matrix());
}

double top_mean(std::vector<double> sorted_desc, double q) {
  const auto n = sorted_desc.size();
  const auto m = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(q * static_cast<double>(n))), 1, n);
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum += sorted_desc[i];
  return sum / static_cast<double>(m);
}

// KL(p || softmax(log p + step * d)) for one state, computed from the centered
// direction so that small steps do not lose precision.
double state_step_kl(const Vector& p, const Vector& d, double step) {
  const Vector centered = d.array() - p.dot(d);
  const double max_abs = centered.cwiseAbs().maxCoeff();
  if (step * max_abs < 1.0) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double x = step * centered[i];
      acc += p[i] * (std::expm1(x) - x);
    }
    return std::log1p(acc);
  }
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) m = std::max(m, step * centered[i]);
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) acc += p[i] * std::exp(step * centered[i] - m);
  }
  return m + std::log(acc);
}

void check_update_shape(const SoftmaxPolicy& policy, const Matrix& deltas) {
  if (deltas.rows() != policy.logits().rows() || deltas.cols() != policy.logits().cols()) {
    throw ValidationError("update shape does not match policy");
  }
}

void check_weights(const SoftmaxPolicy& policy, const Vector& weights) {
  if (static_cast<std::size_t>(weights.size()) != policy.num_states()) {
    throw ValidationError("state weights must have one entry per state");
  }
}

std::vector<std::size_t> flat_support(const Matrix& m, double threshold) {
  std::vector<std::size_t> out;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (std::abs(m.data()[i]) > threshold) out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

}  // namespace

QuantileTable token_cov_quantiles(std::span<const double> token_cov) {
  QuantileTable t;
  t.count = token_cov.size();
  if (token_cov.empty()) return t;
  std::vector<double> sorted(token_cov.begin(), token_cov.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  t.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  t.max = sorted.front();
  t.top10_mean = top_mean(sorted, 0.10);
  t.top1_mean = top_mean(sorted, 0.01);
  t.top01_mean = top_mean(sorted, 0.001);
  const auto positive = std::count_if(sorted.begin(), sorted.end(), [](double c) { return c > 0.0; });
  t.positive_fraction = static_cast<double>(positive) / static_cast<double>(sorted.size());
  return t;
}

double firstorder_entropy_change(const SoftmaxPolicy& policy, const UpdateBatch& update, std::size_t state) {
  check_update_shape(policy, update.deltas);
  const Vector p = action_probabilities(policy, state);
  const Vector dz = update.deltas.row(static_cast<Eigen::Index>(state)).transpose();
  return -weighted_cov(p, log_probabilities(policy, state), dz);
}

EntropyPrediction predicted_entropy_change(const SoftmaxPolicy& policy, const AdvantageTable& table,
                                           const UpdateRule& rule, std::size_t state,
                                           const SoftmaxPolicy* policy_old,
                                           const std::vector<std::size_t>* selected) {
  const Vector p = action_probabilities(policy, state);
  const Vector lp = log_probabilities(policy, state);
  const auto row = static_cast<Eigen::Index>(state);
  const double eta = rule.learning_rate;
  const double scale = eta * table.visitation[row];
  const Vector pa = p.cwiseProduct(table.advantages.row(row).transpose());
  const double pg = -scale * weighted_cov(p, lp, pa);

  EntropyPrediction out{pg, pg, 0.0};
  switch (rule.variant()) {
    case RuleVariant::Vanilla:
      break;
    case RuleVariant::EntropyReg: {
      const double alpha = std::get<EntropyRegParams>(rule.params).alpha;
      const double mu = p.dot(lp);
      const Vector centered = lp.array() - mu;
      out.predicted = pg + alpha * scale * p.dot(centered.cwiseProduct(centered));
      out.exact_form = pg + alpha * scale * weighted_cov(p, lp, p.cwiseProduct(centered));
      break;
    }
    case RuleVariant::ClipCov: {
      Vector dz = scale * pa;
      if (selected != nullptr) {
        const std::size_t cols = policy.num_actions();
        for (std::size_t idx : *selected) {
          if (idx / cols == state) dz[static_cast<Eigen::Index>(idx % cols)] = 0.0;
        }
      }
      out.predicted = out.exact_form = -weighted_cov(p, lp, dz);
      break;
    }
    case RuleVariant::KLCov: {
      if (policy_old == nullptr) throw ValidationError("KL-Cov prediction requires policy_old");
      const auto& params = std::get<KLCovParams>(rule.params);
      std::vector<std::size_t> kl_set;
      if (selected != nullptr) {
        kl_set = *selected;
      } else {
        const UpdateBatch base = compute_base_update(policy, table, eta);
        kl_set = select_kl_set(all_token_covariances(policy, base), params.select_fraction);
      }
      const Vector drift = p - action_probabilities(*policy_old, state);
      Vector masked = Vector::Zero(p.size());
      const std::size_t cols = policy.num_actions();
      for (std::size_t idx : kl_set) {
        if (idx / cols == state) {
          const auto a = static_cast<Eigen::Index>(idx % cols);
          masked[a] = drift[a];
        }
      }
      out.delta = scale * weighted_cov(p, lp, masked);
      out.predicted = out.exact_form = pg + params.beta * out.delta;
      break;
    }
  }
  return out;
}

double actual_entropy_change(const SoftmaxPolicy& policy, const UpdateBatch& update,
                             const Vector& state_weights) {
  const SoftmaxPolicy next = apply_update(policy, update);
  return average_entropy(next, state_weights) - average_entropy(policy, state_weights);
}

double effective_covariance(std::span<const double> token_cov, const std::vector<std::size_t>& clip_set) {
  const std::size_t n = token_cov.size();
  if (n == 0) throw ValidationError("effective_covariance: empty token set");
  std::vector<bool> clipped(n, false);
  for (std::size_t idx : clip_set) {
    if (idx >= n) throw ValidationError("effective_covariance: clip index out of range");
    clipped[idx] = true;
  }
  long double sum = 0.0L;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!clipped[i]) {
      sum += token_cov[i];
      ++kept;
    }
  }
  if (kept == 0) throw ValidationError("effective_covariance: every token is clipped");
  return static_cast<double>(sum / static_cast<long double>(kept));
}

double effective_covariance_formula(std::span<const double> token_cov,
                                    const std::vector<std::size_t>& clip_set) {
  const std::size_t n = token_cov.size();
  if (n == 0) throw ValidationError("effective_covariance: empty token set");
  std::vector<bool> clipped(n, false);
  for (std::size_t idx : clip_set) {
    if (idx >= n) throw ValidationError("effective_covariance: clip index out of range");
    clipped[idx] = true;
  }
  long double total = 0.0L;
  long double clip_sum = 0.0L;
  std::size_t m = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += token_cov[i];
    if (clipped[i]) {
      clip_sum += token_cov[i];
      ++m;
    }
  }
  const long double cov = total / static_cast<long double>(n);
  if (m == 0) return static_cast<double>(cov);
  if (m == n) throw ValidationError("effective_covariance: every token is clipped");
  const long double r = static_cast<long double>(m) / static_cast<long double>(n);
  const long double clip_mean = clip_sum / static_cast<long double>(m);
  return static_cast<double>(cov - r / (1.0L - r) * (clip_mean - cov));
}

double step_kl(const SoftmaxPolicy& policy, const Matrix& direction, double step, const Vector& state_weights) {
  check_update_shape(policy, direction);
  check_weights(policy, state_weights);
  double kl = 0.0;
  for (std::size_t s = 0; s < policy.num_states(); ++s) {
    const double w = state_weights[static_cast<Eigen::Index>(s)];
    if (w == 0.0) continue;
    kl += w * state_step_kl(action_probabilities(policy, s),
                            direction.row(static_cast<Eigen::Index>(s)).transpose(), step);
  }
  return std::max(kl, 0.0);
}

StabilityProbeResult stability_margin(const SoftmaxPolicy& policy, const UpdateBatch& direction,
                                      double epsilon, const Vector& state_weights, RuleVariant rule) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ValidationError("epsilon must be > 0");
  check_update_shape(policy, direction.deltas);
  check_weights(policy, state_weights);
  if (!direction.deltas.allFinite()) throw ValidationError("direction must be finite");
  bool moves = false;
  for (std::size_t s = 0; s < policy.num_states() && !moves; ++s) {
    if (state_weights[static_cast<Eigen::Index>(s)] <= 0.0) continue;
    const Vector d = direction.deltas.row(static_cast<Eigen::Index>(s)).transpose();
    const Vector p = action_probabilities(policy, s);
    moves = ((d.array() - p.dot(d)).abs() * (p.array() > 0.0).cast<double>()).maxCoeff() > 0.0;
  }
  if (!moves) throw ValidationError("stability probe direction does not move the policy");

  const auto kl = [&](double g) { return step_kl(policy, direction.deltas, g, state_weights); };
  double lo = 1.0;
  if (kl(lo) <= epsilon) {
    while (kl(2.0 * lo) <= epsilon) {
      lo *= 2.0;
      if (lo > 1e300) throw NumericError("stability probe failed to bracket the KL budget");
    }
  } else {
    do {
      lo *= 0.5;
      if (lo < 1e-300) throw NumericError("stability probe failed to bracket the KL budget");
    } while (kl(lo) > epsilon);
  }
  double hi = 2.0 * lo;
  for (int i = 0; i < 40; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (kl(mid) <= epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {lo, epsilon, kl(lo), kl(2.0 * lo), rule};
}

StabilityComparison stability_comparison(const TabularTask& task, const SoftmaxPolicy& policy,
                                         const SoftmaxPolicy& policy_old, double alpha,
                                         double select_fraction, double beta, double epsilon) {
  const AdvantageTable table = evaluate_policy(task, policy);
  const UpdateBatch base = compute_base_update(policy, table, 1.0);
  const UpdateBatch reg = compute_entropy_reg_update(policy, table, 1.0, alpha);
  StabilityComparison out;
  out.kl_set = select_kl_set(all_token_covariances(policy, base), select_fraction);
  const UpdateBatch kl = compute_kl_cov_update(policy, policy_old, table, 1.0, beta, out.kl_set);

  out.base = stability_margin(policy, base, epsilon, table.occupancy, RuleVariant::Vanilla);
  out.reg = stability_margin(policy, reg, epsilon, table.occupancy, RuleVariant::EntropyReg);
  out.klcov = stability_margin(policy, kl, epsilon, table.occupancy, RuleVariant::KLCov);
  const double base_norm = base.deltas.norm();
  out.kappa_hat = base_norm > 0.0 ? (reg.deltas - base.deltas).norm() / base_norm
                                  : std::numeric_limits<double>::infinity();
  out.reg_le_base = out.reg.gamma <= out.base.gamma;
  out.klcov_rel_diff = std::abs(out.klcov.gamma - out.base.gamma) / out.base.gamma;
  return out;
}

SuboptimalityAudit suboptimality_audit(const TabularTask& task, double alpha) {
  if (!task.is_bandit()) throw ScopeError("suboptimality audit is defined for bandit tasks only");
  if (!(alpha > 0.0)) throw DomainError("alpha must be > 0");
  const Vector rewards = task.reward.row(0).transpose();
  SuboptimalityAudit out;
  out.j_star = brute_force_optimum(task).reward;
  out.entropy_star = 0.0;
  const SoftOptimum soft = soft_bandit_optimum(rewards, alpha);
  out.j_reg_star = soft.expected_reward;
  out.entropy_reg_star = soft.entropy;
  out.gap = out.j_star - out.j_reg_star;
  constexpr double kSlack = 1e-12;
  out.ordering_ok = out.j_reg_star <= out.j_star + kSlack;
  out.entropy_bound_ok = out.gap <= alpha * (out.entropy_reg_star - out.entropy_star) + kSlack;
  return out;
}

BiasVarianceReport bias_variance_report(const TabularTask& task, const SoftmaxPolicy& policy,
                                        const SoftmaxPolicy& policy_old, const UpdateRule& rule,
                                        std::size_t num_batches, std::size_t batch_size,
                                        std::uint64_t rng_seed) {
  if (num_batches < 30) throw ValidationError("bias_variance_report: num_batches must be >= 30");
  if (batch_size < 1) throw ValidationError("bias_variance_report: batch_size must be >= 1");
  rule.validate();
  const AdvantageTable table = evaluate_policy(task, policy);
  const double eta = rule.learning_rate;
  const UpdateBatch exact = compute_base_update(policy, table, eta);
  const std::vector<double> exact_cov = all_token_covariances(policy, exact);

  BiasVarianceReport out;
  out.rule = rule.variant();
  out.num_batches = num_batches;
  out.exact_vanilla = exact.deltas;

  std::optional<ClipBand> band;
  double beta = 0.0;
  if (const auto* clip = std::get_if<ClipCovParams>(&rule.params)) {
    band = resolve_clip_band(exact_cov, clip->omega_low, clip->omega_high);
    for (std::size_t i = 0; i < exact_cov.size(); ++i) {
      if (exact_cov[i] >= band->low && exact_cov[i] <= band->high) out.clip_eligible.push_back(i);
    }
  } else if (const auto* kl = std::get_if<KLCovParams>(&rule.params)) {
    out.kl_set = select_kl_set(exact_cov, kl->select_fraction);
    beta = kl->beta;
  }

  const auto rows = exact.deltas.rows();
  const auto cols = exact.deltas.cols();
  Matrix mean = Matrix::Zero(rows, cols);
  Matrix m2 = Matrix::Zero(rows, cols);
  Matrix vmean = Matrix::Zero(rows, cols);
  Matrix vm2 = Matrix::Zero(rows, cols);
  Matrix shift = Matrix::Zero(rows, cols);
  Matrix touched = Matrix::Zero(rows, cols);

  for (std::size_t b = 0; b < num_batches; ++b) {
    const SampledBatch batch = sample_batch(task, policy, batch_size, derive_seed(rng_seed, b),
                                            AdvantageEstimator::EmpiricalReturn);
    const UpdateBatch vanilla = compute_base_update(policy, table, eta, UpdateMode::Sampled, &batch);
    UpdateBatch ruled = vanilla;
    switch (rule.variant()) {
      case RuleVariant::Vanilla:
        break;
      case RuleVariant::EntropyReg:
        ruled = compute_entropy_reg_update(policy, table, eta, std::get<EntropyRegParams>(rule.params).alpha,
                                           UpdateMode::Sampled, &batch);
        break;
      case RuleVariant::ClipCov: {
        const auto& clip = std::get<ClipCovParams>(rule.params);
        ruled = apply_clip_cov(vanilla, select_clip_set(exact_cov, band->low, band->high, clip.clip_ratio,
                                                        derive_aux_seed(rng_seed, b)));
        break;
      }
      case RuleVariant::KLCov:
        ruled = compute_kl_cov_update(policy, policy_old, table, eta, beta, out.kl_set, UpdateMode::Sampled,
                                      &batch);
        break;
    }
    const double k = static_cast<double>(b + 1);
    const Matrix d = ruled.deltas - mean;
    mean += d / k;
    m2 += d.cwiseProduct(ruled.deltas - mean);
    const Matrix vd = vanilla.deltas - vmean;
    vmean += vd / k;
    vm2 += vd.cwiseProduct(vanilla.deltas - vmean);
    shift += ruled.deltas - vanilla.deltas;
    touched += vanilla.deltas.cwiseAbs();
  }
  const double n = static_cast<double>(num_batches);
  out.mean_update = mean;
  out.componentwise_variance = m2 / (n - 1.0);
  out.vanilla_mean = vmean;
  out.vanilla_variance = vm2 / (n - 1.0);
  out.bias_vector = mean - exact.deltas;
  out.bias_std_error = (out.componentwise_variance / n).cwiseSqrt();
  out.rule_shift = shift / n;

  out.active_components = flat_support(touched + exact.deltas.cwiseAbs(), 0.0);
  out.bias_support = flat_support(out.rule_shift, 1e-12);
  const std::size_t denom = out.active_components.empty() ? static_cast<std::size_t>(exact.deltas.size())
                                                          : out.active_components.size();
  std::size_t hits = 0;
  for (std::size_t idx : out.bias_support) {
    if (std::binary_search(out.active_components.begin(), out.active_components.end(), idx)) ++hits;
  }
  out.bias_sparsity = static_cast<double>(hits) / static_cast<double>(denom);
  return out;
}

ConvergenceReport convergence_tracker(std::span<const StepDiagnostics> trace, double eta, double j_max) {
  ConvergenceReport out;
  if (trace.empty()) return out;
  if (!(eta > 0.0)) throw ValidationError("convergence_tracker: eta must be > 0");
  const double j0 = trace.front().expected_reward;
  double running = std::numeric_limits<double>::infinity();
  std::vector<double> log_t;
  std::vector<double> log_m;
  for (const StepDiagnostics& rec : trace) {
    running = std::min(running, rec.grad_norm * rec.grad_norm);
    const double t = static_cast<double>(rec.step + 1);
    const double envelope = 2.0 * std::max(j_max - j0, 0.0) / (eta * t);
    out.min_sq_grad_norm_by_t.push_back(running);
    out.envelope.push_back(envelope);
    if (t >= 10.0) {
      if (running > envelope) out.rate_ok = false;
      if (running > 0.0) {
        log_t.push_back(std::log(t));
        log_m.push_back(std::log(running));
      }
    }
  }
  if (log_t.size() >= 2) {
    const double mt = std::accumulate(log_t.begin(), log_t.end(), 0.0) / static_cast<double>(log_t.size());
    const double mm = std::accumulate(log_m.begin(), log_m.end(), 0.0) / static_cast<double>(log_m.size());
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < log_t.size(); ++i) {
      sxy += (log_t[i] - mt) * (log_m[i] - mm);
      sxx += (log_t[i] - mt) * (log_t[i] - mt);
    }
    if (sxx > 0.0) out.loglog_slope = sxy / sxx;
  }
  return out;
}

ExpFit fit_exponential_law(std::span<const std::pair<double, double>> entropy_reward) {
  const std::size_t n = entropy_reward.size();
  if (n < 8) throw ValidationError("fit_exponential_law: needs at least 8 points");
  Eigen::MatrixXd design(n, 2);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [h, r] = entropy_reward[i];
    if (!std::isfinite(h) || !std::isfinite(r)) throw ValidationError("fit_exponential_law: non-finite point");
    design(static_cast<Eigen::Index>(i), 0) = std::exp(h);
    design(static_cast<Eigen::Index>(i), 1) = 1.0;
    y[static_cast<Eigen::Index>(i)] = r;
  }
  const Eigen::VectorXd x = design.col(0);
  if (x.maxCoeff() == x.minCoeff()) throw ValidationError("fit_exponential_law: all entropies are equal");
  const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd resid = y - design * coef;
  const double ss_res = resid.squaredNorm();
  const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
  ExpFit fit;
  fit.a = -coef[0];
  fit.b = coef[1];
  fit.r_squared = ss_tot > 0.0 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : 1.0;
  return fit;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("pearson: series lengths differ");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

TraceStatistics trace_statistics(std::span<const StepDiagnostics> trace) {
  if (trace.size() < 20) throw ValidationError("trace_statistics: needs at least 20 steps");
  std::vector<double> neg_dh;
  std::vector<double> cov;
  for (const StepDiagnostics& rec : trace) {
    neg_dh.push_back(-rec.actual_dH);
    cov.push_back(rec.cov_term);
  }
  return {pearson(neg_dh, cov), trace.front().token_cov_summary};
}

}  // namespace entlab
