#include <doctest.h>

#include <cmath>
#include <numeric>

#include "entlab/diagnostics.hpp"
#include "entlab/errors.hpp"
#include "entlab/oracles.hpp"
#include "test_support.hpp"

using namespace entlab;
using entlab::testing::policy_from_probs;
using entlab::testing::random_bandit;
using entlab::testing::random_policy;
using entlab::testing::random_values;

TEST_CASE("firstorder_entropy_change degenerate cases") {
  Rng rng(400);
  const SoftmaxPolicy p = random_policy(rng, 1, 5);
  UpdateBatch u = compute_base_update(p, evaluate_policy(random_bandit(rng, 5), p), 0.3);
  u.deltas.setConstant(1.25);
  CHECK(std::abs(firstorder_entropy_change(p, u, 0)) <= 1e-15);
  const SoftmaxPolicy uni = SoftmaxPolicy::uniform(1, 5);
  const UpdateBatch v = compute_base_update(uni, evaluate_policy(random_bandit(rng, 5), uni), 0.3);
  CHECK(std::abs(firstorder_entropy_change(uni, v, 0)) <= 1e-15);
}

TEST_CASE("first-order prediction within the quadratic envelope") {
  const SoftmaxPolicy p = policy_from_probs({0.8, 0.2});
  const TabularTask bandit = two_action_bandit();
  const UpdateBatch u = compute_base_update(p, evaluate_policy(bandit, p), 1e-3);
  const double err = std::abs(actual_entropy_change(p, u, Vector::Ones(1)) - firstorder_entropy_change(p, u, 0));
  CHECK(err <= 5.0 * u.deltas.squaredNorm());
}

TEST_CASE("property: halving eta shrinks the first-order error about fourfold") {
  Rng rng(401);
  int in_band = 0;
  const int total = 200;
  for (int i = 0; i < total; ++i) {
    const std::size_t actions = 2 + static_cast<std::size_t>(rng.below(9));
    const TabularTask task = random_bandit(rng, actions);
    const SoftmaxPolicy p = random_policy(rng, 1, actions, 2.0);
    const AdvantageTable t = evaluate_policy(task, p);
    double err[2];
    for (int h = 0; h < 2; ++h) {
      const UpdateBatch u = compute_base_update(p, t, h == 0 ? 0.02 : 0.01);
      err[h] = std::abs(actual_entropy_change(p, u, t.occupancy) - firstorder_entropy_change(p, u, 0));
    }
    const double ratio = err[1] / err[0];
    in_band += ratio >= 0.15 && ratio <= 0.40 ? 1 : 0;
  }
  CHECK(in_band >= 190);
}

TEST_CASE("actual_entropy_change identities") {
  Rng rng(402);
  const SoftmaxPolicy p = random_policy(rng, 2, 3);
  UpdateBatch u{Matrix::Zero(2, 3), {}, {}, p, p.probabilities(), UpdateMode::ExactExpectation};
  const Vector w = Vector::Constant(2, 0.5);
  CHECK(actual_entropy_change(p, u, w) == 0.0);
  u.deltas.row(0).setConstant(3.0);
  u.deltas.row(1).setConstant(-1.0);
  CHECK(std::abs(actual_entropy_change(p, u, w)) <= 1e-12);
}

TEST_CASE("predicted_entropy_change per rule") {
  const TabularTask bandit = ten_action_bandit();
  const SoftmaxPolicy uni = SoftmaxPolicy::uniform(1, 10);
  const AdvantageTable tu = evaluate_policy(bandit, uni);
  CHECK(std::abs(predicted_entropy_change(uni, tu, UpdateRule::vanilla(0.1), 0).predicted) <= 1e-15);

  const TabularTask b2 = two_action_bandit();
  const SoftmaxPolicy near = policy_from_probs({0.99, 0.01});
  const AdvantageTable tn = evaluate_policy(b2, near);
  const EntropyPrediction reg = predicted_entropy_change(near, tn, UpdateRule::entropy_reg(0.1, 0.5), 0);
  const UpdateBatch reg_update = compute_entropy_reg_update(near, tn, 0.1, 0.5);
  CHECK(reg.exact_form == doctest::Approx(firstorder_entropy_change(near, reg_update, 0)).epsilon(1e-12));
  // The variance form replaces Cov(log pi, pi (log pi - mu)) by Var(log pi); at (0.99, 0.01) these are
  // 0.0041 and 0.2087, so the two forms do not agree.
  const DistributionStats st = log_prob_stats(near, 0);
  const Vector lp = log_probabilities(near, 0);
  const Vector pi = action_probabilities(near, 0);
  const Vector weighted = pi.cwiseProduct((lp.array() - st.mean_log_prob).matrix());
  const double cov_form = pi.dot(lp.cwiseProduct(weighted)) - st.mean_log_prob * pi.dot(weighted);
  CHECK(cov_form == doctest::Approx(0.0041).epsilon(0.01));
  CHECK(st.var_log_prob == doctest::Approx(0.2087).epsilon(0.01));
  const double vanilla_part = predicted_entropy_change(near, tn, UpdateRule::vanilla(0.1), 0).predicted;
  CHECK(reg.predicted - vanilla_part == doctest::Approx(0.1 * 0.5 * st.var_log_prob).epsilon(1e-12));
  CHECK(reg.exact_form - vanilla_part == doctest::Approx(0.1 * 0.5 * cov_form).epsilon(1e-9));

  Rng rng(403);
  const SoftmaxPolicy p = random_policy(rng, 1, 10);
  const AdvantageTable t = evaluate_policy(bandit, p);
  const EntropyPrediction van = predicted_entropy_change(p, t, UpdateRule::vanilla(0.1), 0);
  const EntropyPrediction kl = predicted_entropy_change(p, t, UpdateRule::kl_cov(0.1, 0.2, 1.0), 0, &p);
  CHECK(kl.predicted == van.predicted);
  CHECK(kl.delta == 0.0);
  CHECK_THROWS_AS(predicted_entropy_change(p, t, UpdateRule::kl_cov(0.1, 0.2, 1.0), 0), ValidationError);

  // Clip-Cov prediction equals the first-order change of the clipped update.
  const std::vector<std::size_t> clip{2, 7};
  const EntropyPrediction cp = predicted_entropy_change(p, t, UpdateRule::clip_cov(0.1, 0.2), 0, nullptr, &clip);
  const UpdateBatch clipped = apply_clip_cov(compute_base_update(p, t, 0.1), clip);
  CHECK(cp.predicted == doctest::Approx(firstorder_entropy_change(p, clipped, 0)).epsilon(1e-12));
}

TEST_CASE("effective covariance") {
  const std::vector<double> c{0.1, 0.2, 0.3, 0.9, -0.4, 0.0, 0.05, 0.02, 0.01, 0.03};
  const double mean = std::accumulate(c.begin(), c.end(), 0.0) / 10.0;
  CHECK(effective_covariance(c, {}) == doctest::Approx(mean));
  CHECK(effective_covariance(c, {3}) < mean);
  CHECK_THROWS_AS(effective_covariance(c, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}), ValidationError);
}

TEST_CASE("property: effective covariance equals the closed-form correction") {
  Rng rng(404);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.below(49));
    const std::vector<double> c = random_values(rng, n);
    std::vector<std::size_t> clip;
    for (std::size_t k = 0; k < n; ++k) {
      if (rng.uniform01() < 0.3) clip.push_back(k);
    }
    if (clip.size() == n) clip.pop_back();
    CHECK(std::abs(effective_covariance(c, clip) - effective_covariance_formula(c, clip)) <= 1e-12);
  }
}

TEST_CASE("stability_margin") {
  const SoftmaxPolicy p = SoftmaxPolicy::uniform(1, 2);
  UpdateBatch dir = compute_base_update(p, evaluate_policy(two_action_bandit(), p), 1.0);
  dir.deltas << 1.0, -1.0;
  const Vector w = Vector::Ones(1);
  const StabilityProbeResult r = stability_margin(p, dir, 0.02, w);
  CHECK(r.gamma == doctest::Approx(oracles::two_action_stability_root(0.5, 1.0, -1.0, 0.02)).epsilon(1e-9));
  CHECK(r.kl_at_gamma <= 0.02);
  CHECK(r.kl_at_double > 0.02);
  CHECK(stability_margin(p, dir, 0.04, w).gamma > r.gamma);
  CHECK(stability_margin(p, dir, 1e-15, w).gamma < 1e-6);
  CHECK_THROWS_AS(stability_margin(p, dir, 0.0, w), ValidationError);
  dir.deltas.setZero();
  CHECK_THROWS_AS(stability_margin(p, dir, 0.01, w), ValidationError);
}

TEST_CASE("stability_comparison degenerate parameters") {
  Rng rng(405);
  const TabularTask task = ten_action_bandit();
  const SoftmaxPolicy p = random_policy(rng, 1, 10);
  const StabilityComparison zero_alpha = stability_comparison(task, p, p, 0.0, 0.01, 1.0, 0.01);
  CHECK(zero_alpha.reg.gamma == zero_alpha.base.gamma);
  // pi_old = pi makes the KL penalty vanish on every selected token.
  CHECK(zero_alpha.klcov.gamma == zero_alpha.base.gamma);
  CHECK(zero_alpha.klcov_rel_diff == 0.0);
}

TEST_CASE("suboptimality_audit") {
  const SuboptimalityAudit flat = suboptimality_audit(make_bandit({0.4, 0.4, 0.4}), 0.3);
  CHECK(flat.gap == doctest::Approx(0.0));
  const SuboptimalityAudit half = suboptimality_audit(two_action_bandit(), 0.5);
  CHECK(half.gap == doctest::Approx(0.119203).epsilon(1e-6));
  CHECK(half.entropy_bound_ok);
  CHECK(half.ordering_ok);
  CHECK(suboptimality_audit(two_action_bandit(), 1e-6).gap <= 1e-4);
  CHECK_THROWS_AS(suboptimality_audit(delayed_reward_chain(), 0.1), ScopeError);
}

TEST_CASE("bias_variance_report") {
  Rng rng(406);
  const TabularTask task = ten_action_bandit();
  const SoftmaxPolicy p = random_policy(rng, 1, 10, 1.0);
  const BiasVarianceReport van = bias_variance_report(task, p, p, UpdateRule::vanilla(0.1), 60, 32, 1);
  std::size_t outside = 0;
  for (Eigen::Index i = 0; i < van.bias_vector.size(); ++i) {
    outside += std::abs(van.bias_vector.data()[i]) > 3.0 * van.bias_std_error.data()[i] ? 1 : 0;
  }
  CHECK(outside <= 1);
  CHECK(van.bias_support.empty());
  CHECK(van.componentwise_variance == van.vanilla_variance);

  const BiasVarianceReport reg = bias_variance_report(task, p, p, UpdateRule::entropy_reg(0.1, 0.05), 60, 32, 1);
  CHECK(reg.bias_sparsity > 0.9);
  // The entropy bonus is deterministic, so the shift is exactly alpha * eta * grad H.
  const Vector g = entropy_gradient(p, 0) * (0.05 * 0.1);
  CHECK((reg.rule_shift.row(0).transpose() - g).cwiseAbs().maxCoeff() <= 1e-12);

  const SoftmaxPolicy old = random_policy(rng, 1, 10, 1.0);
  const BiasVarianceReport kl = bias_variance_report(task, p, old, UpdateRule::kl_cov(0.1, 0.2, 1.0), 60, 32, 1);
  CHECK(kl.kl_set.size() == 2);
  for (std::size_t i : kl.bias_support) CHECK(std::binary_search(kl.kl_set.begin(), kl.kl_set.end(), i));
  CHECK_THROWS_AS(bias_variance_report(task, p, p, UpdateRule::vanilla(0.1), 10, 32, 1), ValidationError);
}

TEST_CASE("convergence_tracker") {
  std::vector<StepDiagnostics> zero(20);
  for (std::size_t i = 0; i < zero.size(); ++i) zero[i].step = i;
  const ConvergenceReport z = convergence_tracker(zero, 0.1, 1.0);
  CHECK(z.min_sq_grad_norm_by_t.back() == 0.0);
  CHECK(z.rate_ok);

  std::vector<StepDiagnostics> decay(200);
  for (std::size_t i = 0; i < decay.size(); ++i) {
    decay[i].step = i;
    decay[i].grad_norm = 1.0 / static_cast<double>(i + 1);
  }
  const ConvergenceReport d = convergence_tracker(decay, 0.1, 1.0);
  REQUIRE(d.loglog_slope.has_value());
  CHECK(*d.loglog_slope == doctest::Approx(-2.0).epsilon(0.05));
}

TEST_CASE("fit_exponential_law") {
  std::vector<std::pair<double, double>> exact;
  for (int i = 0; i < 12; ++i) {
    const double h = 0.2 * i;
    exact.emplace_back(h, -0.3 * std::exp(h) + 0.9);
  }
  const ExpFit f = fit_exponential_law(exact);
  CHECK(std::abs(f.a - 0.3) <= 1e-9);
  CHECK(std::abs(f.b - 0.9) <= 1e-9);
  CHECK(f.r_squared == doctest::Approx(1.0).epsilon(1e-12));

  // Additive noise sigma = 0.01: estimates within 3 standard errors.
  Rng rng(407);
  std::vector<std::pair<double, double>> noisy;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const double h = 2.0 * i / (n - 1);
    double z = -6.0;  // Irwin-Hall approximation of a standard normal
    for (int k = 0; k < 12; ++k) z += rng.uniform01();
    noisy.emplace_back(h, -0.3 * std::exp(h) + 0.9 + 0.01 * z);
  }
  const ExpFit g = fit_exponential_law(noisy);
  double sx = 0.0;
  double sxx = 0.0;
  for (const auto& [h, y] : noisy) {
    sx += std::exp(h);
    sxx += std::exp(2.0 * h);
  }
  const double sxx_c = sxx - sx * sx / n;
  const double se_a = 0.01 / std::sqrt(sxx_c);
  const double se_b = 0.01 * std::sqrt(1.0 / n + (sx / n) * (sx / n) / sxx_c);
  CHECK(std::abs(g.a - 0.3) <= 3.0 * se_a);
  CHECK(std::abs(g.b - 0.9) <= 3.0 * se_b);

  CHECK_THROWS_AS(fit_exponential_law(std::vector<std::pair<double, double>>(5, {0.1, 0.2})), ValidationError);
  CHECK_THROWS_AS(fit_exponential_law(std::vector<std::pair<double, double>>(10, {0.1, 0.2})), ValidationError);
}

TEST_CASE("pearson and trace_statistics") {
  const std::vector<double> x{1.0, 2.0, 3.0, 5.0};
  CHECK(*pearson(x, x) == doctest::Approx(1.0));
  const std::vector<double> c(4, 2.0);
  CHECK_FALSE(pearson(x, c).has_value());
  std::vector<StepDiagnostics> short_trace(5);
  CHECK_THROWS_AS(trace_statistics(short_trace), ValidationError);
}

TEST_CASE("token_cov_quantiles") {
  std::vector<double> c(1000, 0.001);
  c[0] = 5.0;
  const QuantileTable q = token_cov_quantiles(c);
  CHECK(q.count == 1000);
  CHECK(q.max == 5.0);
  CHECK(q.top01_mean == 5.0);
  CHECK(q.top01_mean / q.mean >= 100.0);
  CHECK(q.positive_fraction == 1.0);
}
