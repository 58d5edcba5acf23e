#include <doctest.h>

#include <cmath>

#include "entlab/errors.hpp"
#include "entlab/oracles.hpp"
#include "entlab/policy.hpp"
#include "test_support.hpp"

using namespace entlab;
using entlab::testing::policy_from_probs;
using entlab::testing::random_policy;

TEST_CASE("action_probabilities on hand-computed logits") {
  const SoftmaxPolicy uniform = SoftmaxPolicy::uniform(1, 4);
  for (int a = 0; a < 4; ++a) CHECK(action_probabilities(uniform, 0)[a] == doctest::Approx(0.25).epsilon(1e-15));

  Matrix z(1, 2);
  z << std::log(2.0), 0.0;
  const Vector p = action_probabilities(SoftmaxPolicy(z), 0);
  CHECK(std::abs(p[0] - 2.0 / 3.0) <= 1e-15);
  CHECK(std::abs(p[1] - 1.0 / 3.0) <= 1e-15);

  z << 1000.0, 0.0;
  const Vector big = action_probabilities(SoftmaxPolicy(z), 0);
  CHECK(std::isfinite(big[0]));
  CHECK(std::isfinite(big[1]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(log_probabilities(SoftmaxPolicy(z), 0)[1]));
  CHECK(log_probabilities(SoftmaxPolicy(z), 0)[1] >= std::log(kProbFloor));
}

TEST_CASE("state_entropy reference values") {
  CHECK(std::abs(state_entropy(SoftmaxPolicy::uniform(1, 4), 0) - std::log(4.0)) <= 1e-12);
  Matrix z = Matrix::Zero(1, 5);
  z(0, 2) = 1e6;
  CHECK(std::abs(state_entropy(SoftmaxPolicy(z), 0)) <= 1e-9);
  CHECK(std::abs(state_entropy(policy_from_probs({0.5, 0.25, 0.25}), 0) - 1.5 * std::log(2.0)) <= 1e-12);
  CHECK(state_entropy(policy_from_probs({0.5, 0.25, 0.25}), 0) == doctest::Approx(1.039721).epsilon(1e-6));
}

TEST_CASE("average_entropy is the weighted mean of state entropies") {
  Matrix z(2, 2);
  z << 1e6, 0.0, 0.0, 0.0;
  const SoftmaxPolicy p(z);
  CHECK(std::abs(average_entropy(p, Vector::Constant(2, 0.5)) - 0.5 * std::log(2.0)) <= 1e-12);
  Vector single(2);
  single << 0.0, 1.0;
  CHECK(average_entropy(p, single) == doctest::Approx(state_entropy(p, 1)));
  Vector bad(2);
  bad << 0.7, 0.7;
  CHECK_THROWS_AS(average_entropy(p, bad), ValidationError);
}

TEST_CASE("entropy_gradient closed forms") {
  CHECK(entropy_gradient(SoftmaxPolicy::uniform(1, 6), 0).cwiseAbs().maxCoeff() <= 1e-15);
  const SoftmaxPolicy p = policy_from_probs({0.8, 0.2});
  const double mu = 0.8 * std::log(0.8) + 0.2 * std::log(0.2);
  const Vector g = entropy_gradient(p, 0);
  CHECK(g[0] == doctest::Approx(-0.8 * (std::log(0.8) - mu)).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(-0.2 * (std::log(0.2) - mu)).epsilon(1e-12));
}

TEST_CASE("property: entropy_gradient matches finite differences") {
  Rng rng(100);
  for (int i = 0; i < 200; ++i) {
    const SoftmaxPolicy p = random_policy(rng, 1, 5);
    const Vector g = entropy_gradient(p, 0);
    const Vector fd = oracles::fd_entropy_gradient(p, 0);
    CHECK((g - fd).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("log_prob_stats reference values") {
  CHECK(log_prob_stats(SoftmaxPolicy::uniform(1, 7), 0).var_log_prob == doctest::Approx(0.0));
  const DistributionStats s = log_prob_stats(policy_from_probs({0.9, 0.1}), 0);
  CHECK(s.var_log_prob == doctest::Approx(0.9 * 0.1 * std::pow(std::log(9.0), 2)).epsilon(1e-12));
  CHECK(s.var_log_prob == doctest::Approx(0.434502).epsilon(1e-6));
  Matrix z(1, 2);
  z << 0.0, std::log(1e-9);
  const DistributionStats near = log_prob_stats(SoftmaxPolicy(z), 0);
  CHECK(std::isfinite(near.var_log_prob));
  CHECK(std::isfinite(near.entropy));
  CHECK(std::isfinite(near.mean_log_prob));
}

TEST_CASE("property: normalization, shift invariance and entropy moments") {
  Rng rng(101);
  for (int i = 0; i < 300; ++i) {
    const std::size_t actions = 1 + static_cast<std::size_t>(rng.below(12));
    const SoftmaxPolicy p = random_policy(rng, 3, actions, 20.0);
    Matrix shifted = p.logits();
    for (Eigen::Index s = 0; s < 3; ++s) shifted.row(s).array() += 50.0 * (rng.uniform01() - 0.5);
    const SoftmaxPolicy q(shifted);
    for (std::size_t s = 0; s < 3; ++s) {
      const Vector ps = action_probabilities(p, s);
      CHECK(std::abs(ps.sum() - 1.0) <= 1e-12);
      CHECK(ps.minCoeff() >= kProbFloor);
      CHECK((ps - action_probabilities(q, s)).cwiseAbs().maxCoeff() <= 1e-12);
      const DistributionStats st = log_prob_stats(p, s);
      CHECK(st.var_log_prob >= 0.0);
      CHECK(st.entropy >= 0.0);
      CHECK(st.entropy <= std::log(static_cast<double>(actions)) + 1e-12);
      CHECK(std::abs(st.entropy + st.mean_log_prob) <= 1e-12);
    }
  }
}

TEST_CASE("kl_divergence") {
  Vector p(2);
  p << 0.5, 0.5;
  Vector q(2);
  q << 0.9, 0.1;
  CHECK(kl_divergence(p, p) == doctest::Approx(0.0));
  CHECK(kl_divergence(p, q) == doctest::Approx(0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1)));
}

TEST_CASE("invalid logits are rejected") {
  Matrix z(1, 2);
  z << std::nan(""), 0.0;
  CHECK_THROWS_AS(SoftmaxPolicy{z}, DomainError);
  CHECK_THROWS_AS(state_entropy(SoftmaxPolicy::uniform(2, 2), 2), IndexError);
}
