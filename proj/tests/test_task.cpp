#include <doctest.h>

#include <cmath>

#include "entlab/errors.hpp"
#include "entlab/oracles.hpp"
#include "entlab/task.hpp"
#include "test_support.hpp"

using namespace entlab;
using entlab::testing::policy_from_probs;
using entlab::testing::random_policy;

namespace {

// Two states, two actions, horizon 2, stochastic transitions.
TabularTask small_chain() {
  TabularTask t;
  t.num_states = 2;
  t.num_actions = 2;
  t.horizon = 2;
  t.initial_dist = Vector(2);
  t.initial_dist << 0.7, 0.3;
  t.transition = {0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.0, 1.0};
  t.reward = Matrix(2, 2);
  t.reward << 0.1, 0.4, 1.0, -0.5;
  t.validate();
  return t;
}

}  // namespace

TEST_CASE("bandit advantages by hand") {
  const TabularTask bandit = two_action_bandit();
  for (double p1 : {0.5, 0.2, 0.93}) {
    const SoftmaxPolicy p = policy_from_probs({p1, 1.0 - p1});
    const AdvantageTable t = evaluate_policy(bandit, p);
    CHECK(t.v_values[0] == doctest::Approx(p1).epsilon(1e-12));
    CHECK(t.advantages(0, 0) == doctest::Approx(1.0 - p1).epsilon(1e-12));
    CHECK(t.advantages(0, 1) == doctest::Approx(-p1).epsilon(1e-12));
  }
}

TEST_CASE("expected_reward reference values") {
  const TabularTask bandit = two_action_bandit();
  CHECK(expected_reward(bandit, SoftmaxPolicy::uniform(1, 2)) == doctest::Approx(0.5));
  Matrix z(1, 2);
  z << 1e6, 0.0;
  CHECK(expected_reward(bandit, SoftmaxPolicy(z)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("property: advantages centered, occupancy normalized, A = Q - V") {
  Rng rng(200);
  for (const auto& [name, task] : default_task_suite()) {
    for (int i = 0; i < 100; ++i) {
      const SoftmaxPolicy p = random_policy(rng, task.num_states, task.num_actions, 4.0);
      const AdvantageTable t = evaluate_policy(task, p);
      const Vector centered = p.probabilities().cwiseProduct(t.advantages).rowwise().sum();
      CHECK(centered.cwiseAbs().maxCoeff() <= 1e-10);
      CHECK(std::abs(t.occupancy.sum() - 1.0) <= 1e-9);
      const Matrix diff = t.q_values.colwise() - t.v_values;
      CHECK((diff - t.advantages).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("evaluation agrees with path enumeration") {
  Rng rng(201);
  const TabularTask chain = small_chain();
  for (int i = 0; i < 20; ++i) {
    const SoftmaxPolicy p = random_policy(rng, 2, 2);
    const oracles::EnumeratedValues e = oracles::enumerate_paths(chain, p);
    const AdvantageTable t = evaluate_policy(chain, p);
    // Transition (1, 1) -> 0 has probability zero, which prunes two of the 16 paths.
    CHECK(e.num_paths == 14);
    CHECK((t.q_values - e.q_values).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((t.visitation - e.visitation).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(expected_reward(chain, p) == doctest::Approx(e.expected_reward).epsilon(1e-12));
  }
  const TabularTask delayed = delayed_reward_chain();
  const SoftmaxPolicy p = random_policy(rng, 3, 4);
  CHECK(expected_reward(delayed, p) == doctest::Approx(oracles::enumerate_paths(delayed, p).expected_reward));
}

TEST_CASE("expected_reward on the chain matches Monte Carlo") {
  const TabularTask chain = delayed_reward_chain();
  Rng rng(202);
  const SoftmaxPolicy p = random_policy(rng, 3, 4, 1.5);
  const oracles::MonteCarloEstimate mc = oracles::monte_carlo_reward(chain, p, 1000000, 7);
  CHECK(std::abs(mc.mean - expected_reward(chain, p)) <= 3.0 * mc.std_error);
}

TEST_CASE("policy gradient equals finite differences of J") {
  Rng rng(203);
  for (const auto& [name, task] : default_task_suite()) {
    const SoftmaxPolicy p = random_policy(rng, task.num_states, task.num_actions, 2.0);
    CHECK((policy_gradient(task, p) - oracles::fd_reward_gradient(task, p)).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("sample_batch contract") {
  const TabularTask bandit = two_action_bandit();
  const SoftmaxPolicy p = policy_from_probs({0.7, 0.3});
  CHECK_THROWS_AS(sample_batch(bandit, p, 0, 1), ValidationError);

  const SampledBatch a = sample_batch(bandit, p, 500, 42);
  const SampledBatch b = sample_batch(bandit, p, 500, 42);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].action == b.records[i].action);
    CHECK(a.records[i].log_prob_old == b.records[i].log_prob_old);
    CHECK(a.records[i].log_prob_old <= 0.0);
  }

  const std::size_t n = 100000;
  const SampledBatch big = sample_batch(bandit, p, n, 3);
  double zeros = 0.0;
  for (const SampleRecord& r : big.records) zeros += r.action == 0 ? 1.0 : 0.0;
  const double freq = zeros / static_cast<double>(n);
  CHECK(std::abs(freq - 0.7) <= 3.0 * std::sqrt(0.7 * 0.3 / static_cast<double>(n)));
}

TEST_CASE("sampled chain visits states with the exact frequencies") {
  const TabularTask chain = small_chain();
  Rng rng(204);
  const SoftmaxPolicy p = random_policy(rng, 2, 2);
  const std::size_t n = 50000;
  const SampledBatch batch = sample_batch(chain, p, n, 11);
  const Vector visits = evaluate_policy(chain, p).visitation;
  double s0 = 0.0;
  for (const SampleRecord& r : batch.records) s0 += r.state == 0 ? 1.0 : 0.0;
  const double rate = s0 / static_cast<double>(n);
  // Visits to state 0 per episode lie in [0, 2].
  CHECK(std::abs(rate - visits[0]) <= 3.0 * std::sqrt(1.0 / static_cast<double>(n)));
}

TEST_CASE("brute_force_optimum") {
  const DeterministicOptimum a = brute_force_optimum(two_action_bandit());
  CHECK(a.reward == 1.0);
  CHECK(a.actions == std::vector<std::size_t>{0});
  const DeterministicOptimum b = brute_force_optimum(make_bandit({0.3, 0.9, 0.5}));
  CHECK(b.reward == 0.9);
  CHECK(b.actions == std::vector<std::size_t>{1});
  const TabularTask chain = delayed_reward_chain();
  CHECK(brute_force_optimum(chain).reward == doctest::Approx(optimal_value_iteration(chain)));
  CHECK(brute_force_optimum(small_chain()).reward == doctest::Approx(optimal_value_iteration(small_chain())));
}

TEST_CASE("soft_bandit_optimum") {
  const Vector r = two_action_bandit().reward.row(0).transpose();
  const SoftOptimum half = soft_bandit_optimum(r, 0.5);
  CHECK(half.probabilities[0] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
  CHECK(half.expected_reward == doctest::Approx(0.880797).epsilon(1e-6));
  const SoftOptimum hot = soft_bandit_optimum(r, 1e6);
  CHECK(hot.probabilities[0] == doctest::Approx(0.5).epsilon(1e-5));
  const oracles::GridOptimum grid = oracles::soft_objective_grid_search(r, 0.5, 1e-3);
  CHECK(half.expected_reward + 0.5 * half.entropy >= grid.objective - 1e-12);
  CHECK_THROWS_AS(soft_bandit_optimum(r, 0.0), DomainError);
}

TEST_CASE("task validation") {
  TabularTask t = small_chain();
  t.transition[0] = 0.5;
  CHECK_THROWS_AS(t.validate(), ValidationError);
  t = small_chain();
  t.initial_dist[0] = 0.1;
  CHECK_THROWS_AS(t.validate(), ValidationError);
  t = small_chain();
  t.reward(0, 0) = 1000.0;
  CHECK_THROWS_AS(t.validate(), ValidationError);
  CHECK(two_action_bandit().is_bandit());
  CHECK_FALSE(small_chain().is_bandit());
}
