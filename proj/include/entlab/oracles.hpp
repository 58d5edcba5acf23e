#pragma once

// Reference computations used only by the test and verification suites. Each
// one reaches its answer by a route independent of the library code it checks.

#include <cstddef>
#include <cstdint>

#include "entlab/policy.hpp"
#include "entlab/task.hpp"

namespace entlab::oracles {

/// Central differences of state_entropy with respect to the state's logits.
Vector fd_entropy_gradient(const SoftmaxPolicy& policy, std::size_t state, double h = 1e-6);

/// Central differences of expected_reward with respect to every logit.
Matrix fd_reward_gradient(const TabularTask& task, const SoftmaxPolicy& policy, double h = 1e-6);

/// Values obtained by walking every state-action path of the horizon.
struct EnumeratedValues {
  double expected_reward = 0.0;
  /// Visit-weighted Q (same convention as AdvantageTable::q_values).
  Matrix q_values;
  Vector v_values;
  /// Expected visits per episode.
  Vector visitation;
  std::size_t num_paths = 0;
};

EnumeratedValues enumerate_paths(const TabularTask& task, const SoftmaxPolicy& policy);

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Plain episode rollouts with their own inverse-CDF sampling loop.
MonteCarloEstimate monte_carlo_reward(const TabularTask& task, const SoftmaxPolicy& policy,
                                      std::size_t episodes, std::uint64_t seed);

struct GridOptimum {
  Vector probabilities;
  double objective = 0.0;
};

/// Maximizes E_p[r] + alpha * H(p) over a grid of the simplex with the given
/// spacing. Two or three arms.
GridOptimum soft_objective_grid_search(const Vector& rewards, double alpha, double spacing);

/// Largest gamma with KL(p || softmax(log p + gamma * d)) <= epsilon for two
/// actions, from the closed-form Bernoulli KL and plain bisection.
double two_action_stability_root(double p0, double d0, double d1, double epsilon);

/// Variance of a component after it is zeroed with probability q, given its
/// unclipped mean and variance (law of total variance).
double clipped_variance(double mean, double variance, double q);

}  // namespace entlab::oracles
