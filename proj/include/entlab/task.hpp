#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "entlab/policy.hpp"

namespace entlab {

/// Finite-horizon tabular MDP; a one-state, horizon-1 task is a bandit.
///
/// Rewards are per (state, action) and summed over the horizon. transition is
/// stored row-major as [state][action][next_state].
struct TabularTask {
  std::size_t num_states = 1;
  std::size_t num_actions = 1;
  std::size_t horizon = 1;
  Vector initial_dist;
  std::vector<double> transition;
  Matrix reward;
  double reward_bound = 100.0;

  double transition_prob(std::size_t s, std::size_t a, std::size_t next) const {
    return transition[(s * num_actions + a) * num_states + next];
  }
  bool is_bandit() const { return num_states == 1 && horizon == 1; }

  /// Throws ValidationError naming the first violated invariant.
  void validate() const;
};

TabularTask make_bandit(std::vector<double> rewards);

/// Default desk-scale suite members.
TabularTask two_action_bandit();  // rewards (1, 0)
TabularTask ten_action_bandit();  // rewards evenly spaced over [0, 1]
/// 3 states, 4 actions, horizon 3. Start in state 0; the only reward (1.0) is
/// taking action 0 ("advance") in state 2, so it is reachable only at t = 2.
/// Actions: 0 advance, 1 stay, 2 reset to state 0, 3 advance with prob 0.5.
TabularTask delayed_reward_chain();

std::vector<std::pair<std::string, TabularTask>> default_task_suite();

/// Builtin task by name: "bandit2", "bandit10", "chain3".
std::optional<TabularTask> builtin_task(const std::string& name);

/// Exact values of a policy. Q and V are averages of the per-timestep values
/// weighted by the probability of visiting the state at each timestep, so that
/// visitation(s) * pi(a|s) * A(s,a) is exactly dJ/dz_{s,a}.
struct AdvantageTable {
  Matrix q_values;
  Vector v_values;
  Matrix advantages;
  /// Per-timestep state distributions averaged over the horizon; sums to 1.
  Vector occupancy;
  /// Expected number of visits to each state in one episode (occupancy * horizon).
  Vector visitation;
  /// Values at t = 0; expected reward is initial_dist . v_start.
  Vector v_start;
};

AdvantageTable evaluate_policy(const TabularTask& task, const SoftmaxPolicy& policy);
double expected_reward(const TabularTask& task, const SoftmaxPolicy& policy);

/// Exact dJ/dz for the tabular softmax policy.
Matrix policy_gradient(const TabularTask& task, const SoftmaxPolicy& policy);

enum class AdvantageEstimator {
  /// Attach the exact A(s,a) of evaluate_policy to each sampled pair.
  Exact,
  /// Return-to-go minus the exact time-indexed state value V_t(s).
  EmpiricalReturn,
};

struct SampleRecord {
  std::size_t state = 0;
  std::size_t action = 0;
  double log_prob_old = 0.0;
  double advantage_estimate = 0.0;
  std::size_t trajectory_id = 0;
  std::size_t timestep = 0;
};

struct SampledBatch {
  std::vector<SampleRecord> records;
  std::uint64_t rng_seed = 0;
  std::size_t num_trajectories = 0;
};

SampledBatch sample_batch(const TabularTask& task, const SoftmaxPolicy& policy,
                          std::size_t num_trajectories, std::uint64_t rng_seed,
                          AdvantageEstimator estimator = AdvantageEstimator::Exact);

struct DeterministicOptimum {
  double reward = 0.0;
  /// Chosen action per state.
  std::vector<std::size_t> actions;
};

/// Best deterministic stationary policy by exhaustive enumeration.
/// Throws CapacityError when num_actions^num_states exceeds 1e6.
DeterministicOptimum brute_force_optimum(const TabularTask& task);

/// Optimal (possibly non-stationary) finite-horizon value by backward induction.
double optimal_value_iteration(const TabularTask& task);

/// Exact expected reward of the deterministic stationary policy s -> actions[s].
double deterministic_reward(const TabularTask& task, const std::vector<std::size_t>& actions);

struct SoftOptimum {
  Vector probabilities;
  double expected_reward = 0.0;
  double entropy = 0.0;
};

/// Maximizer of E_pi[r] + alpha * H(pi) on a one-step bandit: pi ~ exp(r / alpha).
SoftOptimum soft_bandit_optimum(const Vector& rewards, double alpha);

}  // namespace entlab
