#include "entlab/task.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "entlab/errors.hpp"
#include "entlab/rng.hpp"

namespace entlab {
namespace {

struct TimeIndexedValues {
  std::vector<Matrix> q;       // q[t](s, a)
  std::vector<Vector> v;       // v[t](s)
  std::vector<Vector> visits;  // P(s_t = s)
};

void check_dims(const TabularTask& task, const SoftmaxPolicy& policy) {
  if (policy.num_states() != task.num_states || policy.num_actions() != task.num_actions) {
    throw ValidationError("policy shape (" + std::to_string(policy.num_states()) + "x" +
                          std::to_string(policy.num_actions()) + ") does not match task (" +
                          std::to_string(task.num_states) + "x" + std::to_string(task.num_actions) +
                          ")");
  }
}

// Backward induction for Q_t, V_t and forward propagation of the state law.
TimeIndexedValues time_indexed_values(const TabularTask& task, const Matrix& probs) {
  const auto S = static_cast<Eigen::Index>(task.num_states);
  const auto A = static_cast<Eigen::Index>(task.num_actions);
  const std::size_t H = task.horizon;
  TimeIndexedValues out;
  out.q.assign(H, Matrix::Zero(S, A));
  out.v.assign(H + 1, Vector::Zero(S));
  for (std::size_t t = H; t-- > 0;) {
    const Vector& next_v = out.v[t + 1];
    for (Eigen::Index s = 0; s < S; ++s) {
      for (Eigen::Index a = 0; a < A; ++a) {
        double cont = 0.0;
        if (t + 1 < H) {
          for (Eigen::Index n = 0; n < S; ++n) {
            cont += task.transition_prob(s, a, n) * next_v[n];
          }
        }
        out.q[t](s, a) = task.reward(s, a) + cont;
      }
      out.v[t][s] = probs.row(s).dot(out.q[t].row(s));
    }
  }
  out.v.pop_back();

  out.visits.assign(H, Vector::Zero(S));
  out.visits[0] = task.initial_dist;
  for (std::size_t t = 0; t + 1 < H; ++t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      const double ds = out.visits[t][s];
      if (ds == 0.0) continue;
      for (Eigen::Index a = 0; a < A; ++a) {
        const double dsa = ds * probs(s, a);
        for (Eigen::Index n = 0; n < S; ++n) out.visits[t + 1][n] += dsa * task.transition_prob(s, a, n);
      }
    }
  }
  return out;
}

TabularTask single_state_task(const Matrix& reward, std::size_t horizon) {
  TabularTask t;
  t.num_states = 1;
  t.num_actions = static_cast<std::size_t>(reward.cols());
  t.horizon = horizon;
  t.initial_dist = Vector::Ones(1);
  t.transition.assign(t.num_actions, 1.0);
  t.reward = reward;
  return t;
}

}  // namespace

void TabularTask::validate() const {
  if (num_states == 0) throw ValidationError("task.num_states must be >= 1");
  if (num_actions == 0) throw ValidationError("task.num_actions must be >= 1");
  if (horizon == 0) throw ValidationError("task.horizon must be >= 1");
  if (static_cast<std::size_t>(initial_dist.size()) != num_states) {
    throw ValidationError("task.initial_dist must have num_states entries");
  }
  double init_total = 0.0;
  for (Eigen::Index s = 0; s < initial_dist.size(); ++s) {
    if (!(initial_dist[s] >= 0.0) || !std::isfinite(initial_dist[s])) {
      throw ValidationError("task.initial_dist entries must be finite and non-negative");
    }
    init_total += initial_dist[s];
  }
  if (std::abs(init_total - 1.0) > 1e-9) throw ValidationError("task.initial_dist must sum to 1");
  if (transition.size() != num_states * num_actions * num_states) {
    throw ValidationError("task.transition must have num_states*num_actions*num_states entries");
  }
  for (std::size_t s = 0; s < num_states; ++s) {
    for (std::size_t a = 0; a < num_actions; ++a) {
      double row = 0.0;
      for (std::size_t n = 0; n < num_states; ++n) {
        const double p = transition_prob(s, a, n);
        if (!(p >= 0.0) || !std::isfinite(p)) {
          throw ValidationError("task.transition entries must be finite and non-negative");
        }
        row += p;
      }
      if (std::abs(row - 1.0) > 1e-9) {
        throw ValidationError("task.transition row (" + std::to_string(s) + ", " +
                              std::to_string(a) + ") must sum to 1");
      }
    }
  }
  if (static_cast<std::size_t>(reward.rows()) != num_states ||
      static_cast<std::size_t>(reward.cols()) != num_actions) {
    throw ValidationError("task.reward must be num_states x num_actions");
  }
  if (!(reward_bound > 0.0)) throw ValidationError("task.reward_bound must be positive");
  if (!reward.allFinite()) throw ValidationError("task.reward entries must be finite");
  if (reward.cwiseAbs().maxCoeff() > reward_bound) {
    throw ValidationError("task.reward exceeds the reward bound");
  }
}

TabularTask make_bandit(std::vector<double> rewards) {
  if (rewards.empty()) throw ValidationError("bandit needs at least one arm");
  Matrix r(1, static_cast<Eigen::Index>(rewards.size()));
  for (std::size_t a = 0; a < rewards.size(); ++a) r(0, static_cast<Eigen::Index>(a)) = rewards[a];
  TabularTask t = single_state_task(r, 1);
  t.validate();
  return t;
}

TabularTask two_action_bandit() { return make_bandit({1.0, 0.0}); }

TabularTask ten_action_bandit() {
  std::vector<double> r(10);
  for (std::size_t a = 0; a < r.size(); ++a) r[a] = static_cast<double>(a) / 9.0;
  return make_bandit(std::move(r));
}

TabularTask delayed_reward_chain() {
  TabularTask t;
  t.num_states = 3;
  t.num_actions = 4;
  t.horizon = 3;
  t.initial_dist = Vector::Zero(3);
  t.initial_dist[0] = 1.0;
  t.transition.assign(3 * 4 * 3, 0.0);
  auto set = [&](std::size_t s, std::size_t a, std::size_t n, double p) {
    t.transition[(s * 4 + a) * 3 + n] = p;
  };
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t advance = std::min<std::size_t>(s + 1, 2);
    set(s, 0, advance, 1.0);
    set(s, 1, s, 1.0);
    set(s, 2, 0, 1.0);
    set(s, 3, advance, 0.5);
    set(s, 3, s, 0.5 + (advance == s ? 0.5 : 0.0));
  }
  t.reward = Matrix::Zero(3, 4);
  t.reward(2, 0) = 1.0;
  t.validate();
  return t;
}

std::vector<std::pair<std::string, TabularTask>> default_task_suite() {
  return {{"bandit2", two_action_bandit()},
          {"bandit10", ten_action_bandit()},
          {"chain3", delayed_reward_chain()}};
}

std::optional<TabularTask> builtin_task(const std::string& name) {
  if (name == "bandit2") return two_action_bandit();
  if (name == "bandit10") return ten_action_bandit();
  if (name == "chain3") return delayed_reward_chain();
  return std::nullopt;
}

AdvantageTable evaluate_policy(const TabularTask& task, const SoftmaxPolicy& policy) {
  check_dims(task, policy);
  const Matrix& probs = policy.probabilities();
  const TimeIndexedValues tv = time_indexed_values(task, probs);
  const auto S = static_cast<Eigen::Index>(task.num_states);
  const auto A = static_cast<Eigen::Index>(task.num_actions);

  AdvantageTable table;
  table.visitation = Vector::Zero(S);
  for (const Vector& d : tv.visits) table.visitation += d;
  table.occupancy = table.visitation / table.visitation.sum();
  table.v_start = tv.v[0];

  table.q_values = Matrix::Zero(S, A);
  for (Eigen::Index s = 0; s < S; ++s) {
    const double w = table.visitation[s];
    for (std::size_t t = 0; t < task.horizon; ++t) {
      // Unreachable states fall back to an unweighted average over timesteps.
      const double wt = w > 0.0 ? tv.visits[t][s] / w : 1.0 / static_cast<double>(task.horizon);
      table.q_values.row(s) += wt * tv.q[t].row(s);
    }
  }
  table.v_values = Vector::Zero(S);
  table.advantages = Matrix::Zero(S, A);
  for (Eigen::Index s = 0; s < S; ++s) {
    table.v_values[s] = probs.row(s).dot(table.q_values.row(s));
    table.advantages.row(s) = table.q_values.row(s).array() - table.v_values[s];
  }
  return table;
}

double expected_reward(const TabularTask& task, const SoftmaxPolicy& policy) {
  check_dims(task, policy);
  const TimeIndexedValues tv = time_indexed_values(task, policy.probabilities());
  return task.initial_dist.dot(tv.v[0]);
}

Matrix policy_gradient(const TabularTask& task, const SoftmaxPolicy& policy) {
  const AdvantageTable table = evaluate_policy(task, policy);
  Matrix g = policy.probabilities().cwiseProduct(table.advantages);
  for (Eigen::Index s = 0; s < g.rows(); ++s) g.row(s) *= table.visitation[s];
  return g;
}

SampledBatch sample_batch(const TabularTask& task, const SoftmaxPolicy& policy,
                          std::size_t num_trajectories, std::uint64_t rng_seed,
                          AdvantageEstimator estimator) {
  check_dims(task, policy);
  if (num_trajectories < 1) throw ValidationError("num_trajectories must be >= 1");
  const Matrix& probs = policy.probabilities();
  const AdvantageTable table = evaluate_policy(task, policy);
  std::optional<TimeIndexedValues> tv;
  if (estimator == AdvantageEstimator::EmpiricalReturn) tv = time_indexed_values(task, probs);

  Rng rng(rng_seed);
  SampledBatch batch;
  batch.rng_seed = rng_seed;
  batch.num_trajectories = num_trajectories;
  batch.records.reserve(num_trajectories * task.horizon);
  std::vector<double> rewards(task.horizon);
  std::vector<double> next_row(task.num_states);
  const std::span<const double> init(task.initial_dist.data(), task.num_states);

  for (std::size_t traj = 0; traj < num_trajectories; ++traj) {
    const std::size_t first = batch.records.size();
    std::size_t s = rng.categorical(init);
    for (std::size_t t = 0; t < task.horizon; ++t) {
      const auto row = probs.row(static_cast<Eigen::Index>(s));
      const std::size_t a = rng.categorical(std::span<const double>(row.data(), task.num_actions));
      SampleRecord rec;
      rec.state = s;
      rec.action = a;
      rec.log_prob_old = std::min(0.0, std::log(std::max(row[static_cast<Eigen::Index>(a)], kProbFloor)));
      rec.trajectory_id = traj;
      rec.timestep = t;
      rec.advantage_estimate = table.advantages(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
      batch.records.push_back(rec);
      rewards[t] = task.reward(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
      if (t + 1 < task.horizon) {
        for (std::size_t n = 0; n < task.num_states; ++n) next_row[n] = task.transition_prob(s, a, n);
        s = rng.categorical(next_row);
      }
    }
    if (tv) {
      double to_go = 0.0;
      for (std::size_t t = task.horizon; t-- > 0;) {
        to_go += rewards[t];
        SampleRecord& rec = batch.records[first + t];
        rec.advantage_estimate = to_go - tv->v[t][static_cast<Eigen::Index>(rec.state)];
      }
    }
  }
  return batch;
}

double deterministic_reward(const TabularTask& task, const std::vector<std::size_t>& actions) {
  if (actions.size() != task.num_states) throw ValidationError("one action per state required");
  Matrix probs = Matrix::Zero(static_cast<Eigen::Index>(task.num_states),
                              static_cast<Eigen::Index>(task.num_actions));
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] >= task.num_actions) throw IndexError("action index out of range");
    probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(actions[s])) = 1.0;
  }
  return task.initial_dist.dot(time_indexed_values(task, probs).v[0]);
}

DeterministicOptimum brute_force_optimum(const TabularTask& task) {
  task.validate();
  const double space = std::pow(static_cast<double>(task.num_actions), static_cast<double>(task.num_states));
  if (space > 1e6) {
    throw CapacityError("brute_force_optimum: " + std::to_string(task.num_actions) + "^" +
                        std::to_string(task.num_states) + " deterministic policies exceeds 1e6");
  }
  std::vector<std::size_t> actions(task.num_states, 0);
  DeterministicOptimum best{deterministic_reward(task, actions), actions};
  for (;;) {
    // Odometer increment over action assignments; first maximizer wins ties.
    std::size_t i = 0;
    while (i < actions.size() && ++actions[i] == task.num_actions) actions[i++] = 0;
    if (i == actions.size()) break;
    const double j = deterministic_reward(task, actions);
    if (j > best.reward) best = {j, actions};
  }
  return best;
}

double optimal_value_iteration(const TabularTask& task) {
  task.validate();
  const auto S = static_cast<Eigen::Index>(task.num_states);
  Vector v = Vector::Zero(S);
  for (std::size_t t = task.horizon; t-- > 0;) {
    Vector next = Vector::Zero(S);
    for (Eigen::Index s = 0; s < S; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < task.num_actions; ++a) {
        double q = task.reward(s, static_cast<Eigen::Index>(a));
        if (t + 1 < task.horizon) {
          for (Eigen::Index n = 0; n < S; ++n) q += task.transition_prob(s, a, n) * v[n];
        }
        best = std::max(best, q);
      }
      next[s] = best;
    }
    v = next;
  }
  return task.initial_dist.dot(v);
}

SoftOptimum soft_bandit_optimum(const Vector& rewards, double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError("alpha must be a positive finite number");
  if (rewards.size() == 0) throw ValidationError("rewards must be non-empty");
  const double shift = rewards.maxCoeff();
  Vector p(rewards.size());
  for (Eigen::Index a = 0; a < rewards.size(); ++a) p[a] = std::exp((rewards[a] - shift) / alpha);
  p /= p.sum();
  SoftOptimum out;
  out.probabilities = p;
  out.expected_reward = p.dot(rewards);
  double h = 0.0;
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    if (p[a] > 0.0) h -= p[a] * std::log(p[a]);
  }
  out.entropy = std::max(h, 0.0);
  return out;
}

}  // namespace entlab
