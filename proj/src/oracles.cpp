#include "entlab/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "entlab/errors.hpp"
#include "entlab/rng.hpp"

namespace entlab::oracles {

Vector fd_entropy_gradient(const SoftmaxPolicy& policy, std::size_t state, double h) {
  const auto row = static_cast<Eigen::Index>(state);
  Vector grad(policy.logits().cols());
  for (Eigen::Index a = 0; a < grad.size(); ++a) {
    Matrix plus = policy.logits();
    Matrix minus = policy.logits();
    plus(row, a) += h;
    minus(row, a) -= h;
    grad[a] = (state_entropy(SoftmaxPolicy(plus), state) - state_entropy(SoftmaxPolicy(minus), state)) / (2.0 * h);
  }
  return grad;
}

Matrix fd_reward_gradient(const TabularTask& task, const SoftmaxPolicy& policy, double h) {
  Matrix grad(policy.logits().rows(), policy.logits().cols());
  for (Eigen::Index s = 0; s < grad.rows(); ++s) {
    for (Eigen::Index a = 0; a < grad.cols(); ++a) {
      Matrix plus = policy.logits();
      Matrix minus = policy.logits();
      plus(s, a) += h;
      minus(s, a) -= h;
      grad(s, a) = (expected_reward(task, SoftmaxPolicy(plus)) - expected_reward(task, SoftmaxPolicy(minus))) /
                   (2.0 * h);
    }
  }
  return grad;
}

EnumeratedValues enumerate_paths(const TabularTask& task, const SoftmaxPolicy& policy) {
  const auto S = static_cast<Eigen::Index>(task.num_states);
  const auto A = static_cast<Eigen::Index>(task.num_actions);
  const Matrix& pi = policy.probabilities();
  // Path-weighted sums of return-to-go for each (s, a) and s occurrence.
  Matrix q_num = Matrix::Zero(S, A);
  Matrix sa_visits = Matrix::Zero(S, A);
  Vector v_num = Vector::Zero(S);
  Vector s_visits = Vector::Zero(S);
  EnumeratedValues out;

  std::vector<std::pair<Eigen::Index, Eigen::Index>> path;
  const std::function<void(Eigen::Index, double)> walk = [&](Eigen::Index s, double prob) {
    for (Eigen::Index a = 0; a < A; ++a) {
      const double pa = prob * pi(s, a);
      if (pa == 0.0) continue;
      path.emplace_back(s, a);
      if (path.size() == task.horizon) {
        ++out.num_paths;
        double ret = 0.0;
        for (std::size_t t = path.size(); t-- > 0;) {
          ret += task.reward(path[t].first, path[t].second);
          q_num(path[t].first, path[t].second) += pa * ret;
          sa_visits(path[t].first, path[t].second) += pa;
          v_num[path[t].first] += pa * ret;
          s_visits[path[t].first] += pa;
        }
        out.expected_reward += pa * ret;
      } else {
        for (Eigen::Index n = 0; n < S; ++n) {
          const double pn = task.transition_prob(static_cast<std::size_t>(s), static_cast<std::size_t>(a),
                                                 static_cast<std::size_t>(n));
          if (pn > 0.0) walk(n, pa * pn);
        }
      }
      path.pop_back();
    }
  };
  for (Eigen::Index s = 0; s < S; ++s) {
    if (task.initial_dist[s] > 0.0) walk(s, task.initial_dist[s]);
  }
  out.q_values = Matrix::Zero(S, A);
  out.v_values = Vector::Zero(S);
  for (Eigen::Index s = 0; s < S; ++s) {
    if (s_visits[s] > 0.0) out.v_values[s] = v_num[s] / s_visits[s];
    for (Eigen::Index a = 0; a < A; ++a) {
      if (sa_visits(s, a) > 0.0) out.q_values(s, a) = q_num(s, a) / sa_visits(s, a);
    }
  }
  out.visitation = s_visits;
  return out;
}

MonteCarloEstimate monte_carlo_reward(const TabularTask& task, const SoftmaxPolicy& policy, std::size_t episodes,
                                      std::uint64_t seed) {
  if (episodes < 2) throw ValidationError("monte_carlo_reward: needs at least 2 episodes");
  Rng rng(seed);
  const auto draw = [&rng](const auto& weights, Eigen::Index n) {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      acc += weights(i);
      if (u < acc) return i;
    }
    return n - 1;
  };
  const auto S = static_cast<Eigen::Index>(task.num_states);
  const auto A = static_cast<Eigen::Index>(task.num_actions);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    Eigen::Index s = draw(task.initial_dist, S);
    double ret = 0.0;
    for (std::size_t t = 0; t < task.horizon; ++t) {
      const Vector p = policy.probabilities().row(s).transpose();
      const Eigen::Index a = draw(p, A);
      ret += task.reward(s, a);
      Vector next(S);
      for (Eigen::Index n = 0; n < S; ++n) {
        next[n] = task.transition_prob(static_cast<std::size_t>(s), static_cast<std::size_t>(a),
                                       static_cast<std::size_t>(n));
      }
      s = draw(next, S);
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  const double n = static_cast<double>(episodes);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

GridOptimum soft_objective_grid_search(const Vector& rewards, double alpha, double spacing) {
  const auto objective = [&](const Vector& p) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    }
    return p.dot(rewards) + alpha * h;
  };
  const auto steps = static_cast<long>(std::llround(1.0 / spacing));
  GridOptimum best{Vector(), -std::numeric_limits<double>::infinity()};
  const auto consider = [&](const Vector& p) {
    const double f = objective(p);
    if (f > best.objective) best = {p, f};
  };
  if (rewards.size() == 2) {
    for (long i = 0; i <= steps; ++i) {
      const double x = static_cast<double>(i) / static_cast<double>(steps);
      consider((Vector(2) << x, 1.0 - x).finished());
    }
  } else if (rewards.size() == 3) {
    for (long i = 0; i <= steps; ++i) {
      for (long j = 0; i + j <= steps; ++j) {
        const double x = static_cast<double>(i) / static_cast<double>(steps);
        const double y = static_cast<double>(j) / static_cast<double>(steps);
        consider((Vector(3) << x, y, std::max(0.0, 1.0 - x - y)).finished());
      }
    }
  } else {
    throw ValidationError("soft_objective_grid_search: two or three arms only");
  }
  return best;
}

double two_action_stability_root(double p0, double d0, double d1, double epsilon) {
  const double logit = std::log(p0) - std::log1p(-p0);
  const auto kl = [&](double gamma) {
    const double q0 = 1.0 / (1.0 + std::exp(-(logit + gamma * (d0 - d1))));
    return p0 * std::log(p0 / q0) + (1.0 - p0) * std::log((1.0 - p0) / (1.0 - q0));
  };
  double lo = 0.0;
  double hi = 1.0;
  while (kl(hi) <= epsilon) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (kl(mid) <= epsilon ? lo : hi) = mid;
  }
  return lo;
}

double clipped_variance(double mean, double variance, double q) {
  return (1.0 - q) * variance + q * (1.0 - q) * mean * mean;
}

}  // namespace entlab::oracles
