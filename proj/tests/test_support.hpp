#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "entlab/policy.hpp"
#include "entlab/rng.hpp"
#include "entlab/task.hpp"

namespace entlab::testing {

// Logits uniform in [-scale, scale].
inline SoftmaxPolicy random_policy(Rng& rng, std::size_t states, std::size_t actions, double scale = 3.0) {
  Matrix z(static_cast<Eigen::Index>(states), static_cast<Eigen::Index>(actions));
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = scale * (2.0 * rng.uniform01() - 1.0);
  return SoftmaxPolicy(std::move(z));
}

inline SoftmaxPolicy policy_from_probs(const std::vector<double>& p) {
  Matrix z(1, static_cast<Eigen::Index>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) z(0, static_cast<Eigen::Index>(i)) = std::log(p[i]);
  return SoftmaxPolicy(std::move(z));
}

inline TabularTask random_bandit(Rng& rng, std::size_t actions) {
  std::vector<double> r(actions);
  for (double& x : r) x = rng.uniform01();
  return make_bandit(r);
}

inline std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.uniform01();
  return v;
}

}  // namespace entlab::testing
