#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace entlab {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Probabilities below this floor are clamped before any logarithm.
inline constexpr double kProbFloor = 1e-300;

/// Log-probability moments of one state's action distribution (nats).
struct DistributionStats {
  double mean_log_prob = 0.0;
  double var_log_prob = 0.0;
  double entropy = 0.0;
};

/// Tabular softmax policy: one independent logit per (state, action).
///
/// Values are immutable once constructed; updates produce a new policy.
/// Probabilities use a max-shifted exponential normalization, so adding a
/// constant to every logit of a state does not change anything observable.
class SoftmaxPolicy {
 public:
  SoftmaxPolicy(std::size_t num_states, std::size_t num_actions);
  explicit SoftmaxPolicy(Matrix logits);

  static SoftmaxPolicy uniform(std::size_t num_states, std::size_t num_actions) {
    return SoftmaxPolicy(num_states, num_actions);
  }

  std::size_t num_states() const { return static_cast<std::size_t>(logits_.rows()); }
  std::size_t num_actions() const { return static_cast<std::size_t>(logits_.cols()); }
  std::size_t num_tokens() const { return num_states() * num_actions(); }
  const Matrix& logits() const { return logits_; }

  /// Probability matrix, one row per state. Cached at construction.
  const Matrix& probabilities() const { return probs_; }

  bool operator==(const SoftmaxPolicy& other) const { return logits_ == other.logits_; }

 private:
  Matrix logits_;
  Matrix probs_;
};

Vector action_probabilities(const SoftmaxPolicy& policy, std::size_t state);

/// Floored natural log of the action probabilities of one state.
Vector log_probabilities(const SoftmaxPolicy& policy, std::size_t state);

double state_entropy(const SoftmaxPolicy& policy, std::size_t state);

/// Entropy averaged over states with the given weights (non-negative, sum 1).
double average_entropy(const SoftmaxPolicy& policy, std::span<const double> state_weights);
double average_entropy(const SoftmaxPolicy& policy, const Vector& state_weights);

/// dH_s/dz_{s,a} = -pi(a|s) (log pi(a|s) - mean_log_prob(s)).
Vector entropy_gradient(const SoftmaxPolicy& policy, std::size_t state);

DistributionStats log_prob_stats(const SoftmaxPolicy& policy, std::size_t state);

/// KL(p || q) for two distributions over the same support, floored logs.
double kl_divergence(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q);

}  // namespace entlab
