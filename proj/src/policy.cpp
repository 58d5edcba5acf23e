#include "entlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "entlab/errors.hpp"

namespace entlab {
namespace {

void softmax_rows(const Matrix& logits, Matrix& probs) {
  probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index s = 0; s < logits.rows(); ++s) {
    const double shift = logits.row(s).maxCoeff();
    double total = 0.0;
    for (Eigen::Index a = 0; a < logits.cols(); ++a) {
      const double e = std::exp(logits(s, a) - shift);
      probs(s, a) = e;
      total += e;
    }
    probs.row(s) /= total;
  }
}

void check_state(const SoftmaxPolicy& policy, std::size_t state) {
  if (state >= policy.num_states()) {
    throw IndexError("state index " + std::to_string(state) + " out of range [0, " +
                     std::to_string(policy.num_states()) + ")");
  }
}

}  // namespace

SoftmaxPolicy::SoftmaxPolicy(std::size_t num_states, std::size_t num_actions)
    : SoftmaxPolicy(Matrix::Zero(static_cast<Eigen::Index>(num_states),
                                 static_cast<Eigen::Index>(num_actions))) {}

SoftmaxPolicy::SoftmaxPolicy(Matrix logits) : logits_(std::move(logits)) {
  if (logits_.rows() == 0 || logits_.cols() == 0) {
    throw ValidationError("policy needs at least one state and one action");
  }
  if (!logits_.allFinite()) throw DomainError("policy logits must be finite");
  softmax_rows(logits_, probs_);
}

Vector action_probabilities(const SoftmaxPolicy& policy, std::size_t state) {
  check_state(policy, state);
  return policy.probabilities().row(static_cast<Eigen::Index>(state)).transpose();
}

Vector log_probabilities(const SoftmaxPolicy& policy, std::size_t state) {
  check_state(policy, state);
  const auto row = policy.probabilities().row(static_cast<Eigen::Index>(state));
  Vector out(row.size());
  for (Eigen::Index a = 0; a < row.size(); ++a) out[a] = std::log(std::max(row[a], kProbFloor));
  return out;
}

DistributionStats log_prob_stats(const SoftmaxPolicy& policy, std::size_t state) {
  const Vector p = action_probabilities(policy, state);
  const Vector lp = log_probabilities(policy, state);
  DistributionStats st;
  st.mean_log_prob = p.dot(lp);
  double var = 0.0;
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    const double d = lp[a] - st.mean_log_prob;
    var += p[a] * d * d;
  }
  st.var_log_prob = var;
  // Floored zero-probability actions contribute p*log p = 0*(-690.8) = 0.
  st.entropy = std::clamp(-st.mean_log_prob, 0.0, std::log(static_cast<double>(p.size())));
  return st;
}

double state_entropy(const SoftmaxPolicy& policy, std::size_t state) {
  return log_prob_stats(policy, state).entropy;
}

double average_entropy(const SoftmaxPolicy& policy, std::span<const double> state_weights) {
  if (state_weights.size() != policy.num_states()) {
    throw ValidationError("state weight vector has " + std::to_string(state_weights.size()) +
                          " entries, policy has " + std::to_string(policy.num_states()) +
                          " states");
  }
  double total = 0.0;
  for (double w : state_weights) {
    if (!(w >= 0.0)) throw ValidationError("state weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("state weights must sum to 1");
  double h = 0.0;
  for (std::size_t s = 0; s < state_weights.size(); ++s) {
    if (state_weights[s] > 0.0) h += state_weights[s] * state_entropy(policy, s);
  }
  return h;
}

double average_entropy(const SoftmaxPolicy& policy, const Vector& state_weights) {
  return average_entropy(policy, std::span<const double>(state_weights.data(),
                                                         static_cast<std::size_t>(state_weights.size())));
}

Vector entropy_gradient(const SoftmaxPolicy& policy, std::size_t state) {
  const Vector p = action_probabilities(policy, state);
  const Vector lp = log_probabilities(policy, state);
  const double mu = p.dot(lp);
  return -(p.array() * (lp.array() - mu)).matrix();
}

double kl_divergence(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q) {
  if (p.size() != q.size()) throw ValidationError("kl_divergence: size mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * (std::log(std::max(p[i], kProbFloor)) - std::log(std::max(q[i], kProbFloor)));
  }
  return std::max(kl, 0.0);
}

}  // namespace entlab
