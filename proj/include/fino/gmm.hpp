#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fino/agent.hpp"
#include "fino/matrix.hpp"
#include "fino/rng.hpp"

namespace fino {

/// K-component Gaussian mixture with full covariances.
struct GmmModel {
  std::vector<double> weights;        // [K], sums to 1
  Matrix means;                       // [K x d]
  std::vector<Matrix> covariances;    // K of [d x d], symmetric PD

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return means.cols(); }
};

struct EmConfig {
  int max_iterations = 100;
  double tolerance = 1e-6;  // absolute change in mean log-likelihood per sample
  double jitter = 1e-6;     // added to covariance diagonals
  uint64_t seed = 0;        // k-means++ seeding
};

struct EmTrace {
  std::vector<double> log_likelihood;  // total logL per iteration
  int iterations = 0;
};

/// Expectation-maximization fit with k-means++ initial means. Per-iteration
/// responsibilities sum to 1 over components for every sample, and the total
/// log-likelihood is non-decreasing up to jitter-induced slack.
GmmModel fit_em(const Matrix& samples, int k, const EmConfig& config, EmTrace* trace = nullptr);

/// Mixture-entropy surrogate in nats:
/// sum_k pi_k (-log pi_k + 0.5 log((2 pi e)^d |Sigma_k|)).
double gmm_entropy(const GmmModel& model);

/// Fills `action` from (state, z); z is a standard-normal draw of action dim.
using StateActionSampler = std::function<void(
    std::span<const double> state, std::span<const double> z, std::span<double> action)>;

/// For each state row: draw actions_per_state actions, fit a K-component
/// mixture, evaluate the entropy surrogate; returns the mean across states.
double estimate_entropy(const StateActionSampler& sampler, const Matrix& states, int action_dim,
                        int actions_per_state, int k, const EmConfig& config, Rng& rng);

double estimate_policy_entropy(const OneStepPolicy& policy, const Matrix& states,
                               int actions_per_state, int k, const EmConfig& config, Rng& rng);

}  // namespace fino
