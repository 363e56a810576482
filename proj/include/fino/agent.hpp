#pragma once

#include <span>
#include <vector>

#include "fino/env.hpp"
#include "fino/flow.hpp"
#include "fino/net.hpp"

namespace fino {

struct AgentConfig {
  double bc_coefficient = 1.0;  // alpha in the distillation objective
  double discount = 0.99;
  double tau = 0.005;
  int batch_size = 256;
};

/// Q network(s) over (s, a) with Polyak-averaged target copies. With
/// use_min_of_two, the minimum of the two critics scores both TD targets and
/// candidate actions.
struct Critic {
  int state_dim = 0;
  int action_dim = 0;
  bool use_min_of_two = false;
  DenseNet q1, q1_target;
  DenseNet q2, q2_target;

  static Critic make(int state_dim, int action_dim, const std::vector<int>& hidden,
                     bool use_min_of_two, Rng& rng);

  /// Online-critic value (min of the pair when enabled).
  double q_value(std::span<const double> s, std::span<const double> a) const;
};

/// Direct noise-to-action map distilled from the flow policy; the raw net
/// output is squashed into [-1,1]^d with tanh.
struct OneStepPolicy {
  int state_dim = 0;
  int action_dim = 0;
  DenseNet net;  // input [s, z] -> pre-squash action

  static OneStepPolicy make(int state_dim, int action_dim, const std::vector<int>& hidden,
                            Rng& rng);

  std::vector<double> act(std::span<const double> s, std::span<const double> z) const;
  /// states [B x sd], z [B x ad] -> actions [B x ad]
  void act_batch(const Matrix& states, const Matrix& z, Matrix& actions) const;
};

// ---------------------------------------------------------------------------
// Critic training

/// r + gamma * (1-done) * Qbar(s', a'), a' from the policy at s' with fresh z.
/// Uses the target critics (min of the two when enabled).
std::vector<double> compute_td_targets(const Critic& critic, const TransitionBatch& batch,
                                       const OneStepPolicy& policy, double discount, Rng& rng);

/// Mean squared TD error gradient for one online critic net against fixed
/// targets y; exposed separately so gradients can be oracle-checked.
GradientBundle critic_regression(const DenseNet& q, const Matrix& states, const Matrix& actions,
                                 const std::vector<double>& y);

/// One TD gradient step on the online critic(s) followed by a Polyak update
/// of the targets. Returns the (summed over critics) loss.
double td_update(Critic& critic, AdamState& opt_q1, AdamState& opt_q2,
                 const TransitionBatch& batch, const OneStepPolicy& policy,
                 const AgentConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Policy training

struct DistillResult {
  GradientBundle policy_grads;
  double loss = 0.0;
  double mean_q = 0.0;
  double mean_bc = 0.0;
};

/// Eq.-style one-step policy objective: mean over the batch of
/// -Q(s, a_w(s,z)) + alpha * ||a_w(s,z) - a_flow(s,z)||^2, with the same z
/// feeding the policy and the Euler-integrated flow sample. Gradients flow
/// into the policy only.
DistillResult distill_loss(const OneStepPolicy& policy, const VectorFieldNet& flow,
                           const Critic& critic, const Matrix& states, const Matrix& z,
                           double alpha, int flow_steps);

// ---------------------------------------------------------------------------
// Action selection

struct SamplerState {
  double xi = 1.0;
  int n_sample = 4;
  long explore_calls = 0;  // offline phases must never touch the sampler
};

struct EntropyController {
  double target_entropy = -2.0;  // -dim(A)
  double xi_learning_rate = 0.01;
  int update_interval = 2000;  // N_xi
};

/// max(4, ceil(action_dim / 2))
int default_n_sample(int action_dim);

/// Softmax over xi * q with max subtraction; sums to 1 within 1e-12.
std::vector<double> sampling_probs(std::span<const double> q_values, double xi);

/// n actions from independent z draws; rows of the result are actions.
Matrix candidate_actions(const OneStepPolicy& policy, std::span<const double> s, int n, Rng& rng);

/// Draws candidates, scores them with the online critic and samples the
/// executed action from the softmax distribution.
std::vector<double> select_action_explore(const OneStepPolicy& policy, const Critic& critic,
                                          std::span<const double> s, SamplerState& sampler,
                                          Rng& rng);

/// Deterministic argmax over candidates by Q; ties break to the lowest index.
std::vector<double> select_action_eval(const OneStepPolicy& policy, const Critic& critic,
                                       std::span<const double> s, int n, Rng& rng);

/// xi - rate * (entropy - target); no clipping.
double update_temperature(double xi, double entropy, const EntropyController& controller);

}  // namespace fino
