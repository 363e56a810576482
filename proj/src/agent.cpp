#include "fino/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fino {

namespace {

std::vector<int> net_dims(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> dims;
  dims.push_back(in);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

void concat_rows(const Matrix& a, const Matrix& b, Matrix& out) {
  out.resize(a.rows(), a.cols() + b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    double* row = out.row(i);
    std::copy(a.row(i), a.row(i) + a.cols(), row);
    std::copy(b.row(i), b.row(i) + b.cols(), row + a.cols());
  }
}

}  // namespace

Critic Critic::make(int state_dim, int action_dim, const std::vector<int>& hidden,
                    bool use_min_of_two, Rng& rng) {
  Critic c;
  c.state_dim = state_dim;
  c.action_dim = action_dim;
  c.use_min_of_two = use_min_of_two;
  c.q1 = DenseNet(net_dims(state_dim + action_dim, hidden, 1), rng);
  c.q1_target = c.q1;
  if (use_min_of_two) {
    c.q2 = DenseNet(net_dims(state_dim + action_dim, hidden, 1), rng);
    c.q2_target = c.q2;
  }
  return c;
}

double Critic::q_value(std::span<const double> s, std::span<const double> a) const {
  std::vector<double> in;
  in.reserve(s.size() + a.size());
  in.insert(in.end(), s.begin(), s.end());
  in.insert(in.end(), a.begin(), a.end());
  const double v1 = q1.forward(in)[0];
  if (!use_min_of_two) return v1;
  return std::min(v1, q2.forward(in)[0]);
}

OneStepPolicy OneStepPolicy::make(int state_dim, int action_dim, const std::vector<int>& hidden,
                                  Rng& rng) {
  OneStepPolicy p;
  p.state_dim = state_dim;
  p.action_dim = action_dim;
  p.net = DenseNet(net_dims(state_dim + action_dim, hidden, action_dim), rng);
  return p;
}

std::vector<double> OneStepPolicy::act(std::span<const double> s,
                                       std::span<const double> z) const {
  std::vector<double> in;
  in.reserve(s.size() + z.size());
  in.insert(in.end(), s.begin(), s.end());
  in.insert(in.end(), z.begin(), z.end());
  std::vector<double> a = net.forward(in);
  for (double& v : a) v = std::tanh(v);
  return a;
}

void OneStepPolicy::act_batch(const Matrix& states, const Matrix& z, Matrix& actions) const {
  thread_local ForwardTrace trace;
  Matrix inputs;
  concat_rows(states, z, inputs);
  const Matrix& u = forward_batch(net, inputs, trace);
  actions.resize(u.rows(), u.cols());
  for (size_t i = 0; i < u.size(); ++i) actions.data()[i] = std::tanh(u.data()[i]);
}

// ---------------------------------------------------------------------------
// Critic training

std::vector<double> compute_td_targets(const Critic& critic, const TransitionBatch& batch,
                                       const OneStepPolicy& policy, double discount, Rng& rng) {
  const int b = batch.size();
  Matrix z(b, policy.action_dim);
  for (size_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  Matrix a2;
  policy.act_batch(batch.s2, z, a2);
  Matrix sa;
  concat_rows(batch.s2, a2, sa);
  thread_local ForwardTrace trace;
  std::vector<double> y(b);
  {
    const Matrix& q = forward_batch(critic.q1_target, sa, trace);
    for (int i = 0; i < b; ++i) y[i] = q(i, 0);
  }
  if (critic.use_min_of_two) {
    const Matrix& q = forward_batch(critic.q2_target, sa, trace);
    for (int i = 0; i < b; ++i) y[i] = std::min(y[i], q(i, 0));
  }
  for (int i = 0; i < b; ++i) {
    y[i] = batch.r[i] + discount * (batch.done[i] ? 0.0 : 1.0) * y[i];
    if (!std::isfinite(y[i]))
      throw std::runtime_error("compute_td_targets: non-finite target at batch index " +
                               std::to_string(i));
  }
  return y;
}

GradientBundle critic_regression(const DenseNet& q, const Matrix& states, const Matrix& actions,
                                 const std::vector<double>& y) {
  Matrix sa;
  concat_rows(states, actions, sa);
  const int b = sa.rows();
  return grad(q, sa, [&](const Matrix& out, std::vector<double>& row_loss, Matrix& dy) {
    const double inv_b = 1.0 / b;
    for (int i = 0; i < b; ++i) {
      const double r = out(i, 0) - y[i];
      row_loss[i] = r * r * inv_b;
      dy(i, 0) = 2.0 * r * inv_b;
    }
  });
}

double td_update(Critic& critic, AdamState& opt_q1, AdamState& opt_q2,
                 const TransitionBatch& batch, const OneStepPolicy& policy,
                 const AgentConfig& config, Rng& rng) {
  if (batch.size() == 0) throw std::invalid_argument("td_update: empty batch");
  const std::vector<double> y = compute_td_targets(critic, batch, policy, config.discount, rng);
  GradientBundle g1 = critic_regression(critic.q1, batch.s, batch.a, y);
  adam_step(critic.q1, opt_q1, g1);
  double loss = g1.loss;
  if (critic.use_min_of_two) {
    GradientBundle g2 = critic_regression(critic.q2, batch.s, batch.a, y);
    adam_step(critic.q2, opt_q2, g2);
    loss += g2.loss;
  }
  polyak_update(critic.q1_target, critic.q1, config.tau);
  if (critic.use_min_of_two) polyak_update(critic.q2_target, critic.q2, config.tau);
  return loss;
}

// ---------------------------------------------------------------------------
// Policy training

DistillResult distill_loss(const OneStepPolicy& policy, const VectorFieldNet& flow,
                           const Critic& critic, const Matrix& states, const Matrix& z,
                           double alpha, int flow_steps) {
  const int b = states.rows(), ad = policy.action_dim;
  if (z.rows() != b || z.cols() != ad) throw std::invalid_argument("distill_loss: z shape");

  // flow target a_theta(s, z) from the same z; no gradient flows through it
  Matrix a_flow;
  integrate_flow_batch(flow, states, z, flow_steps, /*clamp=*/true, a_flow);

  thread_local ForwardTrace policy_trace, q1_trace, q2_trace;
  Matrix inputs;
  concat_rows(states, z, inputs);
  const Matrix& u = forward_batch(policy.net, inputs, policy_trace);
  Matrix actions(b, ad);
  for (size_t i = 0; i < u.size(); ++i) actions.data()[i] = std::tanh(u.data()[i]);

  Matrix sa;
  concat_rows(states, actions, sa);
  const Matrix& q1 = forward_batch(critic.q1, sa, q1_trace);
  std::vector<double> q(b);
  std::vector<uint8_t> use_q2(b, 0);
  for (int i = 0; i < b; ++i) q[i] = q1(i, 0);
  if (critic.use_min_of_two) {
    const Matrix& q2 = forward_batch(critic.q2, sa, q2_trace);
    for (int i = 0; i < b; ++i) {
      if (q2(i, 0) < q[i]) {
        q[i] = q2(i, 0);
        use_q2[i] = 1;
      }
    }
  }

  // d loss / d action = -dQ/da + 2 alpha (a - a_flow), all scaled by 1/B
  const double inv_b = 1.0 / b;
  Matrix d_actions(b, ad, 0.0);
  {
    Matrix dq(b, 1), dsa;
    for (int i = 0; i < b; ++i) dq(i, 0) = use_q2[i] ? 0.0 : -inv_b;
    backward_batch(critic.q1, q1_trace, dq, nullptr, &dsa);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < ad; ++j) d_actions(i, j) += dsa(i, policy.state_dim + j);
    if (critic.use_min_of_two) {
      for (int i = 0; i < b; ++i) dq(i, 0) = use_q2[i] ? -inv_b : 0.0;
      backward_batch(critic.q2, q2_trace, dq, nullptr, &dsa);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < ad; ++j) d_actions(i, j) += dsa(i, policy.state_dim + j);
    }
  }

  DistillResult result;
  for (int i = 0; i < b; ++i) {
    double bc = 0.0;
    for (int j = 0; j < ad; ++j) {
      const double diff = actions(i, j) - a_flow(i, j);
      bc += diff * diff;
      d_actions(i, j) += 2.0 * alpha * diff * inv_b;
    }
    const double row_loss = (-q[i] + alpha * bc) * inv_b;
    if (!std::isfinite(row_loss))
      throw std::runtime_error("distill_loss: non-finite loss at batch index " +
                               std::to_string(i));
    result.loss += row_loss;
    result.mean_q += q[i] * inv_b;
    result.mean_bc += bc * inv_b;
  }

  // chain through tanh into the policy net
  Matrix du(b, ad);
  for (size_t i = 0; i < du.size(); ++i) {
    const double a = actions.data()[i];
    du.data()[i] = d_actions.data()[i] * (1.0 - a * a);
  }
  result.policy_grads = make_gradient_bundle(policy.net);
  result.policy_grads.loss = result.loss;
  backward_batch(policy.net, policy_trace, du, &result.policy_grads, nullptr);
  return result;
}

// ---------------------------------------------------------------------------
// Action selection

int default_n_sample(int action_dim) { return std::max(4, (action_dim + 1) / 2); }

std::vector<double> sampling_probs(std::span<const double> q_values, double xi) {
  if (q_values.empty()) throw std::invalid_argument("sampling_probs: empty q list");
  double best = -std::numeric_limits<double>::infinity();
  for (double q : q_values) {
    if (!std::isfinite(q)) throw std::invalid_argument("sampling_probs: non-finite q value");
    best = std::max(best, xi * q);
  }
  std::vector<double> p(q_values.size());
  double sum = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(xi * q_values[i] - best);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

Matrix candidate_actions(const OneStepPolicy& policy, std::span<const double> s, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("candidate_actions: n must be >= 1");
  Matrix states(n, policy.state_dim);
  for (int i = 0; i < n; ++i) std::copy(s.begin(), s.end(), states.row(i));
  Matrix z(n, policy.action_dim);
  for (size_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  Matrix actions;
  policy.act_batch(states, z, actions);
  return actions;
}

namespace {

std::vector<double> score_candidates(const Critic& critic, std::span<const double> s,
                                     const Matrix& actions) {
  const int n = actions.rows();
  Matrix states(n, critic.state_dim);
  for (int i = 0; i < n; ++i) std::copy(s.begin(), s.end(), states.row(i));
  Matrix sa;
  concat_rows(states, actions, sa);
  thread_local ForwardTrace trace;
  std::vector<double> q(n);
  {
    const Matrix& out = forward_batch(critic.q1, sa, trace);
    for (int i = 0; i < n; ++i) q[i] = out(i, 0);
  }
  if (critic.use_min_of_two) {
    const Matrix& out = forward_batch(critic.q2, sa, trace);
    for (int i = 0; i < n; ++i) q[i] = std::min(q[i], out(i, 0));
  }
  return q;
}

}  // namespace

std::vector<double> select_action_explore(const OneStepPolicy& policy, const Critic& critic,
                                          std::span<const double> s, SamplerState& sampler,
                                          Rng& rng) {
  if (sampler.n_sample < 1) throw std::invalid_argument("select_action_explore: n_sample < 1");
  sampler.explore_calls += 1;
  const Matrix actions = candidate_actions(policy, s, sampler.n_sample, rng);
  const std::vector<double> q = score_candidates(critic, s, actions);
  const std::vector<double> p = sampling_probs(q, sampler.xi);
  const double u = rng.uniform();
  double acc = 0.0;
  int pick = static_cast<int>(p.size()) - 1;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) {
      pick = static_cast<int>(i);
      break;
    }
  }
  return {actions.row(pick), actions.row(pick) + actions.cols()};
}

std::vector<double> select_action_eval(const OneStepPolicy& policy, const Critic& critic,
                                       std::span<const double> s, int n, Rng& rng) {
  const Matrix actions = candidate_actions(policy, s, n, rng);
  const std::vector<double> q = score_candidates(critic, s, actions);
  int pick = 0;
  for (size_t i = 1; i < q.size(); ++i)
    if (q[i] > q[pick]) pick = static_cast<int>(i);
  return {actions.row(pick), actions.row(pick) + actions.cols()};
}

double update_temperature(double xi, double entropy, const EntropyController& controller) {
  return xi - controller.xi_learning_rate * (entropy - controller.target_entropy);
}

}  // namespace fino
