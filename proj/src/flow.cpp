#include "fino/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fino {

VectorFieldNet VectorFieldNet::make(int state_dim, int action_dim, const std::vector<int>& hidden,
                                    Rng& rng) {
  if (state_dim < 0 || action_dim <= 0)
    throw std::invalid_argument("VectorFieldNet: bad dimensions");
  std::vector<int> dims;
  dims.push_back(1 + state_dim + action_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(action_dim);
  VectorFieldNet f;
  f.state_dim = state_dim;
  f.action_dim = action_dim;
  f.net = DenseNet(dims, rng);
  return f;
}

std::vector<double> VectorFieldNet::evaluate(double t, std::span<const double> state,
                                             std::span<const double> x) const {
  std::vector<double> in;
  in.reserve(1 + state.size() + x.size());
  in.push_back(t);
  in.insert(in.end(), state.begin(), state.end());
  in.insert(in.end(), x.begin(), x.end());
  return net.forward(in);
}

TargetMode parse_target_mode(const std::string& name) {
  if (name == "exact") return TargetMode::exact;
  if (name == "plain") return TargetMode::plain;
  throw std::invalid_argument("unknown target mode: " + name);
}

std::string target_mode_name(TargetMode m) { return m == TargetMode::exact ? "exact" : "plain"; }

FlowBatch make_flow_batch(const Matrix& states, const Matrix& actions,
                          const NoiseSchedule& schedule, Rng& rng) {
  if (states.rows() != actions.rows())
    throw std::invalid_argument("make_flow_batch: batch length mismatch");
  const int b = actions.rows(), d = actions.cols();
  FlowBatch batch;
  batch.states = states;
  batch.x1 = actions;
  batch.x0.resize(b, d);
  batch.eps.resize(b, d);
  batch.t.resize(b);
  for (int i = 0; i < b; ++i) {
    batch.t[i] = rng.uniform();
    const double sigma = schedule_sigma(schedule, batch.t[i]);
    for (int j = 0; j < d; ++j) {
      batch.x0(i, j) = rng.normal();
      batch.eps(i, j) = sigma * rng.normal();
    }
  }
  return batch;
}

GradientBundle flow_regression(const VectorFieldNet& field, const Matrix& states,
                               const std::vector<double>& t, const Matrix& x,
                               const Matrix& targets) {
  const int b = x.rows();
  if (states.rows() != b || static_cast<int>(t.size()) != b || !targets.same_shape(x))
    throw std::invalid_argument("flow_regression: inconsistent batch");
  Matrix inputs(b, 1 + field.state_dim + field.action_dim);
  for (int i = 0; i < b; ++i) {
    double* row = inputs.row(i);
    row[0] = t[i];
    for (int j = 0; j < field.state_dim; ++j) row[1 + j] = states(i, j);
    for (int j = 0; j < field.action_dim; ++j) row[1 + field.state_dim + j] = x(i, j);
  }
  // mean over batch of || v - target ||^2
  return grad(field.net, inputs,
              [&](const Matrix& y, std::vector<double>& row_loss, Matrix& dy) {
                const double inv_b = 1.0 / b;
                for (int i = 0; i < b; ++i) {
                  const double* yi = y.row(i);
                  const double* ti = targets.row(i);
                  double* di = dy.row(i);
                  double acc = 0.0;
                  for (int j = 0; j < y.cols(); ++j) {
                    const double r = yi[j] - ti[j];
                    acc += r * r;
                    di[j] = 2.0 * r * inv_b;
                  }
                  row_loss[i] = acc * inv_b;
                }
              });
}

GradientBundle fino_loss(const VectorFieldNet& field, const FlowBatch& batch,
                         const NoiseSchedule& schedule, TargetMode mode) {
  const int b = batch.size(), d = field.action_dim;
  if (batch.x0.rows() != b || batch.eps.rows() != b || batch.states.rows() != b ||
      static_cast<int>(batch.t.size()) != b)
    throw std::invalid_argument("fino_loss: inconsistent batch");
  const double keep = (mode == TargetMode::exact) ? 1.0 - schedule.eta : 1.0;
  Matrix x(b, d), targets(b, d);
  for (int i = 0; i < b; ++i) {
    const double t = batch.t[i];
    for (int j = 0; j < d; ++j) {
      x(i, j) = (1.0 - t) * batch.x0(i, j) + t * batch.x1(i, j) + batch.eps(i, j);
      targets(i, j) = batch.x1(i, j) - keep * batch.x0(i, j);
    }
  }
  return flow_regression(field, batch.states, batch.t, x, targets);
}

void clamp_to_box(std::span<double> v) {
  for (double& x : v) x = std::clamp(x, -1.0, 1.0);
}

std::vector<double> integrate_flow(const VectorFieldNet& field, std::span<const double> state,
                                   std::span<const double> z, int steps) {
  if (steps < 1) throw std::invalid_argument("integrate_flow: steps must be >= 1");
  if (static_cast<int>(z.size()) != field.action_dim)
    throw std::invalid_argument("integrate_flow: z has wrong dimension");
  std::vector<double> x(z.begin(), z.end());
  const double h = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const std::vector<double> v = field.evaluate(k * h, state, x);
    for (int j = 0; j < field.action_dim; ++j) {
      x[j] += h * v[j];
      if (!std::isfinite(x[j]))
        throw std::runtime_error("integrate_flow: non-finite value at step " + std::to_string(k));
    }
  }
  return x;
}

std::vector<double> sample_action(const VectorFieldNet& field, std::span<const double> state,
                                  std::span<const double> z, int steps) {
  std::vector<double> x = integrate_flow(field, state, z, steps);
  clamp_to_box(x);
  return x;
}

void integrate_flow_batch(const VectorFieldNet& field, const Matrix& states, const Matrix& z,
                          int steps, bool clamp, Matrix& out) {
  if (steps < 1) throw std::invalid_argument("integrate_flow_batch: steps must be >= 1");
  const int b = z.rows(), d = field.action_dim, sd = field.state_dim;
  if (states.rows() != b || z.cols() != d)
    throw std::invalid_argument("integrate_flow_batch: shape mismatch");
  out = z;
  thread_local ForwardTrace trace;
  Matrix inputs(b, 1 + sd + d);
  const double h = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = k * h;
    for (int i = 0; i < b; ++i) {
      double* row = inputs.row(i);
      row[0] = t;
      for (int j = 0; j < sd; ++j) row[1 + j] = states(i, j);
      for (int j = 0; j < d; ++j) row[1 + sd + j] = out(i, j);
    }
    const Matrix& v = forward_batch(field.net, inputs, trace);
    for (int i = 0; i < b; ++i) {
      double* oi = out.row(i);
      const double* vi = v.row(i);
      for (int j = 0; j < d; ++j) oi[j] += h * vi[j];
    }
  }
  for (size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out.data()[i]))
      throw std::runtime_error("integrate_flow_batch: non-finite output");
    if (clamp) out.data()[i] = std::clamp(out.data()[i], -1.0, 1.0);
  }
}

}  // namespace fino
