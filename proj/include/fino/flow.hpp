#pragma once

#include <span>
#include <vector>

#include "fino/matrix.hpp"
#include "fino/net.hpp"
#include "fino/schedule.hpp"

namespace fino {

/// State/time-conditioned vector field v(t, s, x); input layout [t, s, x].
struct VectorFieldNet {
  int state_dim = 0;
  int action_dim = 0;
  DenseNet net;

  static VectorFieldNet make(int state_dim, int action_dim, const std::vector<int>& hidden,
                             Rng& rng);
  std::vector<double> evaluate(double t, std::span<const double> state,
                               std::span<const double> x) const;
};

/// Regression target for the vector field.
enum class TargetMode {
  exact,  // x1 - (1-eta) x0
  plain,  // x1 - x0
};

TargetMode parse_target_mode(const std::string& name);
std::string target_mode_name(TargetMode m);

/// One training batch for the flow objective. All randomness (t, x0, eps) is
/// materialized here so loss evaluation stays a pure function of parameters.
struct FlowBatch {
  Matrix states;          // [B x state_dim]
  Matrix x1;              // dataset actions [B x action_dim]
  Matrix x0;              // base samples    [B x action_dim]
  std::vector<double> t;  // [B], in [0,1]
  Matrix eps;             // injected noise, per-element std alpha_t

  int size() const { return x1.rows(); }
};

/// Draws t ~ Unif[0,1], x0 ~ N(0,I) and eps ~ N(0, alpha_t^2 I) per sample.
FlowBatch make_flow_batch(const Matrix& states, const Matrix& actions,
                          const NoiseSchedule& schedule, Rng& rng);

/// Mean squared residual of the net prediction at (t, s, x_t + eps) against
/// the selected target, with exact gradients in the net parameters.
GradientBundle fino_loss(const VectorFieldNet& field, const FlowBatch& batch,
                         const NoiseSchedule& schedule, TargetMode mode);

/// Same regression core with caller-supplied net inputs x (one row per
/// sample, already noised/coupled) and targets; used by the theory checks.
GradientBundle flow_regression(const VectorFieldNet& field, const Matrix& states,
                               const std::vector<double>& t, const Matrix& x,
                               const Matrix& targets);

/// Euler integration of the learned field from z at t=0 to t=1.
/// No clamping; see sample_action for the policy-facing variant.
std::vector<double> integrate_flow(const VectorFieldNet& field, std::span<const double> state,
                                   std::span<const double> z, int steps);

/// integrate_flow followed by clamping to the action box [-1,1]^d.
std::vector<double> sample_action(const VectorFieldNet& field, std::span<const double> state,
                                  std::span<const double> z, int steps);

/// Batched Euler integration: states [B x sd], z [B x ad] -> out [B x ad].
void integrate_flow_batch(const VectorFieldNet& field, const Matrix& states, const Matrix& z,
                          int steps, bool clamp, Matrix& out);

void clamp_to_box(std::span<double> v);

}  // namespace fino
