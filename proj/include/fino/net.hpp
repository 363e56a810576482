#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fino/matrix.hpp"
#include "fino/rng.hpp"

namespace fino {

/// Exact Gaussian-CDF GELU: x * Phi(x).
double gelu(double x);
double gelu_derivative(double x);

/// Per-layer parameter-shaped arrays; shared by gradients and Adam moments.
struct LayerArrays {
  Matrix w;                // [out x in]
  std::vector<double> b;   // [out]
};

struct GradientBundle {
  std::vector<LayerArrays> layers;
  double loss = 0.0;
};

/// Feed-forward network, GELU on hidden layers, identity output.
/// Parameters are plain doubles; evaluation is deterministic bit-for-bit
/// for identical inputs and parameters within one build.
class DenseNet {
 public:
  DenseNet() = default;

  /// He-style uniform fan-in init (limit sqrt(6/fan_in)), zero biases.
  DenseNet(std::vector<int> layer_dims, Rng& rng);

  /// All-zero parameters (mostly for tests and stub policies).
  static DenseNet zeros(std::vector<int> layer_dims);

  bool initialized() const { return !dims_.empty(); }
  const std::vector<int>& layer_dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  int layer_count() const { return static_cast<int>(weights_.size()); }

  Matrix& weights(int layer) { return weights_[layer]; }
  const Matrix& weights(int layer) const { return weights_[layer]; }
  std::vector<double>& biases(int layer) { return biases_[layer]; }
  const std::vector<double>& biases(int layer) const { return biases_[layer]; }

  std::vector<double> forward(std::span<const double> input) const;

  bool same_architecture(const DenseNet& other) const { return dims_ == other.dims_; }
  bool same_parameters(const DenseNet& other) const;

 private:
  std::vector<int> dims_;
  std::vector<Matrix> weights_;
  std::vector<std::vector<double>> biases_;

  void validate_dims() const;
};

/// Workspace for batched forward/backward; reuse across calls to avoid
/// allocation churn in training loops.
struct ForwardTrace {
  std::vector<Matrix> inputs;  // inputs[l]: activations entering layer l (inputs[0] = X)
  std::vector<Matrix> pre;     // pre-activations z_l of hidden layers
  std::vector<Matrix> phi;     // Phi(z_l) of hidden layers
  std::vector<Matrix> wt;      // transposed-weight scratch
  Matrix output;
  std::vector<Matrix> cotangent;  // backward scratch
};

/// Returns trace.output = net(X) for X of shape [B x input_dim].
const Matrix& forward_batch(const DenseNet& net, const Matrix& x, ForwardTrace& trace);

/// Backpropagates the output cotangent d_out through the traced forward pass.
/// Fills parameter gradients into `grads` (if non-null) and the input
/// cotangent into `d_input` (if non-null). Gradients are exact derivatives
/// of the realized computation.
void backward_batch(const DenseNet& net, ForwardTrace& trace, const Matrix& d_out,
                    GradientBundle* grads, Matrix* d_input);

/// Loss closure over a batch of net outputs: fills per-row losses and the
/// cotangent d(total loss)/d(outputs).
using BatchLoss =
    std::function<void(const Matrix& outputs, std::vector<double>& row_loss, Matrix& d_outputs)>;

/// Evaluates the closure on net(inputs) and returns exact parameter
/// gradients. Throws if any per-row loss is non-finite, naming the row.
GradientBundle grad(const DenseNet& net, const Matrix& inputs, const BatchLoss& loss);

GradientBundle make_gradient_bundle(const DenseNet& net);

struct AdamState {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<LayerArrays> m;
  std::vector<LayerArrays> v;
};

/// Standard bias-corrected Adam update; increments the step counter.
/// Moment accumulators are allocated on first use.
void adam_step(DenseNet& net, AdamState& state, const GradientBundle& grads);

/// target <- (1 - tau) * target + tau * online, elementwise.
void polyak_update(DenseNet& target, const DenseNet& online, double tau);

/// Versioned binary checkpoint (magic, layer dims, little-endian f64),
/// bit-exact on round trip.
void save_net(const DenseNet& net, const std::string& path);
DenseNet load_net(const std::string& path);

}  // namespace fino
