#include "fino/net.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace fino {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
inline double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
}  // namespace

double gelu(double x) { return x * norm_cdf(x); }

double gelu_derivative(double x) { return norm_cdf(x) + x * norm_pdf(x); }

void DenseNet::validate_dims() const {
  if (dims_.size() < 2) throw std::invalid_argument("DenseNet: need at least 2 layer dims");
  for (int d : dims_)
    if (d <= 0) throw std::invalid_argument("DenseNet: layer dims must be positive");
}

DenseNet::DenseNet(std::vector<int> layer_dims, Rng& rng) : dims_(std::move(layer_dims)) {
  validate_dims();
  for (size_t l = 0; l + 1 < dims_.size(); ++l) {
    const int in = dims_[l], out = dims_[l + 1];
    Matrix w(out, in);
    const double limit = std::sqrt(6.0 / in);
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) w(i, j) = rng.uniform(-limit, limit);
    weights_.push_back(std::move(w));
    biases_.emplace_back(out, 0.0);
  }
}

DenseNet DenseNet::zeros(std::vector<int> layer_dims) {
  DenseNet net;
  net.dims_ = std::move(layer_dims);
  net.validate_dims();
  for (size_t l = 0; l + 1 < net.dims_.size(); ++l) {
    net.weights_.emplace_back(net.dims_[l + 1], net.dims_[l]);
    net.biases_.emplace_back(net.dims_[l + 1], 0.0);
  }
  return net;
}

bool DenseNet::same_parameters(const DenseNet& other) const {
  if (dims_ != other.dims_) return false;
  for (int l = 0; l < layer_count(); ++l)
    if (!(weights_[l] == other.weights_[l]) || biases_[l] != other.biases_[l]) return false;
  return true;
}

std::vector<double> DenseNet::forward(std::span<const double> input) const {
  if (static_cast<int>(input.size()) != input_dim())
    throw std::invalid_argument("DenseNet::forward: input length does not match first layer dim");
  std::vector<double> a(input.begin(), input.end());
  std::vector<double> z;
  const int layers = layer_count();
  for (int l = 0; l < layers; ++l) {
    const Matrix& w = weights_[l];
    const std::vector<double>& b = biases_[l];
    z.assign(b.begin(), b.end());
    for (int i = 0; i < w.rows(); ++i) {
      const double* wi = w.row(i);
      double acc = 0.0;
      for (int j = 0; j < w.cols(); ++j) acc += wi[j] * a[j];
      z[i] += acc;
    }
    if (l + 1 < layers)
      for (double& v : z) v = gelu(v);
    a = z;
  }
  return a;
}

const Matrix& forward_batch(const DenseNet& net, const Matrix& x, ForwardTrace& trace) {
  if (x.cols() != net.input_dim())
    throw std::invalid_argument("forward_batch: input width does not match first layer dim");
  const int layers = net.layer_count();
  const int batch = x.rows();
  trace.inputs.resize(layers);
  trace.pre.resize(layers);
  trace.phi.resize(layers);
  trace.wt.resize(layers);
  trace.inputs[0] = x;
  for (int l = 0; l < layers; ++l) {
    const Matrix& w = net.weights(l);
    const std::vector<double>& b = net.biases(l);
    transpose(w, trace.wt[l]);
    Matrix& z = (l + 1 < layers) ? trace.pre[l] : trace.output;
    gemm_nn(trace.inputs[l], trace.wt[l], z);
    for (int i = 0; i < batch; ++i) {
      double* zi = z.row(i);
      for (int j = 0; j < w.rows(); ++j) zi[j] += b[j];
    }
    if (l + 1 < layers) {
      Matrix& phi = trace.phi[l];
      Matrix& a = trace.inputs[l + 1];
      phi.resize(batch, w.rows());
      a.resize(batch, w.rows());
      const size_t n = z.size();
      const double* zp = z.data();
      double* pp = phi.data();
      double* ap = a.data();
      for (size_t i = 0; i < n; ++i) {
        const double p = norm_cdf(zp[i]);
        pp[i] = p;
        ap[i] = zp[i] * p;
      }
    }
  }
  return trace.output;
}

GradientBundle make_gradient_bundle(const DenseNet& net) {
  GradientBundle g;
  g.layers.resize(net.layer_count());
  for (int l = 0; l < net.layer_count(); ++l) {
    g.layers[l].w.resize(net.weights(l).rows(), net.weights(l).cols());
    g.layers[l].w.set_zero();
    g.layers[l].b.assign(net.biases(l).size(), 0.0);
  }
  return g;
}

void backward_batch(const DenseNet& net, ForwardTrace& trace, const Matrix& d_out,
                    GradientBundle* grads, Matrix* d_input) {
  const int layers = net.layer_count();
  if (!d_out.same_shape(trace.output))
    throw std::invalid_argument("backward_batch: cotangent shape mismatch");
  if (grads && static_cast<int>(grads->layers.size()) != layers)
    *grads = make_gradient_bundle(net);
  trace.cotangent.resize(layers + 1);
  trace.cotangent[layers] = d_out;
  for (int l = layers - 1; l >= 0; --l) {
    Matrix& g = trace.cotangent[l + 1];  // d loss / d z_l
    if (grads) {
      gemm_tn(g, trace.inputs[l], grads->layers[l].w);
      std::vector<double>& db = grads->layers[l].b;
      std::fill(db.begin(), db.end(), 0.0);
      for (int i = 0; i < g.rows(); ++i) {
        const double* gi = g.row(i);
        for (int j = 0; j < g.cols(); ++j) db[j] += gi[j];
      }
    }
    const bool need_more = l > 0 || d_input != nullptr;
    if (!need_more) continue;
    Matrix& prev = trace.cotangent[l];
    gemm_nn(g, net.weights(l), prev);
    if (l > 0) {
      // chain through GELU: d a / d z = Phi(z) + z * pdf(z)
      const Matrix& z = trace.pre[l - 1];
      const Matrix& phi = trace.phi[l - 1];
      const size_t n = prev.size();
      double* pp = prev.data();
      const double* zp = z.data();
      const double* fp = phi.data();
      for (size_t i = 0; i < n; ++i) pp[i] *= fp[i] + zp[i] * norm_pdf(zp[i]);
    }
  }
  if (d_input) *d_input = trace.cotangent[0];
}

GradientBundle grad(const DenseNet& net, const Matrix& inputs, const BatchLoss& loss) {
  thread_local ForwardTrace trace;
  const Matrix& y = forward_batch(net, inputs, trace);
  std::vector<double> row_loss(y.rows(), 0.0);
  Matrix dy(y.rows(), y.cols());
  loss(y, row_loss, dy);
  double total = 0.0;
  for (size_t i = 0; i < row_loss.size(); ++i) {
    if (!std::isfinite(row_loss[i]))
      throw std::runtime_error("grad: non-finite loss at batch index " + std::to_string(i));
    total += row_loss[i];
  }
  GradientBundle g = make_gradient_bundle(net);
  g.loss = total;
  backward_batch(net, trace, dy, &g, nullptr);
  return g;
}

void adam_step(DenseNet& net, AdamState& state, const GradientBundle& grads) {
  const int layers = net.layer_count();
  if (static_cast<int>(grads.layers.size()) != layers)
    throw std::invalid_argument("adam_step: gradient layer count mismatch");
  if (state.m.empty()) {
    state.m.resize(layers);
    state.v.resize(layers);
    for (int l = 0; l < layers; ++l) {
      state.m[l].w.resize(net.weights(l).rows(), net.weights(l).cols());
      state.m[l].w.set_zero();
      state.m[l].b.assign(net.biases(l).size(), 0.0);
      state.v[l].w = state.m[l].w;
      state.v[l].b = state.m[l].b;
    }
  }
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double lr = state.learning_rate, eps = state.epsilon;
  auto update = [&](double* p, double* m, double* v, const double* g, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  };
  for (int l = 0; l < layers; ++l) {
    if (!grads.layers[l].w.same_shape(net.weights(l)) ||
        grads.layers[l].b.size() != net.biases(l).size())
      throw std::invalid_argument("adam_step: gradient shape mismatch at layer " +
                                  std::to_string(l));
    update(net.weights(l).data(), state.m[l].w.data(), state.v[l].w.data(),
           grads.layers[l].w.data(), net.weights(l).size());
    update(net.biases(l).data(), state.m[l].b.data(), state.v[l].b.data(),
           grads.layers[l].b.data(), net.biases(l).size());
  }
}

void polyak_update(DenseNet& target, const DenseNet& online, double tau) {
  if (!target.same_architecture(online))
    throw std::invalid_argument("polyak_update: architecture mismatch");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("polyak_update: tau not in (0,1]");
  const double keep = 1.0 - tau;
  for (int l = 0; l < target.layer_count(); ++l) {
    double* tw = target.weights(l).data();
    const double* ow = online.weights(l).data();
    for (size_t i = 0; i < target.weights(l).size(); ++i) tw[i] = keep * tw[i] + tau * ow[i];
    auto& tb = target.biases(l);
    const auto& ob = online.biases(l);
    for (size_t i = 0; i < tb.size(); ++i) tb[i] = keep * tb[i] + tau * ob[i];
  }
}

namespace {

constexpr char kMagic[8] = {'F', 'I', 'N', 'O', 'N', 'E', 'T', '\x01'};

void put_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ofstream& out, double d) {
  const uint64_t v = std::bit_cast<uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void save_net(const DenseNet& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_net: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<uint32_t>(net.layer_dims().size()));
  for (int d : net.layer_dims()) put_u32(out, static_cast<uint32_t>(d));
  for (int l = 0; l < net.layer_count(); ++l) {
    const Matrix& w = net.weights(l);
    for (size_t i = 0; i < w.size(); ++i) put_f64(out, w.data()[i]);
    for (double b : net.biases(l)) put_f64(out, b);
  }
  if (!out) throw std::runtime_error("save_net: write failed for " + path);
}

DenseNet load_net(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_net: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic))
    throw std::runtime_error("load_net: bad magic in " + path);
  const uint32_t ndims = get_u32(in);
  if (ndims < 2 || ndims > 64) throw std::runtime_error("load_net: corrupt dims in " + path);
  std::vector<int> dims(ndims);
  for (auto& d : dims) d = static_cast<int>(get_u32(in));
  DenseNet net = DenseNet::zeros(dims);
  for (int l = 0; l < net.layer_count(); ++l) {
    Matrix& w = net.weights(l);
    for (size_t i = 0; i < w.size(); ++i) w.data()[i] = get_f64(in);
    for (double& b : net.biases(l)) b = get_f64(in);
  }
  if (!in) throw std::runtime_error("load_net: truncated file " + path);
  return net;
}

}  // namespace fino
