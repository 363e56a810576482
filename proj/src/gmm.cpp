#include "fino/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fino {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

/// Lower-triangular Cholesky factor; returns false if not positive definite.
bool cholesky(const Matrix& a, Matrix& l) {
  const int d = a.rows();
  l.resize(d, d);
  l.set_zero();
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      double sum = a(i, j);
      for (int k = 0; k < j; ++k) sum -= l(i, k) * l(j, k);
      if (i == j) {
        if (sum <= 0.0) return false;
        l(i, j) = std::sqrt(sum);
      } else {
        l(i, j) = sum / l(j, j);
      }
    }
  }
  return true;
}

double log_det_from_cholesky(const Matrix& l) {
  double acc = 0.0;
  for (int i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

struct ComponentCache {
  Matrix chol;
  double log_norm = 0.0;  // -d/2 log(2pi) - 1/2 logdet
};

double log_gaussian(const ComponentCache& c, std::span<const double> x,
                    std::span<const double> mu, std::vector<double>& w) {
  const int d = static_cast<int>(x.size());
  w.resize(d);
  // solve L w = x - mu by forward substitution
  for (int i = 0; i < d; ++i) {
    double sum = x[i] - mu[i];
    for (int k = 0; k < i; ++k) sum -= c.chol(i, k) * w[k];
    w[i] = sum / c.chol(i, i);
  }
  double quad = 0.0;
  for (int i = 0; i < d; ++i) quad += w[i] * w[i];
  return c.log_norm - 0.5 * quad;
}

void add_jitter(Matrix& cov, double jitter) {
  for (int i = 0; i < cov.rows(); ++i) cov(i, i) += jitter;
}

/// Cholesky with escalating jitter for near-singular covariances.
void factor_component(Matrix& cov, double jitter, ComponentCache& cache, int dim) {
  double extra = jitter;
  for (int attempt = 0; attempt < 32; ++attempt) {
    if (cholesky(cov, cache.chol)) {
      cache.log_norm = -0.5 * (dim * kLog2Pi + log_det_from_cholesky(cache.chol));
      return;
    }
    add_jitter(cov, extra);
    extra *= 10.0;
  }
  throw std::runtime_error("fit_em: covariance not positive definite after regularization");
}

std::vector<int> kmeanspp_seeds(const Matrix& samples, int k, Rng& rng) {
  const int n = samples.rows(), d = samples.cols();
  std::vector<int> centers;
  centers.push_back(rng.uniform_int(n));
  std::vector<double> dist2(n, std::numeric_limits<double>::max());
  while (static_cast<int>(centers.size()) < k) {
    const double* c = samples.row(centers.back());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      const double* xi = samples.row(i);
      for (int j = 0; j < d; ++j) {
        const double diff = xi[j] - c[j];
        acc += diff * diff;
      }
      dist2[i] = std::min(dist2[i], acc);
      total += dist2[i];
    }
    int pick;
    if (total <= 0.0) {
      pick = rng.uniform_int(n);
    } else {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += dist2[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(pick);
  }
  return centers;
}

}  // namespace

GmmModel fit_em(const Matrix& samples, int k, const EmConfig& config, EmTrace* trace) {
  const int n = samples.rows(), d = samples.cols();
  if (k < 1) throw std::invalid_argument("fit_em: need k >= 1");
  if (d < 1) throw std::invalid_argument("fit_em: need d >= 1");
  if (n < k) throw std::invalid_argument("fit_em: need at least k samples");
  if (config.max_iterations < 1 || config.tolerance <= 0.0 || config.jitter <= 0.0)
    throw std::invalid_argument("fit_em: config values must be positive");

  GmmModel model;
  model.weights.assign(k, 1.0 / k);
  model.means.resize(k, d);
  model.covariances.assign(k, Matrix(d, d));

  // init: k-means++ means, shared global covariance
  Rng rng(derive_seed(config.seed, 0x6133));
  const std::vector<int> seeds = kmeanspp_seeds(samples, k, rng);
  for (int c = 0; c < k; ++c)
    std::copy(samples.row(seeds[c]), samples.row(seeds[c]) + d, model.means.row(c));
  {
    std::vector<double> mean(d, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) mean[j] += samples(i, j) / n;
    Matrix cov(d, d);
    for (int i = 0; i < n; ++i)
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c)
          cov(r, c) += (samples(i, r) - mean[r]) * (samples(i, c) - mean[c]) / n;
    add_jitter(cov, config.jitter);
    for (int c = 0; c < k; ++c) model.covariances[c] = cov;
  }

  std::vector<ComponentCache> cache(k);
  for (int c = 0; c < k; ++c) factor_component(model.covariances[c], config.jitter, cache[c], d);

  Matrix resp(n, k);
  std::vector<double> scratch;
  double prev_ll = -std::numeric_limits<double>::infinity();
  if (trace) {
    trace->log_likelihood.clear();
    trace->iterations = 0;
  }

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    // E-step with log-sum-exp
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      std::span<const double> xi(samples.row(i), static_cast<size_t>(d));
      double* ri = resp.row(i);
      double best = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        ri[c] = model.weights[c] > 0.0
                    ? std::log(model.weights[c]) +
                          log_gaussian(cache[c], xi,
                                       {model.means.row(c), static_cast<size_t>(d)}, scratch)
                    : -std::numeric_limits<double>::infinity();
        best = std::max(best, ri[c]);
      }
      double sum = 0.0;
      for (int c = 0; c < k; ++c) sum += std::exp(ri[c] - best);
      const double log_px = best + std::log(sum);
      ll += log_px;
      for (int c = 0; c < k; ++c) ri[c] = std::exp(ri[c] - log_px);
    }
    if (trace) {
      trace->log_likelihood.push_back(ll);
      trace->iterations = iter + 1;
    }

    // M-step
    for (int c = 0; c < k; ++c) {
      double nk = 0.0;
      for (int i = 0; i < n; ++i) nk += resp(i, c);
      model.weights[c] = nk / n;
      if (nk < 1e-12) continue;  // dead component keeps its parameters
      double* mu = model.means.row(c);
      std::fill(mu, mu + d, 0.0);
      for (int i = 0; i < n; ++i) {
        const double w = resp(i, c);
        const double* xi = samples.row(i);
        for (int j = 0; j < d; ++j) mu[j] += w * xi[j];
      }
      for (int j = 0; j < d; ++j) mu[j] /= nk;
      Matrix& cov = model.covariances[c];
      cov.set_zero();
      for (int i = 0; i < n; ++i) {
        const double w = resp(i, c);
        const double* xi = samples.row(i);
        for (int r = 0; r < d; ++r) {
          const double dr = xi[r] - mu[r];
          for (int cc = 0; cc < d; ++cc) cov(r, cc) += w * dr * (xi[cc] - mu[cc]);
        }
      }
      for (size_t idx = 0; idx < cov.size(); ++idx) cov.data()[idx] /= nk;
      add_jitter(cov, config.jitter);
      factor_component(cov, config.jitter, cache[c], d);
    }

    if (std::abs(ll - prev_ll) / n < config.tolerance) break;
    prev_ll = ll;
  }
  return model;
}

double gmm_entropy(const GmmModel& model) {
  const int d = model.dim();
  double h = 0.0;
  for (int c = 0; c < model.components(); ++c) {
    const double pi = model.weights[c];
    if (pi <= 0.0) continue;
    Matrix l;
    Matrix cov = model.covariances[c];
    if (!cholesky(cov, l)) throw std::runtime_error("gmm_entropy: covariance not PD");
    const double logdet = log_det_from_cholesky(l);
    h += pi * (-std::log(pi) + 0.5 * (d * (kLog2Pi + 1.0) + logdet));
  }
  return h;
}

double estimate_entropy(const StateActionSampler& sampler, const Matrix& states, int action_dim,
                        int actions_per_state, int k, const EmConfig& config, Rng& rng) {
  if (states.rows() == 0) throw std::invalid_argument("estimate_entropy: empty state batch");
  if (actions_per_state < k)
    throw std::invalid_argument("estimate_entropy: actions_per_state < k");
  Matrix actions(actions_per_state, action_dim);
  std::vector<double> z(action_dim);
  double total = 0.0;
  for (int s = 0; s < states.rows(); ++s) {
    std::span<const double> state(states.row(s), static_cast<size_t>(states.cols()));
    for (int i = 0; i < actions_per_state; ++i) {
      for (double& v : z) v = rng.normal();
      sampler(state, z, {actions.row(i), static_cast<size_t>(action_dim)});
    }
    EmConfig cfg = config;
    cfg.seed = derive_seed(config.seed, static_cast<uint64_t>(s));
    total += gmm_entropy(fit_em(actions, k, cfg));
  }
  return total / states.rows();
}

double estimate_policy_entropy(const OneStepPolicy& policy, const Matrix& states,
                               int actions_per_state, int k, const EmConfig& config, Rng& rng) {
  if (states.rows() == 0)
    throw std::invalid_argument("estimate_policy_entropy: empty state batch");
  if (actions_per_state < k)
    throw std::invalid_argument("estimate_policy_entropy: actions_per_state < k");
  Matrix state_rows(actions_per_state, policy.state_dim);
  Matrix z(actions_per_state, policy.action_dim);
  Matrix actions;
  double total = 0.0;
  for (int s = 0; s < states.rows(); ++s) {
    for (int i = 0; i < actions_per_state; ++i)
      std::copy(states.row(s), states.row(s) + states.cols(), state_rows.row(i));
    for (size_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    policy.act_batch(state_rows, z, actions);
    EmConfig cfg = config;
    cfg.seed = derive_seed(config.seed, static_cast<uint64_t>(s));
    total += gmm_entropy(fit_em(actions, k, cfg));
  }
  return total / states.rows();
}

}  // namespace fino
