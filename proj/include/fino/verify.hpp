#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fino/flow.hpp"
#include "fino/matrix.hpp"

namespace fino {

/// Gaussian conditional path of the noise-widened flow at (eta, t):
/// mean t*x_i, isotropic variance (1-(1-eta)t)^2.
struct GaussianPath {
  double eta = 0.0;
  double t = 0.0;
  double mean_coefficient() const { return t; }
  double variance_coefficient() const {
    const double s = 1.0 - (1.0 - eta) * t;
    return s * s;
  }
};

struct VerifyReport {
  std::string check;
  double statistic = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  long samples = 0;
};

bool all_pass(std::span<const VerifyReport> reports);
void write_reports(std::span<const VerifyReport> reports, const std::string& path);

/// (1-t)^2 + alpha_t^2 (quadratic) == (1-(1-eta)t)^2 over a (t, eta) grid.
std::vector<VerifyReport> check_schedule_identity(int grid_points);

/// Monte Carlo check of the conditional path moments: draws via
/// perturbed_flow with quadratic-schedule noise, asserts per-dim mean within
/// 4/sqrt(n) of t*x_i and variance within 1% relative of (1-(1-eta)t)^2.
std::vector<VerifyReport> check_conditional_path(double eta, std::span<const double> t_grid,
                                                 std::span<const double> x_i, long n_samples,
                                                 uint64_t seed);

/// Marginal variance ordering over a finite dataset: closed form via the
/// mixture decomposition against Monte Carlo, and the widened-vs-plain
/// ordering at every t.
std::vector<VerifyReport> check_variance_ordering(const Matrix& points, double eta,
                                                  std::span<const double> t_grid, long n_samples,
                                                  uint64_t seed);

/// End-to-end transport: trains a vector field on a singleton dataset with
/// the canonical coupling (x_t = t*x_i + (1-(1-eta)t)x0, exact target) and
/// checks the generated sample moments against N(x_i, eta^2 I).
std::vector<VerifyReport> check_single_point_generation(double eta, std::span<const double> x_i,
                                                        int train_steps, long n_samples,
                                                        uint64_t seed);

/// Target-noise averaging: the gradient of the noise-on-target loss averaged
/// over zero-mean draws matches the noiseless gradient within 3 standard
/// errors; a single draw does not (negative control).
std::vector<VerifyReport> check_target_noise_noop(const VectorFieldNet& field,
                                                  const FlowBatch& batch, double noise_std,
                                                  long n_draws, uint64_t seed);

/// Convenience variant that builds a small seeded net and batch.
std::vector<VerifyReport> check_target_noise_noop(double noise_std, long n_draws, uint64_t seed);

struct GridSpec {
  int nx = 64;
  int ny = 64;
  double x_min = -1.5, x_max = 1.5;
  double y_min = -1.5, y_max = 1.5;
};

struct DensityGrid {
  GridSpec spec;
  std::vector<double> log_density;  // row-major [ny x nx]
  double normalization = 0.0;       // trapezoid mass over the grid

  double at(int ix, int iy) const { return log_density[static_cast<size_t>(iy) * spec.nx + ix]; }
  double x_of(int ix) const;
  double y_of(int iy) const;
};

/// Gaussian KDE (Silverman bandwidth) of 2-D samples on a grid.
DensityGrid kde_log_density(const Matrix& samples, const GridSpec& spec);

/// Samples n actions from the flow and runs the KDE.
DensityGrid export_log_density(const VectorFieldNet& field, std::span<const double> state,
                               const GridSpec& spec, long n_samples, uint64_t seed);

void write_density_csv(const DensityGrid& grid, const std::string& path);

}  // namespace fino
