#pragma once

#include <span>
#include <string>
#include <vector>

namespace fino {

enum class ScheduleVariant { quadratic, shifted_exponential };

/// Noise schedule for injected training noise. The quadratic variant is the
/// one the theory suite is stated for (alpha_t^2 = (eta^2-2eta)t^2 + 2eta t);
/// the shifted-exponential variant (alpha_t = eta*exp(5(t-1))) satisfies the
/// same boundary conditions and is the training default. sigma_min is kept
/// for generality and defaults to 0.
struct NoiseSchedule {
  double eta = 0.1;
  double sigma_min = 0.0;
  ScheduleVariant variant = ScheduleVariant::shifted_exponential;
};

/// Standard deviation alpha_t of the injected noise at time t in [0,1].
double schedule_sigma(const NoiseSchedule& schedule, double t);

/// Straight-line interpolation x_t = (1-t) x0 + t x1.
std::vector<double> interpolate(std::span<const double> x0, std::span<const double> x1, double t);

/// Perturbed flow t*xi + (1-t)*x0 + eps.
std::vector<double> perturbed_flow(std::span<const double> x0, std::span<const double> xi,
                                   double t, std::span<const double> eps);

/// Canonical flow of the noise-widened path: t*xi + (1-(1-eta)t)*x0.
std::vector<double> canonical_flow(std::span<const double> x0, std::span<const double> xi,
                                   double t, double eta);

ScheduleVariant parse_schedule_variant(const std::string& name);
std::string schedule_variant_name(ScheduleVariant v);

}  // namespace fino
