#include "fino/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fino {

double schedule_sigma(const NoiseSchedule& schedule, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("schedule_sigma: t outside [0,1]");
  if (!(schedule.eta >= 0.0 && schedule.eta <= 1.0))
    throw std::invalid_argument("schedule_sigma: eta outside [0,1]");
  if (schedule.sigma_min < 0.0) throw std::invalid_argument("schedule_sigma: sigma_min < 0");
  const double eta = schedule.eta;
  switch (schedule.variant) {
    case ScheduleVariant::quadratic: {
      const double var = (eta * eta - 2.0 * eta) * t * t + 2.0 * eta * t;
      return std::sqrt(std::max(var, 0.0));
    }
    case ScheduleVariant::shifted_exponential:
      return eta * std::exp(5.0 * (t - 1.0));
  }
  throw std::invalid_argument("schedule_sigma: unknown variant");
}

namespace {
void check_dims(size_t a, size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}
}  // namespace

std::vector<double> interpolate(std::span<const double> x0, std::span<const double> x1, double t) {
  check_dims(x0.size(), x1.size(), "interpolate");
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolate: t outside [0,1]");
  std::vector<double> out(x0.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * x0[i] + t * x1[i];
  return out;
}

std::vector<double> perturbed_flow(std::span<const double> x0, std::span<const double> xi,
                                   double t, std::span<const double> eps) {
  check_dims(x0.size(), xi.size(), "perturbed_flow");
  check_dims(x0.size(), eps.size(), "perturbed_flow");
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("perturbed_flow: t outside [0,1]");
  std::vector<double> out(x0.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = t * xi[i] + (1.0 - t) * x0[i] + eps[i];
  return out;
}

std::vector<double> canonical_flow(std::span<const double> x0, std::span<const double> xi,
                                   double t, double eta) {
  check_dims(x0.size(), xi.size(), "canonical_flow");
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("canonical_flow: t outside [0,1]");
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("canonical_flow: eta outside [0,1]");
  const double scale = 1.0 - (1.0 - eta) * t;
  std::vector<double> out(x0.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = t * xi[i] + scale * x0[i];
  return out;
}

ScheduleVariant parse_schedule_variant(const std::string& name) {
  if (name == "quadratic") return ScheduleVariant::quadratic;
  if (name == "shifted_exponential") return ScheduleVariant::shifted_exponential;
  throw std::invalid_argument("unknown schedule variant: " + name);
}

std::string schedule_variant_name(ScheduleVariant v) {
  return v == ScheduleVariant::quadratic ? "quadratic" : "shifted_exponential";
}

}  // namespace fino
