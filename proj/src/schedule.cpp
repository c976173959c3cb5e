#include "ldebm/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ldebm {

DiffusionSchedule::DiffusionSchedule(int num_steps, double sigma_sq_min,
                                     double sigma_sq_max, int latent_dim)
    : num_steps_(num_steps), latent_dim_(latent_dim) {
  if (num_steps < 2) throw std::invalid_argument("schedule needs T >= 2");
  if (!(sigma_sq_min > 0.0) || !(sigma_sq_max < 1.0))
    throw std::invalid_argument("schedule endpoints must lie in (0, 1)");
  if (!(sigma_sq_min < sigma_sq_max))
    throw std::invalid_argument("schedule needs sigma_sq_min < sigma_sq_max");
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be positive");

  sigma_sq_.resize(num_steps);
  gamma_bar_.resize(num_steps);
  c_.resize(num_steps);
  const double delta = (sigma_sq_max - sigma_sq_min) / (num_steps - 1);
  double gamma_prod = 1.0;
  double sigma_prod = 1.0;
  for (int i = 0; i < num_steps; ++i) {
    sigma_sq_[i] = i + 1 == num_steps ? sigma_sq_max : sigma_sq_min + delta * i;
    gamma_prod *= 1.0 - sigma_sq_[i];
    gamma_bar_[i] = gamma_prod;
    if (i == 0) {
      c_[i] = 1.0;
    } else {
      sigma_prod *= std::sqrt(sigma_sq_[i]);
      c_[i] = std::sqrt(sigma_prod);
    }
  }
}

void DiffusionSchedule::check_step(int t) const {
  if (t < 1 || t > num_steps_)
    throw std::out_of_range("diffusion step " + std::to_string(t) +
                            " outside [1, " + std::to_string(num_steps_) + "]");
}

double DiffusionSchedule::sigma_sq(int t) const {
  check_step(t);
  return sigma_sq_[t - 1];
}

double DiffusionSchedule::sigma(int t) const { return std::sqrt(sigma_sq(t)); }

double DiffusionSchedule::gamma_bar(int t) const {
  if (t == 0) return 1.0;
  check_step(t);
  return gamma_bar_[t - 1];
}

double DiffusionSchedule::c(int t) const {
  check_step(t);
  return c_[t - 1];
}

DiffusionSchedule build_schedule(int num_steps, double sigma_sq_min,
                                 double sigma_sq_max, int latent_dim) {
  return DiffusionSchedule(num_steps, sigma_sq_min, sigma_sq_max, latent_dim);
}

double step_entropy(const DiffusionSchedule& sched, int t) {
  const double var = sched.sigma_sq(t);
  return 0.5 * sched.latent_dim() *
         std::log(2.0 * std::numbers::pi * std::numbers::e * var);
}

}  // namespace ldebm
