#pragma once

#include <vector>

namespace ldebm {

/// Linear noise-variance schedule for the forward latent diffusion, plus the
/// constants every consumer derives from it. Steps are 1-based (t = 1..T) in
/// all accessors, matching the forward transition z_{t} -> z_{t+1} that uses
/// sigma_{t+1}.
class DiffusionSchedule {
 public:
  DiffusionSchedule(int num_steps, double sigma_sq_min, double sigma_sq_max,
                    int latent_dim);

  int num_steps() const { return num_steps_; }
  int latent_dim() const { return latent_dim_; }
  double sigma_sq_min() const { return sigma_sq_.front(); }
  double sigma_sq_max() const { return sigma_sq_.back(); }

  double sigma_sq(int t) const;
  double sigma(int t) const;
  /// prod_{i<=t} (1 - sigma_i^2); gamma_bar(0) = 1.
  double gamma_bar(int t) const;
  /// sqrt(prod_{i<=t} sigma_i / sigma_1); c(1) = 1.
  double c(int t) const;

  const std::vector<double>& sigma_sq_values() const { return sigma_sq_; }
  const std::vector<double>& gamma_bar_values() const { return gamma_bar_; }
  const std::vector<double>& c_values() const { return c_; }

 private:
  void check_step(int t) const;

  int num_steps_;
  int latent_dim_;
  std::vector<double> sigma_sq_;
  std::vector<double> gamma_bar_;
  std::vector<double> c_;
};

DiffusionSchedule build_schedule(int num_steps, double sigma_sq_min,
                                 double sigma_sq_max, int latent_dim);

/// Entropy H(z_t | z_{t-1}) of the Gaussian forward transition, in nats.
double step_entropy(const DiffusionSchedule& sched, int t);

}  // namespace ldebm
