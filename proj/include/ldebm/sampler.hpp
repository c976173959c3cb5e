#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ldebm/energy.hpp"
#include "ldebm/energy_model.hpp"
#include "ldebm/rng.hpp"
#include "ldebm/schedule.hpp"

namespace ldebm {

/// Which noise level drives the chain for [z_t | z_{t+1}].
enum class StepIndexing {
  kNext,     // sigma_{t+1}, c_{t+1}: the level in the conditional's quadratic
  kCurrent,  // sigma_t, c_t (t = 0 falls back to step 1)
};

struct LangevinConfig {
  int n_steps = 50;
  double b_sq = 0.002;
  bool with_noise = true;
  StepIndexing indexing = StepIndexing::kNext;
};

/// Raised when a chain leaves the finite reals.
class SamplerError : public std::runtime_error {
 public:
  SamplerError(int step, int column, double energy);
  int step;
  int column;
  double energy;
};

/// Noise level and step size s = b sigma c used at diffusion step t.
struct LangevinStepSize {
  double sigma_sq;
  double step;
};
LangevinStepSize langevin_step_size(const DiffusionSchedule& sched, int t,
                                    const LangevinConfig& cfg);

/// z~ + (s^2/2) [grad F(z~, t) - (z~ - z_{t+1}) / sigma^2] + s eps.
/// At t = T-1 the quadratic is centred at zero.
Eigen::VectorXd langevin_step(const LatentEnergy& energy,
                              const Eigen::VectorXd& z_tilde,
                              const Eigen::VectorXd& z_next,
                              const DiffusionSchedule& sched, int t,
                              const LangevinConfig& cfg, Rng& rng);

/// Batched step; column j draws its noise from rngs[j].
Eigen::MatrixXd langevin_step(const LatentEnergy& energy,
                              const Eigen::MatrixXd& z_tilde,
                              const Eigen::MatrixXd& z_next,
                              const DiffusionSchedule& sched,
                              std::span<const int> t, const LangevinConfig& cfg,
                              std::span<Rng> rngs, int step_index = 0);

/// Runs cfg.n_steps Langevin updates from z~ = z_{t+1} (or from `start`
/// when given) and returns the final z~ (not rescaled). Column j uses
/// rng.split(j).
Eigen::MatrixXd langevin_chain(const LatentEnergy& energy,
                               const Eigen::MatrixXd& z_next,
                               const DiffusionSchedule& sched,
                               std::span<const int> t, const LangevinConfig& cfg,
                               const Rng& rng, const Eigen::MatrixXd* start = nullptr);

/// One reverse transition: z_t = chain(z_{t+1}) / sqrt(1 - sigma_{t+1}^2).
Eigen::VectorXd sample_conditional(const LatentEnergy& energy,
                                   const Eigen::VectorXd& z_next,
                                   const DiffusionSchedule& sched, int t,
                                   const LangevinConfig& cfg, Rng& rng);

/// Reverse trajectory from z_T ~ N(0, I) down to z_0, for n samples
/// (columns). Column j uses rng.split(j).
Eigen::MatrixXd synthesize(const LatentEnergy& energy,
                           const DiffusionSchedule& sched,
                           const LangevinConfig& cfg, int n, const Rng& rng);
Eigen::VectorXd synthesize(const LatentEnergy& energy,
                           const DiffusionSchedule& sched,
                           const LangevinConfig& cfg, Rng& rng);

/// Energy that replaces F(z, 0) with the single logit <y, f(z, 0)>; other
/// steps keep the marginal F.
class SymbolCoupledEnergy : public LatentEnergy {
 public:
  SymbolCoupledEnergy(const EnergyModel& model, int symbol);

  int latent_dim() const override { return model_.latent_dim(); }
  Eigen::RowVectorXd energy(const Eigen::MatrixXd& z,
                            std::span<const int> t) const override;
  Eigen::RowVectorXd energy_and_gradient(const Eigen::MatrixXd& z,
                                         std::span<const int> t,
                                         Eigen::MatrixXd& grad) const override;

 private:
  const EnergyModel& model_;
  int symbol_;
};

/// Index of the hot entry; throws unless y is one-hot of length K.
int one_hot_index(const Eigen::VectorXd& y, int num_classes);

/// Synthesis with the final reverse step [z_0 | z_1] conditioned on y.
Eigen::MatrixXd synthesize_controlled(const EnergyModel& model,
                                      const Eigen::VectorXd& y,
                                      const DiffusionSchedule& sched,
                                      const LangevinConfig& cfg, int n,
                                      const Rng& rng);
Eigen::VectorXd synthesize_controlled(const EnergyModel& model,
                                      const Eigen::VectorXd& y,
                                      const DiffusionSchedule& sched,
                                      const LangevinConfig& cfg, Rng& rng);

}  // namespace ldebm
