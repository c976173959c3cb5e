#pragma once

#include <vector>

#include <Eigen/Core>

#include "ldebm/rng.hpp"
#include "ldebm/schedule.hpp"

namespace ldebm {

/// z_0 ... z_T of one forward diffusion.
struct LatentTrajectory {
  std::vector<Eigen::VectorXd> z;

  int num_steps() const { return static_cast<int>(z.size()) - 1; }
  /// z~_t = sqrt(1 - sigma_{t+1}^2) z_t for t < T.
  Eigen::VectorXd scaled(int t, const DiffusionSchedule& sched) const;
};

/// sqrt(1 - sigma^2) z + sigma eps.
Eigen::VectorXd forward_step(const Eigen::VectorXd& z, double sigma_sq_next,
                             Rng& rng);

/// One draw from q(z_t | z_0) = N(sqrt(gamma_bar_t) z_0, (1 - gamma_bar_t) I).
Eigen::VectorXd diffuse_to(const Eigen::VectorXd& z0, int t,
                           const DiffusionSchedule& sched, Rng& rng);

/// Full forward trajectory z_0 -> z_T by repeated forward_step.
LatentTrajectory forward_trajectory(const Eigen::VectorXd& z0,
                                    const DiffusionSchedule& sched, Rng& rng);

struct PerturbedPair {
  Eigen::VectorXd z_tilde;  // sqrt(1 - sigma_{t+1}^2) z_t
  Eigen::VectorXd z_next;   // z_tilde + sigma_{t+1} eps
};

/// Positive training pair at step t in [0, T-1].
PerturbedPair sample_pair(const Eigen::VectorXd& z0, int t,
                          const DiffusionSchedule& sched, Rng& rng);

/// Column-batched sample_pair; column j uses t[j] and rng.split(j).
void sample_pairs(const Eigen::MatrixXd& z0, const std::vector<int>& t,
                  const DiffusionSchedule& sched, const Rng& rng,
                  Eigen::MatrixXd& z_tilde, Eigen::MatrixXd& z_next);

}  // namespace ldebm
