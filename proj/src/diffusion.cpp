#include "ldebm/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ldebm {

Eigen::VectorXd LatentTrajectory::scaled(int t,
                                         const DiffusionSchedule& sched) const {
  return std::sqrt(1.0 - sched.sigma_sq(t + 1)) * z.at(t);
}

Eigen::VectorXd forward_step(const Eigen::VectorXd& z, double sigma_sq_next,
                             Rng& rng) {
  if (!(sigma_sq_next > 0.0 && sigma_sq_next < 1.0))
    throw std::invalid_argument("forward_step: sigma^2 must lie in (0, 1)");
  Eigen::VectorXd out(z.size());
  const double keep = std::sqrt(1.0 - sigma_sq_next);
  const double noise = std::sqrt(sigma_sq_next);
  for (Eigen::Index i = 0; i < z.size(); ++i)
    out(i) = keep * z(i) + noise * rng.normal();
  return out;
}

Eigen::VectorXd diffuse_to(const Eigen::VectorXd& z0, int t,
                           const DiffusionSchedule& sched, Rng& rng) {
  if (t < 1 || t > sched.num_steps())
    throw std::out_of_range("diffuse_to: step " + std::to_string(t) +
                            " outside [1, T]");
  const double gb = sched.gamma_bar(t);
  Eigen::VectorXd out(z0.size());
  const double keep = std::sqrt(gb);
  const double noise = std::sqrt(1.0 - gb);
  for (Eigen::Index i = 0; i < z0.size(); ++i)
    out(i) = keep * z0(i) + noise * rng.normal();
  return out;
}

LatentTrajectory forward_trajectory(const Eigen::VectorXd& z0,
                                    const DiffusionSchedule& sched, Rng& rng) {
  LatentTrajectory traj;
  traj.z.reserve(sched.num_steps() + 1);
  traj.z.push_back(z0);
  for (int t = 1; t <= sched.num_steps(); ++t)
    traj.z.push_back(forward_step(traj.z.back(), sched.sigma_sq(t), rng));
  return traj;
}

PerturbedPair sample_pair(const Eigen::VectorXd& z0, int t,
                          const DiffusionSchedule& sched, Rng& rng) {
  if (t < 0 || t > sched.num_steps() - 1)
    throw std::out_of_range("sample_pair: step " + std::to_string(t) +
                            " outside [0, T-1]");
  const Eigen::VectorXd zt = t == 0 ? z0 : diffuse_to(z0, t, sched, rng);
  PerturbedPair pair;
  pair.z_tilde = std::sqrt(1.0 - sched.sigma_sq(t + 1)) * zt;
  pair.z_next = pair.z_tilde;
  const double sigma = sched.sigma(t + 1);
  for (Eigen::Index i = 0; i < zt.size(); ++i) pair.z_next(i) += sigma * rng.normal();
  return pair;
}

void sample_pairs(const Eigen::MatrixXd& z0, const std::vector<int>& t,
                  const DiffusionSchedule& sched, const Rng& rng,
                  Eigen::MatrixXd& z_tilde, Eigen::MatrixXd& z_next) {
  if (static_cast<Eigen::Index>(t.size()) != z0.cols())
    throw std::invalid_argument("sample_pairs: one step per column required");
  z_tilde.resize(z0.rows(), z0.cols());
  z_next.resize(z0.rows(), z0.cols());
  for (Eigen::Index j = 0; j < z0.cols(); ++j) {
    Rng col_rng = rng.split(static_cast<std::uint64_t>(j));
    PerturbedPair p = sample_pair(z0.col(j), t[j], sched, col_rng);
    z_tilde.col(j) = p.z_tilde;
    z_next.col(j) = p.z_next;
  }
}

}  // namespace ldebm
