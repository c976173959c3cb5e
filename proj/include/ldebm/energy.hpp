#pragma once

#include <span>

#include <Eigen/Core>

#include "ldebm/nn.hpp"

namespace ldebm {

/// Negative energy F(z, t) over latent column batches. The samplers and
/// estimators only need values and input gradients; column j of `z` is
/// evaluated at diffusion step t[j].
class LatentEnergy {
 public:
  virtual ~LatentEnergy() = default;

  virtual int latent_dim() const = 0;

  virtual Eigen::RowVectorXd energy(const Eigen::MatrixXd& z,
                                    std::span<const int> t) const = 0;

  /// Returns F and writes dF/dz (same shape as z) into `grad`.
  virtual Eigen::RowVectorXd energy_and_gradient(const Eigen::MatrixXd& z,
                                                 std::span<const int> t,
                                                 Eigen::MatrixXd& grad) const = 0;
};

/// An energy whose parameters are learned by contrastive updates.
class TrainableEnergy : public LatentEnergy {
 public:
  virtual ParameterList parameters() = 0;

  /// grad(alpha) += sum_j weights[j] * dF(z_j, t_j)/d alpha.
  virtual void accumulate_parameter_gradient(const Eigen::MatrixXd& z,
                                             std::span<const int> t,
                                             const Eigen::RowVectorXd& weights) = 0;
};

}  // namespace ldebm
