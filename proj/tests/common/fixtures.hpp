#pragma once

#include <cmath>
#include <functional>
#include <span>

#include <Eigen/Core>

#include "ldebm/energy.hpp"
#include "ldebm/nn.hpp"

namespace fixtures {

/// F = 0 everywhere.
class ZeroEnergy : public ldebm::LatentEnergy {
 public:
  explicit ZeroEnergy(int d) : d_(d) {}
  int latent_dim() const override { return d_; }
  Eigen::RowVectorXd energy(const Eigen::MatrixXd& z, std::span<const int>) const override {
    return Eigen::RowVectorXd::Zero(z.cols());
  }
  Eigen::RowVectorXd energy_and_gradient(const Eigen::MatrixXd& z, std::span<const int>,
                                         Eigen::MatrixXd& grad) const override {
    grad = Eigen::MatrixXd::Zero(z.rows(), z.cols());
    return Eigen::RowVectorXd::Zero(z.cols());
  }

 private:
  int d_;
};

/// F = c everywhere.
class ConstantEnergy : public ZeroEnergy {
 public:
  ConstantEnergy(int d, double c) : ZeroEnergy(d), c_(c) {}
  Eigen::RowVectorXd energy(const Eigen::MatrixXd& z, std::span<const int>) const override {
    return Eigen::RowVectorXd::Constant(z.cols(), c_);
  }
  Eigen::RowVectorXd energy_and_gradient(const Eigen::MatrixXd& z, std::span<const int>,
                                         Eigen::MatrixXd& grad) const override {
    grad = Eigen::MatrixXd::Zero(z.rows(), z.cols());
    return Eigen::RowVectorXd::Constant(z.cols(), c_);
  }

 private:
  double c_;
};

/// F = -curv/2 |z - m|^2, the same for every step.
class QuadraticEnergy : public ldebm::LatentEnergy {
 public:
  QuadraticEnergy(Eigen::VectorXd m, double curv) : m_(std::move(m)), curv_(curv) {}
  int latent_dim() const override { return static_cast<int>(m_.size()); }
  Eigen::RowVectorXd energy(const Eigen::MatrixXd& z, std::span<const int>) const override {
    return -0.5 * curv_ * (z.colwise() - m_).colwise().squaredNorm();
  }
  Eigen::RowVectorXd energy_and_gradient(const Eigen::MatrixXd& z, std::span<const int> t,
                                         Eigen::MatrixXd& grad) const override {
    grad = -curv_ * (z.colwise() - m_);
    return energy(z, t);
  }

 private:
  Eigen::VectorXd m_;
  double curv_;
};

/// 1-D trainable F = alpha * z.
class LinearEnergy : public ldebm::TrainableEnergy {
 public:
  explicit LinearEnergy(double alpha) : alpha_("alpha", Eigen::MatrixXd::Constant(1, 1, alpha)) {}
  int latent_dim() const override { return 1; }
  double alpha() const { return alpha_.value(0, 0); }
  Eigen::RowVectorXd energy(const Eigen::MatrixXd& z, std::span<const int>) const override {
    return alpha() * z.row(0);
  }
  Eigen::RowVectorXd energy_and_gradient(const Eigen::MatrixXd& z, std::span<const int> t,
                                         Eigen::MatrixXd& grad) const override {
    grad = Eigen::MatrixXd::Constant(1, z.cols(), alpha());
    return energy(z, t);
  }
  ldebm::ParameterList parameters() override { return {&alpha_}; }
  void accumulate_parameter_gradient(const Eigen::MatrixXd& z, std::span<const int>,
                                     const Eigen::RowVectorXd& w) override {
    alpha_.grad(0, 0) += (z.row(0).array() * w.array()).sum();
  }

 private:
  ldebm::Parameter alpha_;
};

/// Central difference of a scalar function of a vector.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor).
inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-8) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), floor});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace fixtures
