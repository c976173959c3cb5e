#include <cmath>
#include <cstdlib>
#include <limits>

#include "doctest.h"
#include "fixtures.hpp"
#include "ldebm/energy_model.hpp"
#include "ldebm/parallel.hpp"
#include "ldebm/sampler.hpp"
#include "ldebm/schedule.hpp"

using namespace ldebm;

namespace {

// Variance of the noise accumulated by n F = 0 Langevin steps from the
// centre: s^2 (1 - a^(2n)) / (1 - a^2).
double chain_variance(double a, double s2, int n) {
  return s2 * (1.0 - std::pow(a, 2 * n)) / (1.0 - a * a);
}

class NanEnergy : public fixtures::ZeroEnergy {
 public:
  NanEnergy() : ZeroEnergy(2) {}
  Eigen::RowVectorXd energy_and_gradient(const Eigen::MatrixXd& z, std::span<const int>,
                                         Eigen::MatrixXd& grad) const override {
    grad = Eigen::MatrixXd::Zero(z.rows(), z.cols());
    grad.col(z.cols() - 1).setConstant(std::numeric_limits<double>::quiet_NaN());
    return Eigen::RowVectorXd::Zero(z.cols());
  }
};

EnergyModelConfig tiny(int d, int k) {
  EnergyModelConfig c;
  c.latent_dim = d;
  c.num_classes = k;
  c.hidden_dim = 8;
  c.time_embed_dim = 4;
  c.num_res_blocks = 1;
  return c;
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("step size indexing") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  LangevinConfig cfg;
  for (int t = 0; t < 6; ++t) {
    const LangevinStepSize n = langevin_step_size(s, t, cfg);
    CHECK(n.sigma_sq == s.sigma_sq(t + 1));
    CHECK(n.step == doctest::Approx(std::sqrt(cfg.b_sq) * s.sigma(t + 1) * s.c(t + 1)).epsilon(1e-14));
  }
  cfg.indexing = StepIndexing::kCurrent;
  CHECK(langevin_step_size(s, 3, cfg).sigma_sq == s.sigma_sq(3));
  CHECK(langevin_step_size(s, 0, cfg).sigma_sq == s.sigma_sq(1));
  CHECK_THROWS(langevin_step_size(s, 6, cfg));
}

TEST_CASE("zero energy: fixed point and linear recursion") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  fixtures::ZeroEnergy zero(2);
  LangevinConfig quiet;
  quiet.with_noise = false;
  const Eigen::Vector2d zn(0.4, -1.1);
  Rng rng(1);
  CHECK((langevin_step(zero, zn, zn, s, 2, quiet, rng) - zn).norm() == 0.0);

  LangevinConfig cfg;
  for (int t = 0; t < 5; ++t) {
    const LangevinStepSize ss = langevin_step_size(s, t, cfg);
    const double a = 1.0 - ss.step * ss.step / (2.0 * ss.sigma_sq);
    const Eigen::Vector2d zt = zn + Eigen::Vector2d(0.3, 0.2);
    Rng r(5 + t), copy(5 + t);
    const Eigen::VectorXd out = langevin_step(zero, zt, zn, s, t, cfg, r);
    Eigen::Vector2d eps;
    eps(0) = copy.normal();
    eps(1) = copy.normal();
    const Eigen::Vector2d expect = a * (zt - zn) + ss.step * eps;
    CHECK((out - zn - expect).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("chains are deterministic") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  Rng mr(3);
  EnergyModel m(tiny(2, 4), mr);
  const Eigen::MatrixXd zn = Rng(4).normal_matrix(2, 300);
  const std::vector<int> t(300, 1);
  const Eigen::MatrixXd a = langevin_chain(m, zn, s, t, LangevinConfig{}, Rng(9));
  const Eigen::MatrixXd b = langevin_chain(m, zn, s, t, LangevinConfig{}, Rng(9));
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

  ::setenv("LDEBM_NUM_WORKERS", "3", 1);
  const Eigen::MatrixXd c = langevin_chain(m, zn, s, t, LangevinConfig{}, Rng(9));
  ::setenv("LDEBM_NUM_WORKERS", "1", 1);
  const Eigen::MatrixXd d = langevin_chain(m, zn, s, t, LangevinConfig{}, Rng(9));
  ::unsetenv("LDEBM_NUM_WORKERS");
  CHECK((a - c).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - d).cwiseAbs().maxCoeff() == 0.0);

  // A column's chain does not depend on the batch around it.
  const Eigen::MatrixXd one =
      langevin_chain(m, zn.leftCols(1), s, std::vector<int>(1, 1), LangevinConfig{}, Rng(9));
  CHECK((one.col(0) - a.col(0)).norm() == 0.0);
}

TEST_CASE("no-op chain returns the rescaled start") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  fixtures::ZeroEnergy zero(2);
  LangevinConfig cfg;
  cfg.n_steps = 0;
  const Eigen::Vector2d zn(1.0, 2.0);
  Rng rng(1);
  const Eigen::VectorXd z = sample_conditional(zero, zn, s, 3, cfg, rng);
  CHECK((z - zn / std::sqrt(1.0 - s.sigma_sq(4))).norm() == 0.0);
}

TEST_CASE("zero energy chain moments follow the AR(1) law") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  fixtures::ZeroEnergy zero(2);
  const LangevinConfig cfg;
  const int n = 10000;
  const Eigen::Vector2d centre(0.5, -0.25);
  for (int t = 0; t < 5; ++t) {
    const LangevinStepSize ss = langevin_step_size(s, t, cfg);
    const double a = 1.0 - ss.step * ss.step / (2.0 * ss.sigma_sq);
    const double var = chain_variance(a, ss.step * ss.step, cfg.n_steps);
    const Eigen::MatrixXd zn = centre.replicate(1, n);
    const Eigen::MatrixXd z = langevin_chain(zero, zn, s, std::vector<int>(n, t), cfg, Rng(40 + t));
    const Eigen::Vector2d mean = z.rowwise().mean();
    const Eigen::Vector2d v = (z.colwise() - mean).rowwise().squaredNorm() / (n - 1);
    for (int i = 0; i < 2; ++i) {
      CHECK(std::abs(mean(i) - centre(i)) <= 0.05 * std::sqrt(ss.sigma_sq));
      CHECK(std::abs(v(i) / var - 1.0) <= 0.15);
    }
  }
}

TEST_CASE("long zero energy chains reach the stationary variance") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 1);
  fixtures::ZeroEnergy zero(1);
  LangevinConfig cfg;
  cfg.n_steps = 20000;
  const int n = 2000;
  const LangevinStepSize ss = langevin_step_size(s, 2, cfg);
  const double a = 1.0 - ss.step * ss.step / (2.0 * ss.sigma_sq);
  const double stationary = ss.step * ss.step / (1.0 - a * a);
  const Eigen::MatrixXd z =
      langevin_chain(zero, Eigen::MatrixXd::Zero(1, n), s, std::vector<int>(n, 2), cfg, Rng(8));
  const double v = z.squaredNorm() / n;
  CHECK(std::abs(v / stationary - 1.0) < 0.1);
}

TEST_CASE("noise-off chain settles at the total-energy stationary point") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 1);
  const fixtures::QuadraticEnergy sharp(Eigen::VectorXd::Constant(1, 0.8), 50.0);
  LangevinConfig cfg;
  cfg.with_noise = false;
  cfg.n_steps = 1;
  const Eigen::VectorXd zn = Eigen::VectorXd::Constant(1, -0.2);
  Eigen::VectorXd z = zn;
  Rng rng(1);
  double prev = -conditional_log_density(sharp, z, zn, s, 0);
  bool monotone = true;
  for (int k = 0; k < 20000; ++k) {
    z = langevin_step(sharp, z, zn, s, 0, cfg, rng);
    const double e = -conditional_log_density(sharp, z, zn, s, 0);
    monotone = monotone && e <= prev + 1e-12 * std::max(1.0, std::abs(prev));
    prev = e;
  }
  CHECK(monotone);
  CHECK(grad_z_conditional(sharp, z, zn, s, 0).norm() <= 1e-3);
}

TEST_CASE("zero energy synthesis composes Gaussian conditionals") {
  const int d = 2;
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, d);
  fixtures::ZeroEnergy zero(d);
  const LangevinConfig cfg;
  // Var z_T = 1; each reverse step shrinks the offset from the chain centre by
  // a^n (only at T-1, where the centre is 0) and adds the chain variance.
  double var = 1.0;
  for (int t = s.num_steps() - 1; t >= 0; --t) {
    const LangevinStepSize ss = langevin_step_size(s, t, cfg);
    const double a = 1.0 - ss.step * ss.step / (2.0 * ss.sigma_sq);
    const double keep = t == s.num_steps() - 1 ? std::pow(a, 2 * cfg.n_steps) : 1.0;
    var = (keep * var + chain_variance(a, ss.step * ss.step, cfg.n_steps)) /
          (1.0 - s.sigma_sq(t + 1));
  }
  const int n = 10000;
  const Eigen::MatrixXd z = synthesize(zero, s, cfg, n, Rng(123));
  CHECK(z.rows() == d);
  const Eigen::VectorXd mean = z.rowwise().mean();
  const Eigen::MatrixXd c = z.colwise() - mean;
  const Eigen::MatrixXd cov = c * c.transpose() / (n - 1);
  for (int i = 0; i < d; ++i) CHECK(std::abs(cov(i, i) / var - 1.0) < 0.05);
  CHECK(std::abs(cov(0, 1)) < 0.05 * var);

  Rng a(5), b(5);
  CHECK((synthesize(zero, s, cfg, a) - synthesize(zero, s, cfg, b)).norm() == 0.0);
  CHECK(synthesize(zero, s, cfg, a).size() == d);
}

TEST_CASE("controlled synthesis") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  LangevinConfig cfg;
  cfg.n_steps = 10;
  Rng r1(3);
  EnergyModel single(tiny(2, 1), r1);
  const Eigen::VectorXd y1 = Eigen::VectorXd::Ones(1);
  const Eigen::MatrixXd plain = synthesize(single, s, cfg, 50, Rng(6));
  const Eigen::MatrixXd coupled = synthesize_controlled(single, y1, s, cfg, 50, Rng(6));
  CHECK((plain - coupled).cwiseAbs().maxCoeff() == 0.0);

  Rng r2(4);
  EnergyModel m(tiny(2, 3), r2);
  CHECK_THROWS(synthesize_controlled(m, Eigen::Vector3d(1, 1, 0), s, cfg, 1, Rng(1)));
  CHECK_THROWS(synthesize_controlled(m, Eigen::Vector3d(0.5, 0.5, 0), s, cfg, 1, Rng(1)));
  CHECK_THROWS(synthesize_controlled(m, Eigen::Vector2d(1, 0), s, cfg, 1, Rng(1)));
  CHECK_THROWS(synthesize_controlled(m, Eigen::Vector3d(0, 0, 0), s, cfg, 1, Rng(1)));
  CHECK(synthesize_controlled(m, Eigen::Vector3d(0, 0, 1), s, cfg, 4, Rng(1)).allFinite());
}

TEST_CASE("divergence reports step and column") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  NanEnergy nan;
  const int n = 200;
  try {
    langevin_chain(nan, Eigen::MatrixXd::Zero(2, n), s, std::vector<int>(n, 0), LangevinConfig{},
                   Rng(1));
    FAIL("expected a SamplerError");
  } catch (const SamplerError& e) {
    CHECK(e.step == 0);
    // The last column of the first 128-column chunk fails first.
    CHECK(e.column == 127);
  }
}

}
