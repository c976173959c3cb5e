#include <cmath>
#include <numbers>

#include "doctest.h"
#include "fixtures.hpp"
#include "ldebm/energy_model.hpp"
#include "ldebm/rng.hpp"
#include "ldebm/sampler.hpp"
#include "ldebm/schedule.hpp"

using namespace ldebm;

namespace {

EnergyModelConfig small_config(int d = 2, int k = 4) {
  EnergyModelConfig c;
  c.latent_dim = d;
  c.num_classes = k;
  c.num_steps = 6;
  c.hidden_dim = 16;
  c.time_embed_dim = 8;
  c.num_res_blocks = 2;
  return c;
}

}  // namespace

TEST_SUITE("energy_model") {

TEST_CASE("zero parameters give zero logits") {
  Rng rng(1);
  EnergyModel m(small_config(), rng);
  for (Parameter* p : m.parameters()) p->value.setZero();
  const Eigen::MatrixXd z = Rng(2).normal_matrix(2, 5);
  const std::vector<int> t{0, 1, 2, 3, 5};
  CHECK(m.logits(z, t).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("deterministic and finite on random inputs") {
  Rng a(7), b(7);
  EnergyModel m1(small_config(), a), m2(small_config(), b);
  Rng zr(3);
  const Eigen::MatrixXd z = 3.0 * zr.normal_matrix(2, 1000);
  std::vector<int> t(1000);
  for (int j = 0; j < 1000; ++j) t[j] = j % 6;
  const Eigen::MatrixXd l1 = m1.logits(z, t);
  CHECK(l1.allFinite());
  CHECK((l1 - m1.logits(z, t)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((l1 - m2.logits(z, t)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("log-sum-exp values and bounds") {
  CHECK(log_sum_exp(Eigen::Vector2d(0, 0))(0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  const double expect = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(log_sum_exp(Eigen::Vector3d(1, 2, 3))(0) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(log_sum_exp(Eigen::Vector3d(1, 2, 3))(0) == doctest::Approx(3.4076).epsilon(1e-4));
  CHECK(log_sum_exp(Eigen::MatrixXd::Constant(1, 1, -4.25))(0) == -4.25);
  CHECK(std::isfinite(log_sum_exp(Eigen::Vector2d(1000, 999))(0)));

  EnergyModelConfig c1 = small_config(2, 1);
  Rng rng(4);
  EnergyModel single(c1, rng);
  const Eigen::MatrixXd z = Rng(5).normal_matrix(2, 10);
  const std::vector<int> t(10, 2);
  CHECK((single.energy(z, t) - single.logits(z, t)).cwiseAbs().maxCoeff() == 0.0);

  Rng r2(9);
  EnergyModel m(small_config(2, 5), r2);
  const Eigen::MatrixXd l = m.logits(z, t);
  const Eigen::RowVectorXd f = m.energy(z, t);
  for (int j = 0; j < 10; ++j) {
    CHECK(f(j) >= l.col(j).maxCoeff());
    CHECK(f(j) <= l.col(j).maxCoeff() + std::log(5.0) + 1e-12);
  }
}

TEST_CASE("softmax classification") {
  const SymbolDistribution u = symbol_distribution(Eigen::Vector4d::Zero());
  for (int k = 0; k < 4; ++k) CHECK(u.probs(k) == doctest::Approx(0.25).epsilon(1e-15));
  const SymbolDistribution p = symbol_distribution(Eigen::Vector2d(1, 0));
  CHECK(p.probs(0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
  CHECK(p.probs(0) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(p.probs(1) == doctest::Approx(0.2689).epsilon(1e-3));
  CHECK(symbol_distribution(Eigen::Vector3d(2, -1, 0)).argmax() == 0);
  CHECK(symbol_distribution(Eigen::Vector3d(1, 3, 3)).argmax() == 1);

  Rng rng(11);
  EnergyModel m(small_config(3, 6), rng);
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 3);
  const Eigen::MatrixXd z = Rng(12).normal_matrix(3, 50);
  const Eigen::MatrixXd probs = classify_batch(m, s, z);
  for (int j = 0; j < 50; ++j) {
    CHECK(std::abs(probs.col(j).sum() - 1.0) < 1e-9);
    const Eigen::VectorXd l = m.logits(Eigen::VectorXd(std::sqrt(1.0 - s.sigma_sq(1)) * z.col(j)), 0);
    const Eigen::VectorXd shifted = symbol_distribution(l.array() + 17.0).probs;
    CHECK((shifted - probs.col(j)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conditional log density with zero energy") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  fixtures::ZeroEnergy zero(2);
  const Eigen::Vector2d zn(0.3, -0.7);
  CHECK(conditional_log_density(zero, zn, zn, s, 2) == 0.0);
  // |z~ - z_next|^2 = 2 sigma^2 at t = 1 (sigma_2^2).
  const double r = std::sqrt(s.sigma_sq(2));
  const Eigen::Vector2d zt = zn + Eigen::Vector2d(r, r);
  CHECK(conditional_log_density(zero, zt, zn, s, 1) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(conditional_log_density(zero, Eigen::Vector2d::Zero(), zn, s, 5) == 0.0);
  const Eigen::Vector2d g = grad_z_conditional(zero, zt, zn, s, 1);
  CHECK((g + (zt - zn) / s.sigma_sq(2)).norm() == 0.0);

  // Pairwise differences match the Gaussian log-density N(z_next, sigma^2 I).
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const int t = static_cast<int>(rng.below(5));
    const Eigen::VectorXd a = rng.normal_matrix(2, 1), b = rng.normal_matrix(2, 1);
    const double v = s.sigma_sq(t + 1);
    const double expect = -((a - zn).squaredNorm() - (b - zn).squaredNorm()) / (2.0 * v);
    const double got = conditional_log_density(zero, a, zn, s, t) -
                       conditional_log_density(zero, b, zn, s, t);
    CHECK(std::abs(got - expect) < 1e-10);
  }
}

TEST_CASE("grad_z_conditional matches finite differences") {
  int worst_fail = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(1000 + trial);
    const int d = 1 + static_cast<int>(rng.below(4));
    EnergyModel m(small_config(d, 3 + static_cast<int>(rng.below(4))), rng);
    const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, d);
    const int t = static_cast<int>(rng.below(6));
    const Eigen::VectorXd zn = rng.normal_matrix(d, 1);
    const Eigen::VectorXd zt = zn + 0.3 * rng.normal_matrix(d, 1);
    const Eigen::VectorXd g = grad_z_conditional(m, zt, zn, s, t);
    const Eigen::VectorXd fd = fixtures::numeric_gradient(
        [&](const Eigen::VectorXd& x) { return conditional_log_density(m, x, zn, s, t); }, zt, 1e-5);
    const double e = fixtures::rel_err(g, fd);
    worst = std::max(worst, e);
    if (e > 1e-4) ++worst_fail;
  }
  INFO("worst relative error " << worst);
  CHECK(worst_fail == 0);
}

TEST_CASE("gradient vanishes at a stationary point of a 1-D model") {
  Rng rng(21);
  EnergyModel m(small_config(1, 3), rng);
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 1);
  const Eigen::VectorXd zn = Eigen::VectorXd::Constant(1, 0.4);
  const int t = 2;
  auto g = [&](double x) {
    return grad_z_conditional(m, Eigen::VectorXd::Constant(1, x), zn, s, t)(0);
  };
  // The quadratic dominates far away, so the gradient changes sign on [-10, 10].
  double lo = -10.0, hi = 10.0;
  REQUIRE(g(lo) > 0.0);
  REQUIRE(g(hi) < 0.0);
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0.0 ? lo : hi) = mid;
  }
  CHECK(std::abs(g(0.5 * (lo + hi))) < 1e-6);
}

TEST_CASE("symbol-coupled gradient matches finite differences") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(300 + trial);
    EnergyModel m(small_config(2, 4), rng);
    const int k = static_cast<int>(rng.below(4));
    const SymbolCoupledEnergy e(m, k);
    const Eigen::MatrixXd z = rng.normal_matrix(2, 1);
    for (int t : {0, 3}) {
      const int ts[1] = {t};
      Eigen::MatrixXd grad;
      e.energy_and_gradient(z, ts, grad);
      const Eigen::VectorXd fd = fixtures::numeric_gradient(
          [&](const Eigen::VectorXd& x) { return e.energy(x, ts)(0); }, z.col(0), 1e-5);
      CHECK(fixtures::rel_err(grad.col(0), fd) <= 1e-4);
      if (t == 0) CHECK(e.energy(z, ts)(0) == m.logits(Eigen::VectorXd(z.col(0)), 0)(k));
      else CHECK(e.energy(z, ts)(0) == m.energy(z, ts)(0));
    }
  }
}

TEST_CASE("spectral normalization") {
  Rng rng(5);
  Linear diag("w", 2, 2, rng);
  diag.weight.value = Eigen::Vector2d(3.0, 1.0).asDiagonal();
  for (int i = 0; i < 50; ++i) diag.spectral_normalize();
  CHECK(diag.weight.value(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(diag.weight.value(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(std::abs(diag.weight.value(0, 1)) < 1e-12);

  Linear id("w", 3, 3, rng);
  id.weight.value = Eigen::Matrix3d::Identity();
  for (int i = 0; i < 5; ++i) id.spectral_normalize();
  CHECK((id.weight.value - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);

  Linear zero("w", 3, 2, rng);
  zero.weight.value.setZero();
  zero.spectral_normalize();
  CHECK(zero.weight.value.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rejects malformed inputs") {
  Rng rng(1);
  EnergyModel m(small_config(), rng);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(2, 2);
  const std::vector<int> bad_t{0, 6};
  CHECK_THROWS(m.logits(z, bad_t));
  const std::vector<int> short_t{0};
  CHECK_THROWS(m.logits(z, short_t));
  CHECK_THROWS(m.logits(Eigen::MatrixXd::Zero(3, 2), std::vector<int>{0, 0}));
}

}
