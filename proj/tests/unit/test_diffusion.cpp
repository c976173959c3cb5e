#include <cmath>

#include "doctest.h"
#include "ldebm/diffusion.hpp"
#include "ldebm/rng.hpp"
#include "ldebm/schedule.hpp"

using namespace ldebm;

namespace {

struct Moments {
  Eigen::VectorXd mean, var;
};

Moments moments(const std::vector<Eigen::VectorXd>& xs) {
  const Eigen::Index d = xs.front().size();
  Moments m{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
  for (const auto& x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (const auto& x : xs) m.var += (x - m.mean).cwiseAbs2();
  m.var /= static_cast<double>(xs.size() - 1);
  return m;
}

constexpr int kDraws = 100000;

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("forward step limits") {
  Rng rng(1);
  const Eigen::Vector2d z(0.7, -1.3);
  CHECK((forward_step(z, 1e-20, rng) - z).norm() < 1e-9);

  std::vector<Eigen::VectorXd> xs;
  for (int i = 0; i < 20000; ++i) xs.push_back(forward_step(Eigen::Vector2d::Zero(), 1.0 - 1e-12, rng));
  const Moments m = moments(xs);
  CHECK(m.mean.cwiseAbs().maxCoeff() < 3.0 / std::sqrt(20000.0) * 1.5);
  CHECK((m.var.array() - 1.0).abs().maxCoeff() < 0.05);
  CHECK_THROWS(forward_step(z, 0.0, rng));
  CHECK_THROWS(forward_step(z, 1.0, rng));
}

TEST_CASE("forward step moments") {
  Rng rng(2);
  const Eigen::Vector2d z(1.5, -0.5);
  const double v = 0.168;
  std::vector<Eigen::VectorXd> xs;
  xs.reserve(kDraws);
  for (int i = 0; i < kDraws; ++i) xs.push_back(forward_step(z, v, rng));
  const Moments m = moments(xs);
  const Eigen::Vector2d expect = std::sqrt(1.0 - v) * z;
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(m.mean(i) - expect(i)) < 3.0 * std::sqrt(v / kDraws));
    CHECK(std::abs(m.var(i) / v - 1.0) < 0.02);
  }
}

TEST_CASE("diffuse_to matches the closed form and step composition") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  const Eigen::Vector2d z0(1.0, -2.0);
  for (int t = 1; t <= 6; ++t) {
    Rng a(10 + t), b(100 + t);
    std::vector<Eigen::VectorXd> direct, composed;
    direct.reserve(kDraws);
    composed.reserve(kDraws);
    for (int i = 0; i < kDraws; ++i) {
      direct.push_back(diffuse_to(z0, t, s, a));
      Eigen::VectorXd z = z0;
      for (int k = 1; k <= t; ++k) z = forward_step(z, s.sigma_sq(k), b);
      composed.push_back(z);
    }
    const Moments md = moments(direct), mc = moments(composed);
    const double gb = s.gamma_bar(t);
    for (int i = 0; i < 2; ++i) {
      CHECK(std::abs(md.mean(i) - std::sqrt(gb) * z0(i)) < 0.02 * std::max(1.0, std::abs(z0(i))));
      CHECK(std::abs(md.var(i) / (1.0 - gb) - 1.0) < 0.02);
      CHECK(std::abs(md.mean(i) - mc.mean(i)) < 0.02 * std::max(1.0, std::abs(z0(i))));
      CHECK(std::abs(md.var(i) / mc.var(i) - 1.0) < 0.02);
    }
  }
  // One step is the forward transition, draw for draw.
  Rng a(5), b(5);
  CHECK((diffuse_to(z0, 1, s, a) - forward_step(z0, s.sigma_sq(1), b)).norm() < 1e-14);
}

TEST_CASE("z_T approaches the standard normal") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  CHECK(s.gamma_bar(6) <= 0.3);
  Rng rng(9);
  std::vector<Eigen::VectorXd> xs;
  xs.reserve(kDraws);
  for (int i = 0; i < kDraws; ++i) xs.push_back(forward_trajectory(Eigen::Vector2d::Zero(), s, rng).z.back());
  const Moments m = moments(xs);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(m.mean(i)) < 0.02);
    CHECK(std::abs(m.var(i) / (1.0 - s.gamma_bar(6)) - 1.0) < 0.02);
  }
}

TEST_CASE("perturbed pairs") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  const Eigen::Vector2d z0(0.5, 2.0);
  Rng r1(3), r2(3);
  const PerturbedPair p1 = sample_pair(z0, 2, s, r1), p2 = sample_pair(z0, 2, s, r2);
  CHECK((p1.z_tilde - p2.z_tilde).norm() == 0.0);
  CHECK((p1.z_next - p2.z_next).norm() == 0.0);

  Rng r0(4);
  const PerturbedPair p0 = sample_pair(z0, 0, s, r0);
  CHECK((p0.z_tilde - std::sqrt(1.0 - s.sigma_sq(1)) * z0).norm() == 0.0);

  for (int t : {0, 3, 5}) {
    Rng rng(20 + t);
    std::vector<Eigen::VectorXd> resid;
    resid.reserve(kDraws);
    for (int i = 0; i < kDraws; ++i) {
      const PerturbedPair p = sample_pair(z0, t, s, rng);
      resid.push_back(p.z_next - p.z_tilde);
    }
    const Moments m = moments(resid);
    const double v = s.sigma_sq(t + 1);
    for (int i = 0; i < 2; ++i) {
      CHECK(std::abs(m.mean(i)) < 3.0 * std::sqrt(v / kDraws));
      CHECK(std::abs(m.var(i) / v - 1.0) < 0.02);
    }
  }
  Rng bad(1);
  CHECK_THROWS(sample_pair(z0, 6, s, bad));
  CHECK_THROWS(sample_pair(z0, -1, s, bad));
}

TEST_CASE("batched pairs use one stream per column") {
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  const Eigen::MatrixXd z0 = Rng(1).normal_matrix(2, 4);
  const std::vector<int> t{0, 1, 4, 5};
  Eigen::MatrixXd zt, zn;
  const Rng root(77);
  sample_pairs(z0, t, s, root, zt, zn);
  for (int j = 0; j < 4; ++j) {
    Rng col = root.split(j);
    const PerturbedPair p = sample_pair(z0.col(j), t[j], s, col);
    CHECK((p.z_tilde - zt.col(j)).norm() == 0.0);
    CHECK((p.z_next - zn.col(j)).norm() == 0.0);
  }
}

}
