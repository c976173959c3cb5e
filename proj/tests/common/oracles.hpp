#pragma once

// Independent reference computations shared by the unit suites and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <Eigen/Core>

#include "fixtures.hpp"
#include "ldebm/energy_model.hpp"
#include "ldebm/inference_generation.hpp"
#include "ldebm/metrics.hpp"
#include "ldebm/sampler.hpp"
#include "ldebm/schedule.hpp"
#include "ldebm/training.hpp"

namespace oracles {

struct SuiteResult {
  double worst = 0.0;
  int failures = 0;
  int trials = 0;
  bool ok() const { return failures == 0 && trials > 0; }
};

inline ldebm::EnergyModelConfig small_energy(int d, int k) {
  ldebm::EnergyModelConfig c;
  c.latent_dim = d;
  c.num_classes = k;
  c.num_steps = 6;
  c.hidden_dim = 16;
  c.time_embed_dim = 8;
  c.num_res_blocks = 2;
  return c;
}

/// grad_z_conditional against central differences (h = 1e-4 is too coarse
/// for a 1e-4 tolerance on the curved net; 1e-5 keeps truncation well below).
inline SuiteResult grad_z_conditional_suite(int configs, double tol = 1e-4) {
  using namespace ldebm;
  SuiteResult r;
  for (int trial = 0; trial < configs; ++trial) {
    Rng rng(1000 + trial);
    const int d = 1 + static_cast<int>(rng.below(4));
    EnergyModel m(small_energy(d, 2 + static_cast<int>(rng.below(6))), rng);
    const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, d);
    const int t = static_cast<int>(rng.below(6));
    const Eigen::VectorXd zn = rng.normal_matrix(d, 1);
    const Eigen::VectorXd zt = zn + 0.5 * rng.normal_matrix(d, 1);
    const Eigen::VectorXd g = grad_z_conditional(m, zt, zn, s, t);
    const Eigen::VectorXd fd = fixtures::numeric_gradient(
        [&](const Eigen::VectorXd& x) { return conditional_log_density(m, x, zn, s, t); }, zt,
        1e-5);
    const double e = fixtures::rel_err(g, fd);
    r.worst = std::max(r.worst, e);
    r.failures += e > tol;
    ++r.trials;
  }
  return r;
}

/// log of the normalizer of exp(alpha z - (z - m)^2 / (2 v)) by trapezoid
/// quadrature on a wide uniform grid.
inline double quadrature_log_partition(double alpha, double m, double v) {
  const double centre = m + alpha * v, half = 14.0 * std::sqrt(v);
  const int n = 20000;
  const double h = 2.0 * half / n;
  auto logf = [&](double z) { return alpha * z - (z - m) * (z - m) / (2.0 * v); };
  const double peak = logf(centre);
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = centre - half + i * h;
    sum += (i == 0 || i == n ? 0.5 : 1.0) * std::exp(logf(z) - peak);
  }
  return peak + std::log(sum * h);
}

/// Contrastive gradient of a 1-D linear energy with negatives placed at the
/// mid-point quantiles of the exact conditional, against finite differences
/// of the quadrature-normalized conditional log-likelihood.
inline SuiteResult prior_gradient_suite(int configs, double tol = 1e-3) {
  using namespace ldebm;
  SuiteResult r;
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 1);
  const boost::math::normal unit;
  constexpr int kQuantiles = 64;
  for (int trial = 0; trial < configs; ++trial) {
    Rng rng(5000 + trial);
    const double alpha = 4.0 * rng.uniform() - 2.0;
    const int t = static_cast<int>(rng.below(6));
    const double v = s.sigma_sq(t + 1);
    const int B = 4 + static_cast<int>(rng.below(8));
    Eigen::VectorXd pos(B), centre(B);
    for (int i = 0; i < B; ++i) {
      centre(i) = t == s.num_steps() - 1 ? 0.0 : rng.normal();
      pos(i) = centre(i) + std::sqrt(v) * rng.normal() + 0.5 * rng.normal();
    }
    auto loglik = [&](double a) {
      double sum = 0.0;
      for (int i = 0; i < B; ++i)
        sum += a * pos(i) - (pos(i) - centre(i)) * (pos(i) - centre(i)) / (2.0 * v) -
               quadrature_log_partition(a, centre(i), v);
      return sum / B;
    };
    const double h = 1e-5;
    const double fd = (loglik(alpha + h) - loglik(alpha - h)) / (2.0 * h);

    Eigen::MatrixXd p(1, B * kQuantiles), n(1, B * kQuantiles);
    for (int i = 0; i < B; ++i)
      for (int q = 0; q < kQuantiles; ++q) {
        const double u = (q + 0.5) / kQuantiles;
        p(0, i * kQuantiles + q) = pos(i);
        n(0, i * kQuantiles + q) = centre(i) + alpha * v + std::sqrt(v) * quantile(unit, u);
      }
    fixtures::LinearEnergy model(alpha);
    const std::vector<int> steps(B * kQuantiles, t);
    accumulate_contrastive_gradient(model, p, n, steps, 1.0);
    const double g = model.parameters()[0]->grad(0, 0);
    const double e = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-3});
    r.worst = std::max(r.worst, e);
    r.failures += e > tol;
    ++r.trials;
  }
  return r;
}

/// Encoder whose posterior parameters are free per-column tensors, so its
/// parameter gradient is exactly dL/dmu and dL/dlog_var.
class TableEncoder : public ldebm::Encoder {
 public:
  TableEncoder(Eigen::MatrixXd mu, Eigen::MatrixXd lv)
      : mu_("mu", std::move(mu)), lv_("log_var", std::move(lv)) {}
  int latent_dim() const override { return static_cast<int>(mu_.value.rows()); }
  ldebm::Posterior posterior(const ldebm::ObservationBatch&) const override {
    return {mu_.value, lv_.value};
  }
  ldebm::Posterior forward(const ldebm::ObservationBatch& x) override { return posterior(x); }
  void backward(const Eigen::MatrixXd& dmu, const Eigen::MatrixXd& dlv) override {
    mu_.grad += dmu;
    lv_.grad += dlv;
  }
  ldebm::ParameterList parameters() override { return {&mu_, &lv_}; }
  ldebm::Parameter& mu() { return mu_; }

 private:
  ldebm::Parameter mu_, lv_;
};

/// d(encoder_decoder_loss)/d(encoder mean) against central differences, with
/// a random small prior and, alternately, the point and sequence decoders.
inline SuiteResult encoder_mean_suite(int configs, double tol = 1e-3) {
  using namespace ldebm;
  SuiteResult r;
  for (int trial = 0; trial < configs; ++trial) {
    Rng rng(9000 + trial);
    const int d = 1 + static_cast<int>(rng.below(3));
    const int B = 2 + static_cast<int>(rng.below(3));
    const bool tokens = trial % 2 == 1;
    const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, d);
    EnergyModel prior(small_energy(d, 3), rng);
    std::unique_ptr<Decoder> dec;
    ObservationBatch x;
    if (tokens) {
      dec = std::make_unique<SequenceDecoder>(9, d, 6, 8, rng);
      for (int j = 0; j < B; ++j) {
        std::vector<int> sent;
        const int len = 1 + static_cast<int>(rng.below(5));
        for (int k = 0; k < len; ++k) sent.push_back(3 + static_cast<int>(rng.below(6)));
        sent.push_back(0);
        x.tokens.push_back(sent);
      }
    } else {
      dec = std::make_unique<GaussianDecoder>(d, 2, std::vector<int>{8}, rng);
      x.points = rng.normal_matrix(2, B);
    }
    TableEncoder enc(rng.normal_matrix(d, B), -1.0 + 0.5 * rng.normal_matrix(d, B).array());
    const double lambda1 = trial % 3 == 0 ? 0.1 : 1.0;
    const Rng loss_rng(trial);
    auto loss = [&] { return encoder_decoder_loss(enc, *dec, prior, x, s, lambda1, loss_rng).loss; };
    enc.mu().zero_grad();
    loss();
    const Eigen::MatrixXd analytic = enc.mu().grad;
    Eigen::MatrixXd fd(d, B);
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
      const double keep = enc.mu().value(i);
      enc.mu().value(i) = keep + 1e-5;
      const double up = loss();
      enc.mu().value(i) = keep - 1e-5;
      const double down = loss();
      enc.mu().value(i) = keep;
      fd(i) = (up - down) / 2e-5;
    }
    const double e = fixtures::rel_err(analytic, fd, 1e-6);
    r.worst = std::max(r.worst, e);
    r.failures += e > tol;
    ++r.trials;
  }
  return r;
}

/// Zero-energy Langevin chains against the n-step AR(1) law: returns the
/// worst |mean - z_next| / sigma and worst |var / var_AR1 - 1| over t.
struct ChainMoments {
  double worst_mean = 0.0;
  double worst_var = 0.0;
};
inline ChainMoments zero_energy_chain_moments(int chains, std::uint64_t seed) {
  using namespace ldebm;
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 2);
  fixtures::ZeroEnergy zero(2);
  const LangevinConfig cfg;
  ChainMoments out;
  const Eigen::Vector2d centre(0.5, -0.25);
  for (int t = 0; t < s.num_steps(); ++t) {
    const LangevinStepSize ss = langevin_step_size(s, t, cfg);
    const double s2 = ss.step * ss.step, a = 1.0 - s2 / (2.0 * ss.sigma_sq);
    const bool top = t == s.num_steps() - 1;
    // At the top step the chain centre is 0, so the start decays by a^n.
    const Eigen::Vector2d start = centre;
    const Eigen::Vector2d target = top ? Eigen::Vector2d(std::pow(a, cfg.n_steps) * start)
                                       : Eigen::Vector2d(start);
    const double var = s2 * (1.0 - std::pow(a, 2 * cfg.n_steps)) / (1.0 - a * a);
    const Eigen::MatrixXd zn = start.replicate(1, chains);
    Rng rng = Rng(seed).split(t);
    Eigen::MatrixXd z(2, chains);
    for (int j = 0; j < chains; ++j)
      z.col(j) = std::sqrt(1.0 - ss.sigma_sq) *
                 sample_conditional(zero, zn.col(j), s, t, cfg, rng);
    const Eigen::Vector2d mean = z.rowwise().mean();
    const Eigen::Vector2d v = (z.colwise() - mean).rowwise().squaredNorm() / (chains - 1);
    for (int i = 0; i < 2; ++i) {
      out.worst_mean = std::max(out.worst_mean, std::abs(mean(i) - target(i)) / std::sqrt(ss.sigma_sq));
      out.worst_var = std::max(out.worst_var, std::abs(v(i) / var - 1.0));
    }
  }
  return out;
}

/// Relative errors of estimate_log_partition against closed forms: F = 0
/// (exact), F = c, and the 1-D quadratic F = -z^2/2 at n = 1e5.
struct PartitionErrors {
  double zero = 0.0, constant = 0.0, quadratic = 0.0;
};
inline PartitionErrors partition_errors(std::uint64_t seed) {
  using namespace ldebm;
  PartitionErrors e;
  const DiffusionSchedule s = build_schedule(6, 0.04, 0.36, 1);
  fixtures::ZeroEnergy zero(1);
  fixtures::ConstantEnergy c(1, 0.7);
  const fixtures::QuadraticEnergy quad(Eigen::VectorXd::Zero(1), 1.0);
  for (int t = 0; t < s.num_steps(); ++t) {
    const double v = s.sigma_sq(t + 1);
    const double m = t == s.num_steps() - 1 ? 0.0 : 0.8;
    const Eigen::VectorXd zn = Eigen::VectorXd::Constant(1, 0.8);
    const double base = 0.5 * std::log(2.0 * std::numbers::pi * v);
    Rng r1 = Rng(seed).split(3 * t), r2 = Rng(seed).split(3 * t + 1), r3 = Rng(seed).split(3 * t + 2);
    e.zero = std::max(e.zero, std::abs(estimate_log_partition(zero, zn, s, t, 1000, r1) - base));
    e.constant = std::max(e.constant,
                          std::abs(estimate_log_partition(c, zn, s, t, 1000, r2) - (base + 0.7)));
    // int exp(-z^2/2 - (z - m)^2 / (2v)) dz
    const double log_z = 0.5 * std::log(2.0 * std::numbers::pi * v / (1.0 + v)) -
                         m * m / (2.0 * (1.0 + v));
    const double est = estimate_log_partition(quad, zn, s, t, 100000, r3);
    e.quadratic = std::max(e.quadratic, std::abs(std::exp(est - log_z) - 1.0));
  }
  return e;
}

}  // namespace oracles
