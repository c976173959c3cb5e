#include "ldebm/sampler.hpp"

#include <cmath>
#include <sstream>

#include "ldebm/parallel.hpp"

namespace ldebm {

namespace {

std::string sampler_message(int step, int column, double energy) {
  std::ostringstream os;
  os << "Langevin chain diverged at step " << step << " (column " << column
     << ", energy " << energy << ")";
  return os.str();
}

std::vector<Rng> column_streams(const Rng& rng, Eigen::Index n) {
  std::vector<Rng> out;
  out.reserve(n);
  for (Eigen::Index j = 0; j < n; ++j)
    out.push_back(rng.split(static_cast<std::uint64_t>(j)));
  return out;
}

void check_step(const DiffusionSchedule& sched, int t) {
  if (t < 0 || t > sched.num_steps() - 1)
    throw std::out_of_range("sampler: diffusion step " + std::to_string(t) +
                            " outside [0, T-1]");
}

}  // namespace

SamplerError::SamplerError(int step_, int column_, double energy_)
    : std::runtime_error(sampler_message(step_, column_, energy_)),
      step(step_), column(column_), energy(energy_) {}

LangevinStepSize langevin_step_size(const DiffusionSchedule& sched, int t,
                                    const LangevinConfig& cfg) {
  check_step(sched, t);
  const int level = cfg.indexing == StepIndexing::kNext ? t + 1 : std::max(t, 1);
  const double var = sched.sigma_sq(level);
  return {var, std::sqrt(cfg.b_sq * var) * sched.c(level)};
}

Eigen::MatrixXd langevin_step(const LatentEnergy& energy,
                              const Eigen::MatrixXd& z_tilde,
                              const Eigen::MatrixXd& z_next,
                              const DiffusionSchedule& sched,
                              std::span<const int> t, const LangevinConfig& cfg,
                              std::span<Rng> rngs, int step_index) {
  const Eigen::Index B = z_tilde.cols();
  if (static_cast<Eigen::Index>(t.size()) != B ||
      (cfg.with_noise && static_cast<Eigen::Index>(rngs.size()) != B))
    throw std::invalid_argument("langevin_step: batch size mismatch");
  Eigen::MatrixXd grad;
  const Eigen::RowVectorXd f = energy.energy_and_gradient(z_tilde, t, grad);
  Eigen::MatrixXd out(z_tilde.rows(), B);
  const int last = sched.num_steps() - 1;
  for (Eigen::Index j = 0; j < B; ++j) {
    const LangevinStepSize ss = langevin_step_size(sched, t[j], cfg);
    const double s2 = ss.step * ss.step;
    Eigen::VectorXd offset = z_tilde.col(j);
    if (t[j] != last) offset -= z_next.col(j);
    out.col(j) = z_tilde.col(j) + 0.5 * s2 * (grad.col(j) - offset / ss.sigma_sq);
    if (cfg.with_noise)
      for (Eigen::Index i = 0; i < out.rows(); ++i)
        out(i, j) += ss.step * rngs[j].normal();
    if (!out.col(j).allFinite() || !std::isfinite(f(j)))
      throw SamplerError(step_index, static_cast<int>(j), f(j));
  }
  return out;
}

Eigen::VectorXd langevin_step(const LatentEnergy& energy,
                              const Eigen::VectorXd& z_tilde,
                              const Eigen::VectorXd& z_next,
                              const DiffusionSchedule& sched, int t,
                              const LangevinConfig& cfg, Rng& rng) {
  const int ts[1] = {t};
  return langevin_step(energy, Eigen::MatrixXd(z_tilde), Eigen::MatrixXd(z_next),
                       sched, ts, cfg, std::span<Rng>(&rng, 1))
      .col(0);
}

Eigen::MatrixXd langevin_chain(const LatentEnergy& energy,
                               const Eigen::MatrixXd& z_next,
                               const DiffusionSchedule& sched,
                               std::span<const int> t, const LangevinConfig& cfg,
                               const Rng& rng, const Eigen::MatrixXd* start) {
  if (cfg.n_steps < 0 || !(cfg.b_sq > 0.0))
    throw std::invalid_argument("Langevin config needs n_steps >= 0 and b^2 > 0");
  if (start && (start->rows() != z_next.rows() || start->cols() != z_next.cols()))
    throw std::invalid_argument("Langevin start must match z_next in shape");
  std::vector<Rng> rngs = column_streams(rng, z_next.cols());
  Eigen::MatrixXd z = start ? *start : z_next;
  parallel_for_columns(z.cols(), [&](Eigen::Index begin, Eigen::Index end) {
    const Eigen::Index n = end - begin;
    Eigen::MatrixXd zc = z.middleCols(begin, n);
    const Eigen::MatrixXd next = z_next.middleCols(begin, n);
    const std::span<const int> tc = t.subspan(begin, n);
    const std::span<Rng> rc(rngs.data() + begin, n);
    try {
      for (int k = 0; k < cfg.n_steps; ++k)
        zc = langevin_step(energy, zc, next, sched, tc, cfg, rc, k);
    } catch (const SamplerError& e) {
      throw SamplerError(e.step, e.column + static_cast<int>(begin), e.energy);
    }
    z.middleCols(begin, n) = zc;
  });
  return z;
}

Eigen::VectorXd sample_conditional(const LatentEnergy& energy,
                                   const Eigen::VectorXd& z_next,
                                   const DiffusionSchedule& sched, int t,
                                   const LangevinConfig& cfg, Rng& rng) {
  check_step(sched, t);
  const int ts[1] = {t};
  // split() ignores the counter, so a fresh draw keys each call's chain.
  const Rng child(rng.next_u64());
  const Eigen::MatrixXd zt =
      langevin_chain(energy, Eigen::MatrixXd(z_next), sched, ts, cfg, child);
  return zt.col(0) / std::sqrt(1.0 - sched.sigma_sq(t + 1));
}

namespace {

Eigen::MatrixXd reverse_chain(const LatentEnergy& step_energy,
                              const LatentEnergy* final_energy,
                              const DiffusionSchedule& sched,
                              const LangevinConfig& cfg, int n, const Rng& rng) {
  const int d = step_energy.latent_dim();
  Eigen::MatrixXd z(d, n);
  for (int j = 0; j < n; ++j) {
    Rng col = rng.split(static_cast<std::uint64_t>(j));
    for (int i = 0; i < d; ++i) z(i, j) = col.normal();
  }
  for (int t = sched.num_steps() - 1; t >= 0; --t) {
    const std::vector<int> ts(n, t);
    const LatentEnergy& e = (t == 0 && final_energy) ? *final_energy : step_energy;
    // Stream n + 1 + t keeps each step's chain noise independent of the z_T draw.
    const Rng step_rng = rng.split(static_cast<std::uint64_t>(n) + 1 + t);
    z = langevin_chain(e, z, sched, ts, cfg, step_rng) /
        std::sqrt(1.0 - sched.sigma_sq(t + 1));
  }
  return z;
}

}  // namespace

Eigen::MatrixXd synthesize(const LatentEnergy& energy,
                           const DiffusionSchedule& sched,
                           const LangevinConfig& cfg, int n, const Rng& rng) {
  return reverse_chain(energy, nullptr, sched, cfg, n, rng);
}

Eigen::VectorXd synthesize(const LatentEnergy& energy,
                           const DiffusionSchedule& sched,
                           const LangevinConfig& cfg, Rng& rng) {
  const Rng child(rng.next_u64());
  return synthesize(energy, sched, cfg, 1, child).col(0);
}

SymbolCoupledEnergy::SymbolCoupledEnergy(const EnergyModel& model, int symbol)
    : model_(model), symbol_(symbol) {
  if (symbol < 0 || symbol >= model.num_classes())
    throw std::out_of_range("symbol index outside [0, K)");
}

Eigen::RowVectorXd SymbolCoupledEnergy::energy(const Eigen::MatrixXd& z,
                                               std::span<const int> t) const {
  const Eigen::MatrixXd l = model_.logits(z, t);
  const Eigen::RowVectorXd lse = log_sum_exp(l);
  Eigen::RowVectorXd out(z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    out(j) = model_.energy_scale(t[j]) * (t[j] == 0 ? l(symbol_, j) : lse(j));
  return out;
}

Eigen::RowVectorXd SymbolCoupledEnergy::energy_and_gradient(
    const Eigen::MatrixXd& z, std::span<const int> t,
    Eigen::MatrixXd& grad) const {
  EnergyModel::Tape tape;
  const Eigen::MatrixXd l = model_.logits(z, t, {}, &tape);
  Eigen::MatrixXd dl = softmax(l);
  const Eigen::RowVectorXd lse = log_sum_exp(l);
  Eigen::RowVectorXd out(z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    if (t[j] == 0) {
      dl.col(j).setZero();
      dl(symbol_, j) = 1.0;
      out(j) = l(symbol_, j);
    } else {
      out(j) = lse(j);
    }
    const double sc = model_.energy_scale(t[j]);
    dl.col(j) *= sc;
    out(j) *= sc;
  }
  grad = model_.input_gradient(tape, dl);
  return out;
}

int one_hot_index(const Eigen::VectorXd& y, int num_classes) {
  if (y.size() != num_classes)
    throw std::invalid_argument("symbol vector length must equal K");
  int hot = -1;
  for (int k = 0; k < num_classes; ++k) {
    if (y(k) == 1.0) {
      if (hot >= 0) throw std::invalid_argument("symbol vector is not one-hot");
      hot = k;
    } else if (y(k) != 0.0) {
      throw std::invalid_argument("symbol vector is not one-hot");
    }
  }
  if (hot < 0) throw std::invalid_argument("symbol vector is not one-hot");
  return hot;
}

Eigen::MatrixXd synthesize_controlled(const EnergyModel& model,
                                      const Eigen::VectorXd& y,
                                      const DiffusionSchedule& sched,
                                      const LangevinConfig& cfg, int n,
                                      const Rng& rng) {
  const SymbolCoupledEnergy coupled(model, one_hot_index(y, model.num_classes()));
  return reverse_chain(model, &coupled, sched, cfg, n, rng);
}

Eigen::VectorXd synthesize_controlled(const EnergyModel& model,
                                      const Eigen::VectorXd& y,
                                      const DiffusionSchedule& sched,
                                      const LangevinConfig& cfg, Rng& rng) {
  const Rng child(rng.next_u64());
  return synthesize_controlled(model, y, sched, cfg, 1, child).col(0);
}

}  // namespace ldebm
