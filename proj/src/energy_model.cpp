#include "ldebm/energy_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace ldebm {

int SymbolDistribution::argmax() const {
  int best = 0;
  for (int k = 1; k < probs.size(); ++k)
    if (probs(k) > probs(best)) best = k;
  return best;
}

SymbolDistribution symbol_distribution(const Eigen::VectorXd& logits) {
  return SymbolDistribution{softmax(logits).col(0)};
}

Eigen::VectorXd sinusoidal_embedding(int t, int dim) {
  Eigen::VectorXd e(dim);
  for (int i = 0; 2 * i < dim; ++i) {
    const double freq = std::pow(1e4, -2.0 * i / dim);
    e(2 * i) = std::sin(t * freq);
    if (2 * i + 1 < dim) e(2 * i + 1) = std::cos(t * freq);
  }
  return e;
}

EnergyModel::EnergyModel(const EnergyModelConfig& config, Rng& rng)
    : config_(config) {
  if (config.latent_dim < 1 || config.num_classes < 1 || config.num_steps < 1 ||
      config.hidden_dim < 1 || config.time_embed_dim < 1 ||
      config.num_res_blocks < 0 || config.context_dim < 0)
    throw std::invalid_argument("invalid energy model configuration");
  if (!config.step_scale.empty() &&
      static_cast<int>(config.step_scale.size()) != config.num_steps)
    throw std::invalid_argument("step_scale needs one entry per diffusion step");
  const int H = config.hidden_dim;
  time_mlp_ = Mlp("prior.time", config.time_embed_dim, {H}, H, rng);
  input_mlp_ = Mlp("prior.input", config.latent_dim, {H}, H, rng);
  int concat = 2 * H;
  if (config.context_dim > 0) {
    context_mlp_ = Mlp("prior.context", config.context_dim, {H}, H, rng);
    concat += H;
  }
  joint_ = Linear("prior.joint", concat, H, rng);
  for (int i = 0; i < config.num_res_blocks; ++i)
    blocks_.emplace_back("prior.block" + std::to_string(i), H, H, rng);
  head_ = Linear("prior.head", H, config.num_classes, rng);
}

void EnergyModel::check_inputs(const Eigen::MatrixXd& z, std::span<const int> t,
                               const Eigen::MatrixXd& context) const {
  if (z.rows() != config_.latent_dim)
    throw std::invalid_argument("latent has " + std::to_string(z.rows()) +
                                " rows, model expects " +
                                std::to_string(config_.latent_dim));
  if (static_cast<Eigen::Index>(t.size()) != z.cols())
    throw std::invalid_argument("one diffusion step per latent column required");
  for (int ti : t)
    if (ti < 0 || ti >= config_.num_steps)
      throw std::out_of_range("diffusion step " + std::to_string(ti) +
                              " outside [0, T-1]");
  if (config_.context_dim > 0) {
    if (context.rows() != config_.context_dim || context.cols() != z.cols())
      throw std::invalid_argument("context shape mismatch");
  } else if (context.size() != 0) {
    throw std::invalid_argument("model has no context branch");
  }
}

Eigen::MatrixXd EnergyModel::logits(const Eigen::MatrixXd& z,
                                    std::span<const int> t,
                                    const Eigen::MatrixXd& context,
                                    Tape* tape) const {
  check_inputs(z, t, context);
  const Eigen::Index B = z.cols();
  const int H = config_.hidden_dim;

  Tape local;
  Tape& tp = tape ? *tape : local;
  tp.t_unique.assign(t.begin(), t.end());
  std::sort(tp.t_unique.begin(), tp.t_unique.end());
  tp.t_unique.erase(std::unique(tp.t_unique.begin(), tp.t_unique.end()),
                    tp.t_unique.end());
  tp.t_slot.resize(B);
  for (Eigen::Index j = 0; j < B; ++j)
    tp.t_slot[j] = static_cast<int>(
        std::lower_bound(tp.t_unique.begin(), tp.t_unique.end(), t[j]) -
        tp.t_unique.begin());

  Eigen::MatrixXd sin_emb(config_.time_embed_dim, tp.t_unique.size());
  for (std::size_t u = 0; u < tp.t_unique.size(); ++u)
    sin_emb.col(u) = sinusoidal_embedding(tp.t_unique[u], config_.time_embed_dim);
  const Eigen::MatrixXd time_out = time_mlp_.forward(sin_emb, &tp.time_tape);

  const Eigen::Index concat_rows = config_.context_dim > 0 ? 3 * H : 2 * H;
  tp.concat.resize(concat_rows, B);
  tp.concat.topRows(H) = input_mlp_.forward(z, &tp.input_tape);
  for (Eigen::Index j = 0; j < B; ++j)
    tp.concat.block(H, j, H, 1) = time_out.col(tp.t_slot[j]);
  if (config_.context_dim > 0)
    tp.concat.bottomRows(H) = context_mlp_.forward(context, &tp.context_tape);

  tp.h.resize(blocks_.size() + 1);
  tp.h[0] = joint_.forward(leaky_relu(tp.concat));
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    tp.h[i + 1] = tp.h[i] + blocks_[i].forward(leaky_relu(tp.h[i]));
  tp.logits = head_.forward(leaky_relu(tp.h.back()));
  return tp.logits;
}

Eigen::VectorXd EnergyModel::logits(const Eigen::VectorXd& z, int t) const {
  const int ts[1] = {t};
  return logits(Eigen::MatrixXd(z), ts).col(0);
}

template <class Self>
Eigen::MatrixXd EnergyModel::backprop(Self& self, const Tape& tp,
                                      const Eigen::MatrixXd& dlogits) {
  constexpr bool accumulate = !std::is_const_v<Self>;
  const int H = self.config_.hidden_dim;
  if constexpr (accumulate) self.head_.accumulate(leaky_relu(tp.h.back()), dlogits);
  Eigen::MatrixXd dh =
      leaky_relu_backward(tp.h.back(), self.head_.input_gradient(dlogits));
  for (std::size_t i = self.blocks_.size(); i-- > 0;) {
    if constexpr (accumulate) self.blocks_[i].accumulate(leaky_relu(tp.h[i]), dh);
    dh += leaky_relu_backward(tp.h[i], self.blocks_[i].input_gradient(dh));
  }
  if constexpr (accumulate) self.joint_.accumulate(leaky_relu(tp.concat), dh);
  const Eigen::MatrixXd dconcat =
      leaky_relu_backward(tp.concat, self.joint_.input_gradient(dh));

  if constexpr (accumulate) {
    Eigen::MatrixXd dtime =
        Eigen::MatrixXd::Zero(H, static_cast<Eigen::Index>(tp.t_unique.size()));
    for (Eigen::Index j = 0; j < dconcat.cols(); ++j)
      dtime.col(tp.t_slot[j]) += dconcat.block(H, j, H, 1);
    self.time_mlp_.backward(tp.time_tape, dtime, true);
    if (self.config_.context_dim > 0)
      self.context_mlp_.backward(tp.context_tape, dconcat.bottomRows(H), true);
    return self.input_mlp_.backward(tp.input_tape, dconcat.topRows(H), true);
  } else {
    return self.input_mlp_.input_gradient(tp.input_tape, dconcat.topRows(H));
  }
}

Eigen::MatrixXd EnergyModel::input_gradient(const Tape& tape,
                                            const Eigen::MatrixXd& dlogits) const {
  return backprop(*this, tape, dlogits);
}

Eigen::MatrixXd EnergyModel::backward(const Tape& tape,
                                      const Eigen::MatrixXd& dlogits) {
  return backprop(*this, tape, dlogits);
}

double EnergyModel::energy_scale(int t) const {
  return config_.step_scale.empty() ? 1.0 : config_.step_scale[t];
}

Eigen::RowVectorXd EnergyModel::column_scale(std::span<const int> t) const {
  Eigen::RowVectorXd out(static_cast<Eigen::Index>(t.size()));
  for (std::size_t j = 0; j < t.size(); ++j)
    out(static_cast<Eigen::Index>(j)) = energy_scale(t[j]);
  return out;
}

Eigen::RowVectorXd EnergyModel::energy(const Eigen::MatrixXd& z,
                                       std::span<const int> t) const {
  const Eigen::RowVectorXd f = log_sum_exp(logits(z, t));
  if (config_.step_scale.empty()) return f;
  return f.cwiseProduct(column_scale(t));
}

Eigen::RowVectorXd EnergyModel::energy_and_gradient(const Eigen::MatrixXd& z,
                                                    std::span<const int> t,
                                                    Eigen::MatrixXd& grad) const {
  Tape tape;
  const Eigen::MatrixXd l = logits(z, t, {}, &tape);
  Eigen::MatrixXd dl = softmax(l);
  Eigen::RowVectorXd f = log_sum_exp(l);
  if (!config_.step_scale.empty()) {
    const Eigen::RowVectorXd sc = column_scale(t);
    dl.array().rowwise() *= sc.array();
    f = f.cwiseProduct(sc);
  }
  grad = input_gradient(tape, dl);
  return f;
}

double EnergyModel::marginal_energy(const Eigen::VectorXd& z, int t) const {
  const int ts[1] = {t};
  return energy(Eigen::MatrixXd(z), ts)(0);
}

ParameterList EnergyModel::parameters() {
  ParameterList out;
  for (Linear* l : linear_layers()) l->append_parameters(out);
  return out;
}

void EnergyModel::accumulate_parameter_gradient(const Eigen::MatrixXd& z,
                                                std::span<const int> t,
                                                const Eigen::RowVectorXd& weights) {
  Tape tape;
  const Eigen::MatrixXd l = logits(z, t, {}, &tape);
  Eigen::MatrixXd dl = softmax(l);
  dl.array().rowwise() *= weights.array();
  if (!config_.step_scale.empty()) dl.array().rowwise() *= column_scale(t).array();
  backward(tape, dl);
}

std::vector<Linear*> EnergyModel::linear_layers() {
  std::vector<Linear*> out;
  for (Linear& l : time_mlp_.layers()) out.push_back(&l);
  for (Linear& l : input_mlp_.layers()) out.push_back(&l);
  for (Linear& l : context_mlp_.layers()) out.push_back(&l);
  out.push_back(&joint_);
  for (Linear& l : blocks_) out.push_back(&l);
  out.push_back(&head_);
  return out;
}

void EnergyModel::apply_spectral_norm() {
  for (Linear* l : linear_layers()) l->spectral_normalize();
}

void apply_spectral_norm(EnergyModel& model) { model.apply_spectral_norm(); }

Eigen::MatrixXd classify_batch(const EnergyModel& model,
                               const DiffusionSchedule& sched,
                               const Eigen::MatrixXd& z0) {
  const std::vector<int> t(z0.cols(), 0);
  const double scale = std::sqrt(1.0 - sched.sigma_sq(1));
  return softmax(model.logits(scale * z0, t));
}

SymbolDistribution classify(const EnergyModel& model,
                            const DiffusionSchedule& sched,
                            const Eigen::VectorXd& z0) {
  return SymbolDistribution{classify_batch(model, sched, z0).col(0)};
}

Eigen::RowVectorXd conditional_log_density_batch(const LatentEnergy& energy,
                                                 const Eigen::MatrixXd& z_tilde,
                                                 const Eigen::MatrixXd& z_next,
                                                 const DiffusionSchedule& sched,
                                                 std::span<const int> t,
                                                 Eigen::MatrixXd* grad_tilde) {
  if (z_tilde.rows() != energy.latent_dim() || z_next.rows() != z_tilde.rows() ||
      z_next.cols() != z_tilde.cols())
    throw std::invalid_argument("conditional density: dimension mismatch");
  const int T = sched.num_steps();
  for (int ti : t)
    if (ti < 0 || ti > T - 1)
      throw std::out_of_range("conditional density: step outside [0, T-1]");

  Eigen::RowVectorXd out;
  if (grad_tilde) {
    out = energy.energy_and_gradient(z_tilde, t, *grad_tilde);
  } else {
    out = energy.energy(z_tilde, t);
  }
  for (Eigen::Index j = 0; j < z_tilde.cols(); ++j) {
    const double var = sched.sigma_sq(t[j] + 1);
    const Eigen::VectorXd diff =
        t[j] == T - 1 ? Eigen::VectorXd(z_tilde.col(j))
                      : Eigen::VectorXd(z_tilde.col(j) - z_next.col(j));
    out(j) -= diff.squaredNorm() / (2.0 * var);
    if (grad_tilde) grad_tilde->col(j) -= diff / var;
  }
  return out;
}

double conditional_log_density(const LatentEnergy& energy,
                               const Eigen::VectorXd& z_tilde,
                               const Eigen::VectorXd& z_next,
                               const DiffusionSchedule& sched, int t) {
  const int ts[1] = {t};
  return conditional_log_density_batch(energy, Eigen::MatrixXd(z_tilde),
                                       Eigen::MatrixXd(z_next), sched, ts,
                                       nullptr)(0);
}

Eigen::VectorXd grad_z_conditional(const LatentEnergy& energy,
                                   const Eigen::VectorXd& z_tilde,
                                   const Eigen::VectorXd& z_next,
                                   const DiffusionSchedule& sched, int t) {
  const int ts[1] = {t};
  Eigen::MatrixXd grad;
  conditional_log_density_batch(energy, Eigen::MatrixXd(z_tilde),
                                Eigen::MatrixXd(z_next), sched, ts, &grad);
  return grad.col(0);
}

}  // namespace ldebm
