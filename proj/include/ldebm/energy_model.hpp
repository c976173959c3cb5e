#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "ldebm/energy.hpp"
#include "ldebm/nn.hpp"
#include "ldebm/rng.hpp"
#include "ldebm/schedule.hpp"

namespace ldebm {

struct EnergyModelConfig {
  int latent_dim = 2;
  int num_classes = 16;   // K
  int num_steps = 6;      // T; valid t are 0..T-1
  int hidden_dim = 200;
  int time_embed_dim = 200;
  int num_res_blocks = 12;
  int context_dim = 0;    // 0 disables the context branch
  /// Per-step multiplier on F (length T); empty means 1. The logits, and so
  /// classification, are unaffected.
  std::vector<double> step_scale;
};

/// Probability vector over the K symbol categories.
struct SymbolDistribution {
  Eigen::VectorXd probs;

  /// Most probable symbol; ties go to the lowest index.
  int argmax() const;
};

SymbolDistribution symbol_distribution(const Eigen::VectorXd& logits);

/// Shared per-step network f(z, t) -> K logits.
///
/// Layout: sinusoidal(t) -> Linear, LReLU, Linear; z -> Linear, LReLU, Linear;
/// optional context -> Linear, LReLU, Linear; concat -> LReLU, Linear;
/// N residual blocks h <- h + Linear(LReLU(h)); LReLU, Linear -> K logits.
/// The marginal negative energy is F = logsumexp(logits), times an optional
/// per-step scale.
class EnergyModel : public TrainableEnergy {
 public:
  struct Tape {
    std::vector<int> t_unique;
    std::vector<int> t_slot;  // column -> index into t_unique
    Mlp::Tape time_tape, input_tape, context_tape;
    Eigen::MatrixXd concat;
    std::vector<Eigen::MatrixXd> h;  // h[0] joint output, h[i+1] after block i
    Eigen::MatrixXd logits;
  };

  EnergyModel(const EnergyModelConfig& config, Rng& rng);

  const EnergyModelConfig& config() const { return config_; }
  int latent_dim() const override { return config_.latent_dim; }
  int num_classes() const { return config_.num_classes; }

  /// K x B logits. `context` must be empty unless context_dim > 0.
  Eigen::MatrixXd logits(const Eigen::MatrixXd& z, std::span<const int> t,
                         const Eigen::MatrixXd& context = {},
                         Tape* tape = nullptr) const;
  Eigen::VectorXd logits(const Eigen::VectorXd& z, int t) const;

  /// dL/dz for upstream dL/dlogits; parameter grads untouched.
  Eigen::MatrixXd input_gradient(const Tape& tape,
                                 const Eigen::MatrixXd& dlogits) const;
  /// As input_gradient, also accumulating parameter gradients.
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& dlogits);

  Eigen::RowVectorXd energy(const Eigen::MatrixXd& z,
                            std::span<const int> t) const override;
  Eigen::RowVectorXd energy_and_gradient(const Eigen::MatrixXd& z,
                                         std::span<const int> t,
                                         Eigen::MatrixXd& grad) const override;
  double marginal_energy(const Eigen::VectorXd& z, int t) const;
  /// Multiplier applied to logsumexp(logits) at step t.
  double energy_scale(int t) const;
  Eigen::RowVectorXd column_scale(std::span<const int> t) const;

  ParameterList parameters() override;
  void accumulate_parameter_gradient(const Eigen::MatrixXd& z,
                                     std::span<const int> t,
                                     const Eigen::RowVectorXd& weights) override;

  /// One power-iteration spectral normalization pass over every linear layer.
  void apply_spectral_norm();
  std::vector<Linear*> linear_layers();

 private:
  template <class Self>
  static Eigen::MatrixXd backprop(Self& self, const Tape& tape,
                                  const Eigen::MatrixXd& dlogits);
  void check_inputs(const Eigen::MatrixXd& z, std::span<const int> t,
                    const Eigen::MatrixXd& context) const;

  EnergyModelConfig config_;
  Mlp time_mlp_, input_mlp_, context_mlp_;
  Linear joint_;
  std::vector<Linear> blocks_;
  Linear head_;
};

/// Sinusoidal embedding of integer t: entries (2i, 2i+1) hold
/// (sin(t w_i), cos(t w_i)) with w_i = 10000^(-2i/dim).
Eigen::VectorXd sinusoidal_embedding(int t, int dim);

void apply_spectral_norm(EnergyModel& model);

/// p(y | z0) with the classifier evaluated at the scaled latent
/// sqrt(1 - sigma_1^2) * z0 and t = 0, the point where the symbol couples.
SymbolDistribution classify(const EnergyModel& model,
                            const DiffusionSchedule& sched,
                            const Eigen::VectorXd& z0);
/// Batched classify: K x B probabilities.
Eigen::MatrixXd classify_batch(const EnergyModel& model,
                               const DiffusionSchedule& sched,
                               const Eigen::MatrixXd& z0);

/// F(z~_t, t) - |z~_t - z_{t+1}|^2 / (2 sigma_{t+1}^2); at t = T-1 the
/// quadratic is centred at zero. Normalizer excluded.
double conditional_log_density(const LatentEnergy& energy,
                               const Eigen::VectorXd& z_tilde,
                               const Eigen::VectorXd& z_next,
                               const DiffusionSchedule& sched, int t);

/// Gradient of conditional_log_density with respect to z_tilde.
Eigen::VectorXd grad_z_conditional(const LatentEnergy& energy,
                                   const Eigen::VectorXd& z_tilde,
                                   const Eigen::VectorXd& z_next,
                                   const DiffusionSchedule& sched, int t);

/// Batched conditional_log_density over columns with per-column steps.
Eigen::RowVectorXd conditional_log_density_batch(const LatentEnergy& energy,
                                                 const Eigen::MatrixXd& z_tilde,
                                                 const Eigen::MatrixXd& z_next,
                                                 const DiffusionSchedule& sched,
                                                 std::span<const int> t,
                                                 Eigen::MatrixXd* grad_tilde);

}  // namespace ldebm
