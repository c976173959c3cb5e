#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ldebm/energy.hpp"
#include "ldebm/energy_model.hpp"
#include "ldebm/inference_generation.hpp"
#include "ldebm/kmeans.hpp"
#include "ldebm/nn.hpp"
#include "ldebm/rng.hpp"
#include "ldebm/sampler.hpp"
#include "ldebm/schedule.hpp"

namespace ldebm {

struct TrainingConfig {
  int latent_dim = 2;
  int num_classes = 16;
  int num_steps = 6;
  double sigma_sq_min = 0.04;
  double sigma_sq_max = 0.36;
  LangevinConfig langevin;

  double lambda1 = 1.0;   // trajectory term
  double lambda2 = 0.05;  // mutual information (IB)
  double lambda3 = 0.05;  // classification
  /// +1 maximizes the MI term through the encoder, -1 minimizes it.
  double encoder_mi_sign = 1.0;
  bool geometric_clustering = true;
  /// Adds the z_{t+1}-dependence of each conditional's normalizer to the
  /// encoder gradient, estimated from the Langevin negatives.
  bool partition_gradient = false;
  /// Estimate that gradient from chains started at the positives (one extra
  /// chain per column) instead of reusing the prior's negatives.
  bool partition_from_positive = false;
  /// When > 0, estimate it instead by self-normalized importance sampling
  /// from the Gaussian base with this many draws per column.
  int partition_samples = 0;
  /// F is multiplied by energy_scale, and further divided by the squared
  /// Langevin step size of its step when step_scaled_energy is set.
  double energy_scale = 1.0;
  bool step_scaled_energy = false;

  double lr_encdec = 1e-3;
  double lr_prior = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double lr_decay = 1.0;
  double weight_decay = 0.0;
  double recurrent_clip = 5.0;

  int batch_size = 1000;
  int epochs = 1;
  int recluster_every = 1;
  std::uint64_t seed = 0;

  EnergyModelConfig energy;  // latent_dim/num_classes/num_steps overwritten

  void validate() const;
  EnergyModelConfig energy_config() const;
  DiffusionSchedule schedule() const;
};

/// Per-dataset defaults.
TrainingConfig gaussian_grid_preset();
TrainingConfig pinwheel_preset();
TrainingConfig toy_text_preset();

/// Independent uniform draws from {0, ..., T-1}.
std::vector<int> sample_steps(Eigen::Index n, int num_steps, Rng& rng);

struct PriorStats {
  double pos_energy = 0.0;  // mean F on positives
  double neg_energy = 0.0;  // mean F on negatives
  std::vector<int> steps;
};

/// grad += scale * mean_j [dF(z~+_j, t_j) - dF(z~-_j, t_j)] / d alpha.
void accumulate_contrastive_gradient(TrainableEnergy& model,
                                     const Eigen::MatrixXd& positives,
                                     const Eigen::MatrixXd& negatives,
                                     std::span<const int> t, double scale);

/// Draws a step per column, builds positive pairs from z0 and Langevin
/// negatives started at z_{t+1}, then accumulates the contrastive gradient
/// with the given scale (+1 ascends the log-likelihood).
PriorStats accumulate_prior_gradient(TrainableEnergy& model, const Eigen::MatrixXd& z0,
                                     const DiffusionSchedule& sched,
                                     const LangevinConfig& cfg, const Rng& rng,
                                     double scale);

/// Log-likelihood ascent direction for alpha, batch-averaged; parameter
/// gradients are left as they were found.
ParameterGradient prior_gradient(TrainableEnergy& model, const Eigen::MatrixXd& z0,
                                 const DiffusionSchedule& sched, const LangevinConfig& cfg,
                                 const Rng& rng, PriorStats* stats = nullptr);

struct EncDecTerms {
  double loss = 0.0;             // batch mean
  double reconstruction = 0.0;   // mean -log p(x|z0)
  double log_q = 0.0;            // mean log q(z0|x)
  double trajectory = 0.0;       // mean log p(z_T) + sum of conditional terms
  double entropy_constant = 0.0; // sum of forward-step entropies (not optimized)
};

/// Forward trajectory of a batch: z[0..T] and z_tilde[0..T-1], each d x B.
struct ForwardTrajectory {
  std::vector<Eigen::MatrixXd> z;
  std::vector<Eigen::MatrixXd> z_tilde;
};

/// Loss and dL/dz0 for a fixed reparameterized z0: recon and trajectory
/// parts only (log q handled at the posterior level). Decoder parameter
/// grads are accumulated. `traj_rng` column j drives the forward trajectory,
/// which is copied to `traj` when given.
EncDecTerms encoder_decoder_terms(Decoder& dec, const LatentEnergy& prior,
                                  const ObservationBatch& x, const Eigen::MatrixXd& z0,
                                  const Eigen::RowVectorXd& log_q,
                                  const DiffusionSchedule& sched, double lambda1,
                                  const Rng& traj_rng, Eigen::MatrixXd& dz0,
                                  ForwardTrajectory* traj = nullptr);

/// Single-draw estimate of d/dz0 of -sum_{t < T-1} log Z_t(z_{t+1}), where
/// column j contributes only at its step t_j (weighted by T). Uses
/// grad_z log Z_t(z_{t+1}) = E[grad F(z~, t)] under the conditional, with
/// the negatives standing in for that expectation.
Eigen::MatrixXd partition_gradient_estimate(const LatentEnergy& prior,
                                            const Eigen::MatrixXd& negatives,
                                            std::span<const int> t,
                                            const DiffusionSchedule& sched);

/// The same quantity with E[grad F] taken by self-normalized importance
/// sampling from N(z_next, sigma_{t+1}^2 I); column j draws from rng.split(j).
Eigen::MatrixXd partition_gradient_importance(const LatentEnergy& prior,
                                              const Eigen::MatrixXd& z_next,
                                              std::span<const int> t,
                                              const DiffusionSchedule& sched, int n_samples,
                                              const Rng& rng);

/// -[log p(x|z0) - log q(z0|x)] - lambda1 [log p(z_T) + sum_t conditional
/// log density], batch mean, over one reparameterized draw per observation.
/// Accumulates encoder and decoder parameter gradients.
EncDecTerms encoder_decoder_loss(Encoder& enc, Decoder& dec, const LatentEnergy& prior,
                                 const ObservationBatch& x, const DiffusionSchedule& sched,
                                 double lambda1, const Rng& rng);

/// Plug-in I(z0, y) from the classifier probabilities p(y|z0) (K x B).
double mutual_information(const Eigen::MatrixXd& probs);
double mutual_information(const EnergyModel& model, const DiffusionSchedule& sched,
                          const Eigen::MatrixXd& z0);
/// dI/dlogits for the classifier logits behind `probs`.
Eigen::MatrixXd mutual_information_logit_gradient(const Eigen::MatrixXd& probs);

/// Mean cross-entropy -log p(y|z0); labels are class indices.
double classification_loss(const Eigen::MatrixXd& probs, const std::vector<int>& labels);
double classification_loss(const EnergyModel& model, const DiffusionSchedule& sched,
                           const Eigen::MatrixXd& z0, const std::vector<int>& labels);
/// Converts a one-hot row set (K x B) to indices; throws on malformed input.
std::vector<int> labels_from_one_hot(const Eigen::MatrixXd& y);

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long step) : std::runtime_error(what), step(step) {}
  long step;
};

struct StepDiagnostics {
  long step = 0;
  int epoch = 0;
  double loss = 0.0;
  double reconstruction = 0.0;
  double log_q = 0.0;
  double trajectory = 0.0;
  double pos_energy = 0.0;
  double neg_energy = 0.0;
  double energy_gap = 0.0;
  double mutual_information = 0.0;
  double classification = 0.0;
  int labelled = 0;  // batch elements with a true or pseudo label

  std::string to_json() const;
};

/// Which observation model to build.
struct ModalitySpec {
  enum class Kind { kPoints, kTokens } kind = Kind::kPoints;
  int obs_dim = 2;
  std::vector<int> hidden{128, 128};
  int vocab_size = 0;
  int embed_dim = 512;
  int hidden_dim = 512;
};

/// Prior, encoder and decoder of one model.
struct Models {
  std::unique_ptr<EnergyModel> prior;
  std::unique_ptr<Encoder> encoder;
  std::unique_ptr<Decoder> decoder;

  /// All parameters in a fixed order: prior, encoder, decoder.
  ParameterList parameters() const;
};

/// Freshly initialized models; initialization draws from the run seed only.
Models build_models(const TrainingConfig& cfg, const ModalitySpec& modality);

/// Models, optimizers and the dataset bookkeeping of one training run.
class Trainer {
 public:
  Trainer(const TrainingConfig& cfg, const ModalitySpec& modality, ObservationBatch data,
          std::vector<int> labels = {});

  const TrainingConfig& config() const { return cfg_; }
  const DiffusionSchedule& schedule() const { return sched_; }
  EnergyModel& prior() { return *m_.prior; }
  Encoder& encoder() { return *m_.encoder; }
  Decoder& decoder() { return *m_.decoder; }
  const EnergyModel& prior() const { return *m_.prior; }
  const Encoder& encoder() const { return *m_.encoder; }
  const Decoder& decoder() const { return *m_.decoder; }
  Models& models() { return m_; }
  const ObservationBatch& data() const { return data_; }
  const std::vector<int>& pseudo_labels() const { return pseudo_; }
  long step_count() const { return step_; }
  int epoch() const { return epoch_; }

  ParameterList all_parameters() { return m_.parameters(); }

  /// K-means on posterior means of the whole dataset, warm-started from the
  /// previous centroids after the first pass.
  void recluster();

  /// One joint update of prior, encoder and decoder on the given dataset indices.
  StepDiagnostics train_step(const std::vector<int>& indices);

  /// One pass over a shuffled dataset; reclusters first when due. With
  /// stop_at_step > 0 the pass ends early once that many steps have run in
  /// total; returns false when it did (the epoch counter then stays put).
  bool train_epoch(const std::function<void(const StepDiagnostics&)>& on_step = {},
                   long stop_at_step = 0);

  /// Posterior means of the whole dataset (d x N).
  Eigen::MatrixXd posterior_means() const;

 private:
  bool needs_pseudo_labels() const;

  TrainingConfig cfg_;
  DiffusionSchedule sched_;
  Models m_;
  std::unique_ptr<Adam> prior_opt_, encdec_opt_;
  ObservationBatch data_;
  std::vector<int> labels_;  // -1 where unlabeled
  std::vector<int> pseudo_;
  std::optional<Eigen::MatrixXd> centroids_;
  long step_ = 0;
  int epoch_ = 0;
};

}  // namespace ldebm
