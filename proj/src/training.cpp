#include "ldebm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"
#include "ldebm/diffusion.hpp"

namespace ldebm {

namespace {

constexpr double kProbFloor = 1e-300;

// Stream ids under the run seed.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kStepStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kClusterStream = 3;

Eigen::MatrixXd reparameterize(const Posterior& post, const Rng& rng, Eigen::MatrixXd& eps) {
  const Eigen::Index d = post.mu.rows(), B = post.mu.cols();
  eps.resize(d, B);
  for (Eigen::Index j = 0; j < B; ++j) {
    Rng col = rng.split(static_cast<std::uint64_t>(j));
    for (Eigen::Index i = 0; i < d; ++i) eps(i, j) = col.normal();
  }
  return post.mu + ((0.5 * post.log_var.array()).exp() * eps.array()).matrix();
}

// Posterior-level gradients of a loss whose dL/dz0 is known, plus the
// +log q / B term evaluated at the reparameterized point.
void posterior_gradients(const Posterior& post, const Eigen::MatrixXd& eps,
                         const Eigen::MatrixXd& dz0, Eigen::MatrixXd& dmu,
                         Eigen::MatrixXd& dlog_var) {
  const double inv_b = 1.0 / static_cast<double>(post.mu.cols());
  dmu = dz0;
  dlog_var = (dz0.array() * eps.array() * (0.5 * post.log_var.array()).exp() * 0.5).matrix();
  dlog_var.array() -= 0.5 * inv_b;
}

double entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k)
    if (p(k) > 0.0) h -= p(k) * std::log(p(k));
  return h;
}

}  // namespace

void TrainingConfig::validate() const {
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("K must be >= 1");
  if (num_steps < 2) throw std::invalid_argument("T must be >= 2");
  if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0)
    throw std::invalid_argument("lambda weights must be non-negative");
  if (!(lr_encdec > 0.0) || !(lr_prior > 0.0))
    throw std::invalid_argument("learning rates must be positive");
  if (langevin.n_steps < 1 || !(langevin.b_sq > 0.0))
    throw std::invalid_argument("Langevin needs n_steps >= 1 and b^2 > 0");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (recluster_every < 1) throw std::invalid_argument("recluster_every must be >= 1");
  if (!(energy_scale > 0.0)) throw std::invalid_argument("energy_scale must be positive");
  if (partition_samples < 0) throw std::invalid_argument("partition_samples must be >= 0");
  if (encoder_mi_sign != 1.0 && encoder_mi_sign != -1.0)
    throw std::invalid_argument("encoder_mi_sign must be +1 or -1");
}

EnergyModelConfig TrainingConfig::energy_config() const {
  EnergyModelConfig e = energy;
  e.latent_dim = latent_dim;
  e.num_classes = num_classes;
  e.num_steps = num_steps;
  e.step_scale.clear();
  if (step_scaled_energy || energy_scale != 1.0) {
    const DiffusionSchedule sched = schedule();
    for (int t = 0; t < num_steps; ++t) {
      const double s = langevin_step_size(sched, t, langevin).step;
      e.step_scale.push_back(step_scaled_energy ? energy_scale / (s * s) : energy_scale);
    }
  }
  return e;
}

DiffusionSchedule TrainingConfig::schedule() const {
  return build_schedule(num_steps, sigma_sq_min, sigma_sq_max, latent_dim);
}

TrainingConfig gaussian_grid_preset() {
  TrainingConfig c;
  c.latent_dim = 2;
  c.num_classes = 16;
  c.lambda1 = 1.0;
  c.lambda2 = 0.05;
  c.lambda3 = 0.05;
  c.batch_size = 1000;
  return c;
}

TrainingConfig pinwheel_preset() {
  TrainingConfig c = gaussian_grid_preset();
  c.num_classes = 10;
  return c;
}

TrainingConfig toy_text_preset() {
  TrainingConfig c;
  c.latent_dim = 40;
  c.num_classes = 20;
  c.lambda1 = 0.1;
  c.lambda2 = 0.05;
  c.lambda3 = 0.05;
  c.batch_size = 128;
  return c;
}

std::vector<int> sample_steps(Eigen::Index n, int num_steps, Rng& rng) {
  std::vector<int> t(n);
  for (auto& ti : t) ti = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_steps)));
  return t;
}

void accumulate_contrastive_gradient(TrainableEnergy& model,
                                     const Eigen::MatrixXd& positives,
                                     const Eigen::MatrixXd& negatives,
                                     std::span<const int> t, double scale) {
  const Eigen::Index B = positives.cols();
  if (negatives.cols() != B || static_cast<Eigen::Index>(t.size()) != B)
    throw std::invalid_argument("contrastive gradient: batch size mismatch");
  Eigen::MatrixXd both(positives.rows(), 2 * B);
  both << positives, negatives;
  std::vector<int> tt(t.begin(), t.end());
  tt.insert(tt.end(), t.begin(), t.end());
  Eigen::RowVectorXd w(2 * B);
  w.head(B).setConstant(scale / static_cast<double>(B));
  w.tail(B).setConstant(-scale / static_cast<double>(B));
  model.accumulate_parameter_gradient(both, tt, w);
}

PriorStats accumulate_prior_gradient(TrainableEnergy& model, const Eigen::MatrixXd& z0,
                                     const DiffusionSchedule& sched,
                                     const LangevinConfig& cfg, const Rng& rng,
                                     double scale) {
  PriorStats stats;
  Rng step_rng = rng.split(0);
  stats.steps = sample_steps(z0.cols(), sched.num_steps(), step_rng);
  Eigen::MatrixXd pos, z_next;
  sample_pairs(z0, stats.steps, sched, rng.split(1), pos, z_next);
  const Eigen::MatrixXd neg = langevin_chain(model, z_next, sched, stats.steps, cfg, rng.split(2));
  accumulate_contrastive_gradient(model, pos, neg, stats.steps, scale);
  stats.pos_energy = model.energy(pos, stats.steps).mean();
  stats.neg_energy = model.energy(neg, stats.steps).mean();
  return stats;
}

ParameterGradient prior_gradient(TrainableEnergy& model, const Eigen::MatrixXd& z0,
                                 const DiffusionSchedule& sched, const LangevinConfig& cfg,
                                 const Rng& rng, PriorStats* stats) {
  const ParameterList params = model.parameters();
  const ParameterGradient saved = snapshot_grads(params);
  zero_grads(params);
  PriorStats s = accumulate_prior_gradient(model, z0, sched, cfg, rng, 1.0);
  ParameterGradient out = snapshot_grads(params);
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->grad = saved[i];
  if (stats) *stats = std::move(s);
  return out;
}

EncDecTerms encoder_decoder_terms(Decoder& dec, const LatentEnergy& prior,
                                  const ObservationBatch& x, const Eigen::MatrixXd& z0,
                                  const Eigen::RowVectorXd& log_q,
                                  const DiffusionSchedule& sched, double lambda1,
                                  const Rng& traj_rng, Eigen::MatrixXd& dz0,
                                  ForwardTrajectory* traj_out) {
  const Eigen::Index d = z0.rows(), B = z0.cols();
  const int T = sched.num_steps();
  const double inv_b = 1.0 / static_cast<double>(B);

  // Forward trajectory z_0 -> z_T, column j driven by traj_rng.split(j).
  std::vector<Eigen::MatrixXd> noise(T, Eigen::MatrixXd(d, B));
  for (Eigen::Index j = 0; j < B; ++j) {
    Rng col = traj_rng.split(static_cast<std::uint64_t>(j));
    for (int t = 0; t < T; ++t)
      for (Eigen::Index i = 0; i < d; ++i) noise[t](i, j) = col.normal();
  }
  std::vector<Eigen::MatrixXd> z(T + 1), z_tilde(T), grad_tilde(T);
  z[0] = z0;
  Eigen::RowVectorXd traj = Eigen::RowVectorXd::Zero(B);
  for (int t = 0; t < T; ++t) {
    z_tilde[t] = std::sqrt(1.0 - sched.sigma_sq(t + 1)) * z[t];
    z[t + 1] = z_tilde[t] + sched.sigma(t + 1) * noise[t];
  }
  for (int t = 0; t < T; ++t) {
    const std::vector<int> ts(B, t);
    traj += conditional_log_density_batch(prior, z_tilde[t], z[t + 1], sched, ts,
                                          &grad_tilde[t]);
  }
  const double log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  traj += (log_norm - 0.5 * z[T].colwise().squaredNorm().array()).matrix();

  // Reverse pass: g holds d(traj)/dz_{t+1} from everything downstream.
  Eigen::MatrixXd g = -z[T];
  for (int t = T - 1; t >= 0; --t) {
    if (t != T - 1) g += (z_tilde[t] - z[t + 1]) / sched.sigma_sq(t + 1);
    g = std::sqrt(1.0 - sched.sigma_sq(t + 1)) * (grad_tilde[t] + g);
  }

  const Eigen::RowVectorXd ll = dec.forward(z0, x);
  dz0 = dec.backward(Eigen::RowVectorXd::Constant(B, -inv_b));
  dz0 -= lambda1 * inv_b * g;

  EncDecTerms out;
  out.reconstruction = -ll.mean();
  out.log_q = log_q.mean();
  out.trajectory = traj.mean();
  out.loss = out.reconstruction + out.log_q - lambda1 * out.trajectory;
  for (int t = 1; t <= T; ++t) out.entropy_constant += step_entropy(sched, t);
  if (traj_out) {
    traj_out->z = std::move(z);
    traj_out->z_tilde = std::move(z_tilde);
  }
  return out;
}

namespace {

// Scales per-column estimates of E[grad F] under each conditional into the
// z0-gradient of -sum_t log Z_t.
Eigen::MatrixXd weight_partition_gradient(Eigen::MatrixXd grad, std::span<const int> t,
                                          const DiffusionSchedule& sched) {
  const int T = sched.num_steps();
  for (Eigen::Index j = 0; j < grad.cols(); ++j) {
    // The top step's normalizer does not depend on anything upstream.
    const double w = t[j] == T - 1 ? 0.0 : -T * std::sqrt(sched.gamma_bar(t[j] + 1));
    grad.col(j) *= w;
  }
  return grad;
}

}  // namespace

Eigen::MatrixXd partition_gradient_estimate(const LatentEnergy& prior,
                                            const Eigen::MatrixXd& negatives,
                                            std::span<const int> t,
                                            const DiffusionSchedule& sched) {
  Eigen::MatrixXd grad;
  prior.energy_and_gradient(negatives, t, grad);
  return weight_partition_gradient(std::move(grad), t, sched);
}

Eigen::MatrixXd partition_gradient_importance(const LatentEnergy& prior,
                                              const Eigen::MatrixXd& z_next,
                                              std::span<const int> t,
                                              const DiffusionSchedule& sched, int n_samples,
                                              const Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("importance partition gradient needs n >= 1");
  const Eigen::Index d = z_next.rows(), B = z_next.cols();
  const int T = sched.num_steps();
  Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(d, B);
  std::vector<int> cols;
  for (Eigen::Index j = 0; j < B; ++j)
    if (t[j] != T - 1) cols.push_back(static_cast<int>(j));
  if (cols.empty()) return expect;
  const Eigen::Index n = static_cast<Eigen::Index>(cols.size()) * n_samples;
  Eigen::MatrixXd zeta(d, n), offset(d, n);
  std::vector<int> ts(n);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const int j = cols[c];
    const double sigma = sched.sigma(t[j] + 1);
    Rng col = rng.split(static_cast<std::uint64_t>(j));
    for (int s = 0; s < n_samples; ++s) {
      const Eigen::Index k = static_cast<Eigen::Index>(c) * n_samples + s;
      for (Eigen::Index i = 0; i < d; ++i) offset(i, k) = sigma * col.normal();
      zeta.col(k) = z_next.col(j) + offset.col(k);
      ts[k] = t[j];
    }
  }
  const Eigen::RowVectorXd f = prior.energy(zeta, ts);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const int j = cols[c];
    const Eigen::ArrayXd fc = f.segment(static_cast<Eigen::Index>(c) * n_samples, n_samples)
                                  .transpose()
                                  .array();
    const Eigen::ArrayXd w = (fc - fc.maxCoeff()).exp();
    // E[grad F] = E[zeta - z_next] / sigma^2 under the tilted Gaussian.
    expect.col(j) = offset.middleCols(static_cast<Eigen::Index>(c) * n_samples, n_samples) *
                    (w / w.sum()).matrix() / sched.sigma_sq(t[j] + 1);
  }
  return weight_partition_gradient(std::move(expect), t, sched);
}

EncDecTerms encoder_decoder_loss(Encoder& enc, Decoder& dec, const LatentEnergy& prior,
                                 const ObservationBatch& x, const DiffusionSchedule& sched,
                                 double lambda1, const Rng& rng) {
  const Posterior post = enc.forward(x);
  Eigen::MatrixXd eps;
  const Eigen::MatrixXd z0 = reparameterize(post, rng.split(0), eps);
  const Eigen::RowVectorXd log_q = gaussian_log_density(z0, post.mu, post.log_var);
  Eigen::MatrixXd dz0, dmu, dlv;
  EncDecTerms terms =
      encoder_decoder_terms(dec, prior, x, z0, log_q, sched, lambda1, rng.split(1), dz0);
  posterior_gradients(post, eps, dz0, dmu, dlv);
  enc.backward(dmu, dlv);
  return terms;
}

double mutual_information(const Eigen::MatrixXd& probs) {
  const Eigen::Index B = probs.cols();
  const Eigen::VectorXd marginal = probs.rowwise().mean();
  double cond = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) cond += entropy(probs.col(j));
  return entropy(marginal) - cond / static_cast<double>(B);
}

double mutual_information(const EnergyModel& model, const DiffusionSchedule& sched,
                          const Eigen::MatrixXd& z0) {
  return mutual_information(classify_batch(model, sched, z0));
}

Eigen::MatrixXd mutual_information_logit_gradient(const Eigen::MatrixXd& probs) {
  const Eigen::Index B = probs.cols();
  const Eigen::ArrayXd log_marginal =
      probs.rowwise().mean().array().max(kProbFloor).log();
  Eigen::MatrixXd out(probs.rows(), B);
  for (Eigen::Index j = 0; j < B; ++j) {
    const Eigen::ArrayXd p = probs.col(j).array();
    const Eigen::ArrayXd g = (p.max(kProbFloor).log() - log_marginal) / static_cast<double>(B);
    out.col(j) = (p * (g - (p * g).sum())).matrix();
  }
  return out;
}

double classification_loss(const Eigen::MatrixXd& probs, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.cols() || labels.empty())
    throw std::invalid_argument("classification loss: one label per column required");
  double sum = 0.0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] < 0 || labels[j] >= probs.rows())
      throw std::out_of_range("classification loss: label outside [0, K)");
    sum -= std::log(std::max(probs(labels[j], static_cast<Eigen::Index>(j)), kProbFloor));
  }
  return sum / static_cast<double>(labels.size());
}

double classification_loss(const EnergyModel& model, const DiffusionSchedule& sched,
                           const Eigen::MatrixXd& z0, const std::vector<int>& labels) {
  return classification_loss(classify_batch(model, sched, z0), labels);
}

std::vector<int> labels_from_one_hot(const Eigen::MatrixXd& y) {
  std::vector<int> out(y.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j) out[j] = one_hot_index(y.col(j), static_cast<int>(y.rows()));
  return out;
}

std::string StepDiagnostics::to_json() const {
  nlohmann::json j = {{"step", step},
                      {"epoch", epoch},
                      {"loss", loss},
                      {"reconstruction", reconstruction},
                      {"log_q", log_q},
                      {"trajectory", trajectory},
                      {"pos_energy", pos_energy},
                      {"neg_energy", neg_energy},
                      {"energy_gap", energy_gap},
                      {"mutual_information", mutual_information},
                      {"classification", classification},
                      {"labelled", labelled}};
  return j.dump();
}

Trainer::Trainer(const TrainingConfig& cfg, const ModalitySpec& modality,
                 ObservationBatch data, std::vector<int> labels)
    : cfg_(cfg), sched_(cfg.schedule()), data_(std::move(data)), labels_(std::move(labels)) {
  cfg_.validate();
  if (data_.size() < 2) throw std::invalid_argument("training needs at least 2 observations");
  if (labels_.empty()) labels_.assign(data_.size(), -1);
  if (static_cast<Eigen::Index>(labels_.size()) != data_.size())
    throw std::invalid_argument("one label (or -1) per observation required");
  for (int l : labels_)
    if (l < -1 || l >= cfg_.num_classes) throw std::out_of_range("label outside [0, K)");

  m_ = build_models(cfg_, modality);
  if (modality.kind == ModalitySpec::Kind::kPoints && data_.is_sequence())
    throw std::invalid_argument("point modality needs point data");
  if (modality.kind == ModalitySpec::Kind::kTokens && !data_.is_sequence())
    throw std::invalid_argument("token modality needs token data");
  Adam::Options popt{cfg_.lr_prior, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8, cfg_.weight_decay,
                     cfg_.lr_decay};
  Adam::Options eopt{cfg_.lr_encdec, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8, cfg_.weight_decay,
                     cfg_.lr_decay};
  prior_opt_ = std::make_unique<Adam>(m_.prior->parameters(), popt);
  ParameterList ed = m_.encoder->parameters();
  for (Parameter* p : m_.decoder->parameters()) ed.push_back(p);
  encdec_opt_ = std::make_unique<Adam>(ed, eopt);
}

ParameterList Models::parameters() const {
  ParameterList out = prior->parameters();
  for (Parameter* p : encoder->parameters()) out.push_back(p);
  for (Parameter* p : decoder->parameters()) out.push_back(p);
  return out;
}

Models build_models(const TrainingConfig& cfg, const ModalitySpec& modality) {
  const Rng root = Rng(cfg.seed).split(kInitStream);
  Rng prior_rng = root.split(0), enc_rng = root.split(1), dec_rng = root.split(2);
  Models m;
  m.prior = std::make_unique<EnergyModel>(cfg.energy_config(), prior_rng);
  m.prior->apply_spectral_norm();
  if (modality.kind == ModalitySpec::Kind::kPoints) {
    m.encoder =
        std::make_unique<MlpEncoder>(modality.obs_dim, cfg.latent_dim, modality.hidden, enc_rng);
    m.decoder = std::make_unique<GaussianDecoder>(cfg.latent_dim, modality.obs_dim,
                                                  modality.hidden, dec_rng);
  } else {
    if (modality.vocab_size < 4) throw std::invalid_argument("token modality needs a vocabulary");
    m.encoder = std::make_unique<GruEncoder>(modality.vocab_size, cfg.latent_dim,
                                             modality.embed_dim, modality.hidden_dim, enc_rng);
    m.decoder = std::make_unique<SequenceDecoder>(modality.vocab_size, cfg.latent_dim,
                                                  modality.embed_dim, modality.hidden_dim, dec_rng);
  }
  return m;
}

bool Trainer::needs_pseudo_labels() const {
  if (!cfg_.geometric_clustering || cfg_.lambda3 == 0.0) return false;
  return std::any_of(labels_.begin(), labels_.end(), [](int l) { return l < 0; });
}

Eigen::MatrixXd Trainer::posterior_means() const {
  const Eigen::Index N = data_.size();
  Eigen::MatrixXd out(cfg_.latent_dim, N);
  constexpr Eigen::Index kChunk = 1000;
  for (Eigen::Index b = 0; b < N; b += kChunk) {
    const Eigen::Index n = std::min(kChunk, N - b);
    std::vector<int> idx(n);
    for (Eigen::Index i = 0; i < n; ++i) idx[i] = static_cast<int>(b + i);
    out.middleCols(b, n) = m_.encoder->posterior(data_.select(idx)).mu;
  }
  return out;
}

void Trainer::recluster() {
  const Eigen::MatrixXd means = posterior_means();
  const std::uint64_t seed =
      Rng(cfg_.seed).split(kClusterStream).split(static_cast<std::uint64_t>(epoch_)).next_u64();
  KMeansResult res =
      kmeans_assign(means, cfg_.num_classes, seed, centroids_ ? &*centroids_ : nullptr);
  pseudo_ = std::move(res.labels);
  centroids_ = std::move(res.centroids);
}

StepDiagnostics Trainer::train_step(const std::vector<int>& indices) {
  const Eigen::Index B = static_cast<Eigen::Index>(indices.size());
  if (B < 2) throw std::invalid_argument("train_step needs at least 2 observations");
  const Rng rng = Rng(cfg_.seed).split(kStepStream).split(static_cast<std::uint64_t>(step_));
  const ObservationBatch x = data_.select(indices);
  ParameterList params = all_parameters();
  zero_grads(params);

  const Posterior post = m_.encoder->forward(x);
  Eigen::MatrixXd eps;
  const Eigen::MatrixXd z0 = reparameterize(post, rng.split(0), eps);
  const Eigen::RowVectorXd log_q = gaussian_log_density(z0, post.mu, post.log_var);

  Eigen::MatrixXd dz0;
  ForwardTrajectory traj;
  const EncDecTerms terms = encoder_decoder_terms(*m_.decoder, *m_.prior, x, z0, log_q, sched_,
                                                  cfg_.lambda1, rng.split(1), dz0, &traj);

  // Prior: positives and chain starts come from the same forward trajectory
  // at one uniform step per column; minimizing -log p flips the sign.
  Rng step_rng = rng.split(2).split(0);
  const std::vector<int> steps = sample_steps(B, sched_.num_steps(), step_rng);
  Eigen::MatrixXd pos(z0.rows(), B), z_next(z0.rows(), B);
  for (Eigen::Index j = 0; j < B; ++j) {
    pos.col(j) = traj.z_tilde[steps[j]].col(j);
    z_next.col(j) = traj.z[steps[j] + 1].col(j);
  }
  Eigen::MatrixXd neg;
  try {
    neg = langevin_chain(*m_.prior, z_next, sched_, steps, cfg_.langevin, rng.split(2).split(2));
  } catch (const SamplerError& e) {
    throw TrainingError("prior chain failed at step " + std::to_string(step_) + ": " + e.what(),
                        step_);
  }
  accumulate_contrastive_gradient(*m_.prior, pos, neg, steps, -1.0);
  PriorStats ps;
  ps.pos_energy = m_.prior->energy(pos, steps).mean();
  ps.neg_energy = m_.prior->energy(neg, steps).mean();
  if (cfg_.partition_gradient && cfg_.lambda1 > 0.0) {
    Eigen::MatrixXd from_pos;
    if (cfg_.partition_from_positive && cfg_.partition_samples == 0) {
      try {
        from_pos = langevin_chain(*m_.prior, z_next, sched_, steps, cfg_.langevin,
                                  rng.split(2).split(3), &pos);
      } catch (const SamplerError& e) {
        throw TrainingError("partition chain failed at step " + std::to_string(step_) + ": " +
                                e.what(),
                            step_);
      }
    }
    const Eigen::MatrixXd g =
        cfg_.partition_samples > 0
            ? partition_gradient_importance(*m_.prior, z_next, steps, sched_,
                                            cfg_.partition_samples, rng.split(2).split(4))
            : partition_gradient_estimate(*m_.prior,
                                          cfg_.partition_from_positive ? from_pos : neg, steps,
                                          sched_);
    dz0 -= (cfg_.lambda1 / static_cast<double>(B)) * g;
  }

  // Classifier terms at the symbol-coupled step.
  const double scale = std::sqrt(1.0 - sched_.sigma_sq(1));
  const std::vector<int> t0(B, 0);
  EnergyModel::Tape tape;
  const Eigen::MatrixXd probs = softmax(m_.prior->logits(scale * z0, t0, {}, &tape));
  const double mi = mutual_information(probs);
  const Eigen::MatrixXd dmi = mutual_information_logit_gradient(probs);

  Eigen::MatrixXd dce = Eigen::MatrixXd::Zero(probs.rows(), B);
  double ce = 0.0;
  int labelled = 0;
  const bool use_pseudo = needs_pseudo_labels() && !pseudo_.empty();
  if (cfg_.lambda3 > 0.0) {
    for (Eigen::Index j = 0; j < B; ++j) {
      int y = labels_[indices[j]];
      if (y < 0 && use_pseudo) y = pseudo_[indices[j]];
      if (y < 0) continue;
      ++labelled;
      ce -= std::log(std::max(probs(y, j), kProbFloor));
      dce.col(j) = probs.col(j);
      dce(y, j) -= 1.0;
    }
    if (labelled > 0) {
      ce /= labelled;
      dce /= labelled;
    }
  }
  const Eigen::MatrixXd dl_prior = -cfg_.lambda2 * dmi + cfg_.lambda3 * dce;
  const Eigen::MatrixXd dl_encoder =
      -cfg_.encoder_mi_sign * cfg_.lambda2 * dmi + cfg_.lambda3 * dce;
  m_.prior->backward(tape, dl_prior);
  dz0 += scale * m_.prior->input_gradient(tape, dl_encoder);

  StepDiagnostics diag;
  diag.step = step_;
  diag.epoch = epoch_;
  diag.loss = terms.loss;
  diag.reconstruction = terms.reconstruction;
  diag.log_q = terms.log_q;
  diag.trajectory = terms.trajectory;
  diag.pos_energy = ps.pos_energy;
  diag.neg_energy = ps.neg_energy;
  diag.energy_gap = ps.pos_energy - ps.neg_energy;
  diag.mutual_information = mi;
  diag.classification = ce;
  diag.labelled = labelled;

  Eigen::MatrixXd dmu, dlv;
  posterior_gradients(post, eps, dz0, dmu, dlv);
  m_.encoder->backward(dmu, dlv);
  if (m_.decoder->is_recurrent()) clip_grad_norm(m_.decoder->parameters(), cfg_.recurrent_clip);

  const double gnorm = grad_norm(params);
  if (!std::isfinite(terms.loss) || !std::isfinite(mi) || !std::isfinite(ce) ||
      !std::isfinite(diag.energy_gap) || !std::isfinite(gnorm))
    throw TrainingError("non-finite loss or gradient at step " + std::to_string(step_) +
                            ": " + diag.to_json(),
                        step_);

  prior_opt_->step();
  m_.prior->apply_spectral_norm();
  encdec_opt_->step();
  ++step_;
  return diag;
}

bool Trainer::train_epoch(const std::function<void(const StepDiagnostics&)>& on_step,
                          long stop_at_step) {
  if (needs_pseudo_labels() && epoch_ % cfg_.recluster_every == 0) recluster();
  const Eigen::Index N = data_.size();
  std::vector<int> order(N);
  for (Eigen::Index i = 0; i < N; ++i) order[i] = static_cast<int>(i);
  Rng shuffle = Rng(cfg_.seed).split(kShuffleStream).split(static_cast<std::uint64_t>(epoch_));
  for (Eigen::Index i = N - 1; i > 0; --i)
    std::swap(order[i], order[shuffle.below(static_cast<std::uint64_t>(i + 1))]);
  for (Eigen::Index b = 0; b < N; b += cfg_.batch_size) {
    if (stop_at_step > 0 && step_ >= stop_at_step) return false;
    const Eigen::Index n = std::min<Eigen::Index>(cfg_.batch_size, N - b);
    if (n < 2) break;
    const std::vector<int> idx(order.begin() + b, order.begin() + b + n);
    const StepDiagnostics d = train_step(idx);
    if (on_step) on_step(d);
  }
  prior_opt_->decay_lr();
  encdec_opt_->decay_lr();
  ++epoch_;
  return true;
}

}  // namespace ldebm
