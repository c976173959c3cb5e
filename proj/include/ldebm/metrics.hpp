#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ldebm/energy.hpp"
#include "ldebm/energy_model.hpp"
#include "ldebm/inference_generation.hpp"
#include "ldebm/rng.hpp"
#include "ldebm/schedule.hpp"

namespace ldebm {

/// log of the normalizer of exp(F(z~, t) - |z~ - m|^2 / (2 sigma_{t+1}^2)),
/// m = z_next (0 at t = T-1), by Monte Carlo over the Gaussian N(m, sigma^2 I):
/// (d/2) ln(2 pi sigma^2) + log mean exp F(zeta_i, t).
double estimate_log_partition(const LatentEnergy& energy, const Eigen::VectorXd& z_next,
                              const DiffusionSchedule& sched, int t, int n_samples,
                              Rng& rng);
/// One estimate per column of z_next; column j draws from rng.split(j).
Eigen::RowVectorXd estimate_log_partition_batch(const LatentEnergy& energy,
                                                const Eigen::MatrixXd& z_next,
                                                const DiffusionSchedule& sched,
                                                std::span<const int> t, int n_samples,
                                                const Rng& rng);

struct ImportanceSettings {
  int samples = 500;             // trajectories per observation
  int partition_samples = 1000;  // Gaussian-base draws per conditional
};

/// Log importance weight of each of `settings.samples` trajectories drawn
/// from q(z0|x) q(z_{1:T}|z0), for a single observation x.
Eigen::RowVectorXd log_importance_weights(const Encoder& enc, const Decoder& dec,
                                          const LatentEnergy& prior,
                                          const DiffusionSchedule& sched,
                                          const ObservationBatch& x,
                                          const ImportanceSettings& settings, const Rng& rng);

/// -log mean_s w_s.
double nll_importance(const Encoder& enc, const Decoder& dec, const LatentEnergy& prior,
                      const DiffusionSchedule& sched, const ObservationBatch& x,
                      const ImportanceSettings& settings, const Rng& rng);

/// mean_s log w_s: the trajectory ELBO with normalized conditionals.
double elbo(const Encoder& enc, const Decoder& dec, const LatentEnergy& prior,
            const DiffusionSchedule& sched, const ObservationBatch& x,
            const ImportanceSettings& settings, const Rng& rng);

/// Corpus BLEU (n <= 4, uniform weights, brevity penalty). Every hypothesis
/// is scored against the whole reference pool: clipped counts use the max
/// count over references and the closest reference length. Returns 0..100.
double bleu(const std::vector<std::vector<std::string>>& references,
            const std::vector<std::vector<std::string>>& hypotheses);

/// KL(p_ref || p_gen) over unigram frequencies, add-one smoothed over the
/// union vocabulary.
double word_kl(const std::vector<std::vector<std::string>>& reference,
               const std::vector<std::vector<std::string>>& generated);

/// 1 - H(C|K) / H(C); 1 when H(C) = 0.
double homogeneity(const std::vector<int>& true_labels, const std::vector<int>& predicted);

struct ModeCoverage {
  int covered = 0;
  std::vector<int> histogram;
};

/// Each sample is credited to its nearest center if within `radius`; a mode
/// is covered when it collects at least 0.5% of all samples.
ModeCoverage mode_coverage(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& centers,
                           double radius);

/// Plug-in I(z0, y) over posterior means of the dataset.
double corpus_mutual_information(const EnergyModel& model, const Encoder& enc,
                                 const DiffusionSchedule& sched, const ObservationBatch& data);

/// Named scalars with the estimator settings used for each.
class EvalReport {
 public:
  struct Entry {
    std::string name;
    double value;
    std::string settings;  // JSON object text
  };

  explicit EvalReport(std::uint64_t seed = 0, std::string config_hash = "")
      : seed_(seed), config_hash_(std::move(config_hash)) {}
  void add(const std::string& name, double value, const std::string& settings_json = "{}");
  const std::vector<Entry>& entries() const { return entries_; }
  const Entry* find(const std::string& name) const;
  std::uint64_t seed() const { return seed_; }
  const std::string& config_hash() const { return config_hash_; }
  std::string to_json() const;

 private:
  std::uint64_t seed_;
  std::string config_hash_;
  std::vector<Entry> entries_;
};

}  // namespace ldebm
