#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ldebm/config.hpp"
#include "ldebm/corpus.hpp"
#include "ldebm/inference_generation.hpp"
#include "ldebm/metrics.hpp"
#include "ldebm/training.hpp"

namespace ldebm {

/// The dataset a RunConfig names, materialized.
struct RunData {
  ObservationBatch obs;
  std::vector<int> labels;       // ground-truth component / label, may be empty
  Eigen::MatrixXd centers;       // 2 x M mode locations (point data only)
  std::optional<Vocabulary> vocab;
};

/// Generated point sets draw from `cfg.seed`; corpora reuse `vocab` if given.
RunData load_run_data(const RunConfig& cfg,
                      const std::optional<Vocabulary>& vocab = std::nullopt);
/// cfg.modality with the vocabulary size filled in.
ModalitySpec resolved_modality(const RunConfig& cfg, const RunData& data);

/// "seed=<n> config_hash=<hex>", stamped into every artifact.
std::string artifact_tag(const RunConfig& cfg);
std::string hash_hex(std::uint64_t h);

struct TrainOutcome {
  long steps = 0;
  int epochs = 0;
  std::string checkpoint;  // path of the final checkpoint
};

/// Runs training to completion (or cfg.max_steps), writing
/// checkpoint_epoch<N>.ckpt after every epoch, checkpoint.ckpt at the end,
/// and metrics.jsonl with one line per step. Throws TrainingError when a
/// step goes non-finite.
TrainOutcome run_training(const RunConfig& cfg, const std::string& out_dir,
                          const std::function<void(const StepDiagnostics&)>& on_step = {});

/// n prior samples of z0 (d x n); with a label, the symbol-coupled chain.
Eigen::MatrixXd sample_prior(const RunConfig& cfg, const EnergyModel& prior, int n,
                             std::optional<int> label, const Rng& rng);

/// Eval streams under the run seed.
Rng eval_stream(const RunConfig& cfg, std::uint64_t which);

/// Mode coverage, homogeneity, mutual information, NLL and ELBO for point
/// data; reconstruction accuracy, BLEU, wKL, NLL and ELBO for corpora.
EvalReport evaluate(const RunConfig& cfg, Models& models, const RunData& data);

/// Fraction of reference tokens (including <eos>) reproduced position-wise
/// by greedy decoding from the posterior means.
double reconstruction_accuracy(const Encoder& enc, const Decoder& dec,
                               const ObservationBatch& data);

/// Words of each sentence up to its <eos>.
std::vector<std::vector<std::string>> sentence_words(const std::vector<std::vector<int>>& ids,
                                                     const Vocabulary& vocab);

}  // namespace ldebm
