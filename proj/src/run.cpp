#include "ldebm/run.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ldebm/checkpoint.hpp"
#include "ldebm/data.hpp"
#include "ldebm/kmeans.hpp"
#include "ldebm/sampler.hpp"

namespace ldebm {

namespace {

constexpr std::uint64_t kEvalStream = 16;

double default_radius(const RunConfig& cfg) {
  if (cfg.eval.coverage_radius > 0.0) return cfg.eval.coverage_radius;
  return cfg.data.kind == "pinwheel" ? 3.0 * cfg.data.pinwheel.radial_std
                                     : 3.0 * cfg.data.grid.std;
}

}  // namespace

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

std::string artifact_tag(const RunConfig& cfg) {
  return "seed=" + std::to_string(cfg.seed) + " config_hash=" + hash_hex(cfg.hash());
}

RunData load_run_data(const RunConfig& cfg, const std::optional<Vocabulary>& vocab) {
  RunData out;
  if (cfg.data.kind == "gaussian_grid" || cfg.data.kind == "pinwheel") {
    const Dataset2D ds = cfg.data.kind == "pinwheel"
                             ? gen_pinwheel(cfg.data.n, cfg.data.arms, cfg.seed, cfg.data.pinwheel)
                             : gen_gaussian_grid(cfg.data.n, cfg.seed, cfg.data.grid);
    out.obs.points = ds.points;
    out.labels = ds.labels;
    out.centers = ds.centers;
  } else {
    if (cfg.data.corpus.empty()) throw ConfigError("data.corpus is required for corpus data");
    TextCorpus corpus = load_corpus(cfg.data.corpus, vocab);
    out.obs.tokens = std::move(corpus.sentences);
    out.labels = std::move(corpus.labels);
    out.vocab = std::move(corpus.vocab);
  }
  return out;
}

ModalitySpec resolved_modality(const RunConfig& cfg, const RunData& data) {
  ModalitySpec m = cfg.modality;
  if (data.vocab) m.vocab_size = data.vocab->size();
  return m;
}

TrainOutcome run_training(const RunConfig& cfg, const std::string& out_dir,
                          const std::function<void(const StepDiagnostics&)>& on_step) {
  std::filesystem::create_directories(out_dir);
  const RunData data = load_run_data(cfg);
  Trainer trainer(cfg.train, resolved_modality(cfg, data), data.obs);
  const Vocabulary* vocab = data.vocab ? &*data.vocab : nullptr;

  std::ofstream log(out_dir + "/metrics.jsonl", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + out_dir + "/metrics.jsonl");
  log << nlohmann::json{{"seed", cfg.seed}, {"config_hash", hash_hex(cfg.hash())}}.dump()
      << '\n';
  const auto record = [&](const StepDiagnostics& d) {
    log << d.to_json() << '\n';
    if (on_step) on_step(d);
  };

  TrainOutcome out;
  for (int e = 0; e < cfg.train.epochs; ++e) {
    const bool complete = trainer.train_epoch(record, cfg.max_steps);
    if (!complete) break;
    save_checkpoint(out_dir + "/checkpoint_epoch" + std::to_string(trainer.epoch()) + ".ckpt",
                    cfg, trainer.models(), vocab, trainer.step_count(), trainer.epoch());
    if (cfg.max_steps > 0 && trainer.step_count() >= cfg.max_steps) break;
  }
  out.steps = trainer.step_count();
  out.epochs = trainer.epoch();
  out.checkpoint = out_dir + "/checkpoint.ckpt";
  save_checkpoint(out.checkpoint, cfg, trainer.models(), vocab, out.steps, out.epochs);
  return out;
}

Eigen::MatrixXd sample_prior(const RunConfig& cfg, const EnergyModel& prior, int n,
                             std::optional<int> label, const Rng& rng) {
  const DiffusionSchedule sched = cfg.train.schedule();
  if (!label) return synthesize(prior, sched, cfg.train.langevin, n, rng);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(prior.num_classes());
  if (*label < 0 || *label >= prior.num_classes())
    throw std::out_of_range("label " + std::to_string(*label) + " outside [0, K)");
  y(*label) = 1.0;
  return synthesize_controlled(prior, y, sched, cfg.train.langevin, n, rng);
}

Rng eval_stream(const RunConfig& cfg, std::uint64_t which) {
  return Rng(cfg.seed).split(kEvalStream).split(which);
}

std::vector<std::vector<std::string>> sentence_words(const std::vector<std::vector<int>>& ids,
                                                     const Vocabulary& vocab) {
  std::vector<std::vector<std::string>> out;
  out.reserve(ids.size());
  for (const auto& s : ids) {
    std::vector<std::string> w;
    for (int id : s) {
      if (id == kEosId) break;
      w.push_back(vocab.token(id));
    }
    out.push_back(std::move(w));
  }
  return out;
}

double reconstruction_accuracy(const Encoder& enc, const Decoder& dec,
                               const ObservationBatch& data) {
  const Eigen::MatrixXd mu = enc.posterior(data).mu;
  Rng unused(0);
  const ObservationBatch rec = dec.generate(mu, GenerationMode::kGreedy, unused);
  long hit = 0, total = 0;
  for (std::size_t j = 0; j < data.tokens.size(); ++j) {
    const auto& ref = data.tokens[j];
    const auto& hyp = rec.tokens[j];
    for (std::size_t i = 0; i < ref.size(); ++i) {
      ++total;
      if (i < hyp.size() && hyp[i] == ref[i]) ++hit;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

EvalReport evaluate(const RunConfig& cfg, Models& models, const RunData& data) {
  EvalReport report(cfg.seed, hash_hex(cfg.hash()));
  const DiffusionSchedule sched = cfg.train.schedule();
  const EnergyModel& prior = *models.prior;
  const Encoder& enc = *models.encoder;
  const Decoder& dec = *models.decoder;
  using nlohmann::json;

  const Eigen::Index n_all = data.obs.size();
  const Eigen::MatrixXd means = [&] {
    Eigen::MatrixXd m(cfg.train.latent_dim, n_all);
    constexpr Eigen::Index kChunk = 1000;
    for (Eigen::Index b = 0; b < n_all; b += kChunk) {
      const Eigen::Index n = std::min(kChunk, n_all - b);
      std::vector<int> idx(n);
      for (Eigen::Index i = 0; i < n; ++i) idx[i] = static_cast<int>(b + i);
      m.middleCols(b, n) = enc.posterior(data.obs.select(idx)).mu;
    }
    return m;
  }();

  if (!data.labels.empty()) {
    const std::uint64_t seed = eval_stream(cfg, 2).next_u64();
    const KMeansResult km = kmeans_assign(means, cfg.train.num_classes, seed);
    report.add("homogeneity", homogeneity(data.labels, km.labels),
               json{{"clusters", cfg.train.num_classes}, {"points", n_all}}.dump());
  }
  report.add("mutual_information", corpus_mutual_information(prior, enc, sched, data.obs),
             json{{"points", n_all}}.dump());

  if (!data.obs.is_sequence()) {
    const Eigen::MatrixXd z = sample_prior(cfg, prior, cfg.eval.n_samples, {}, eval_stream(cfg, 0));
    Rng unused(0);
    const Eigen::MatrixXd x = dec.generate(z, GenerationMode::kGreedy, unused).points;
    const double radius = default_radius(cfg);
    const ModeCoverage cov = mode_coverage(x, data.centers, radius);
    report.add("mode_coverage", cov.covered,
               json{{"samples", cfg.eval.n_samples},
                    {"radius", radius},
                    {"modes", data.centers.cols()},
                    {"histogram", cov.histogram}}
                   .dump());
  } else {
    const Vocabulary& vocab = *data.vocab;
    report.add("reconstruction_accuracy", reconstruction_accuracy(enc, dec, data.obs),
               json{{"decoding", "greedy"}, {"sentences", n_all}}.dump());
    const Eigen::MatrixXd z = sample_prior(cfg, prior, cfg.eval.n_samples, {}, eval_stream(cfg, 0));
    Rng gen = eval_stream(cfg, 4);
    const ObservationBatch gen_text = dec.generate(z, GenerationMode::kGreedy, gen);
    const auto refs = sentence_words(data.obs.tokens, vocab);
    const auto hyps = sentence_words(gen_text.tokens, vocab);
    report.add("bleu", bleu(refs, hyps), json{{"samples", cfg.eval.n_samples}, {"max_n", 4}}.dump());
    report.add("word_kl", word_kl(refs, hyps), json{{"samples", cfg.eval.n_samples}}.dump());
  }

  const int items = static_cast<int>(std::min<Eigen::Index>(cfg.eval.nll_items, n_all));
  if (items > 0 && cfg.eval.nll_samples > 0) {
    const ImportanceSettings is{cfg.eval.nll_samples, cfg.eval.partition_samples};
    const Rng root = eval_stream(cfg, 3);
    double nll = 0.0, elbo_sum = 0.0;
    for (int i = 0; i < items; ++i) {
      const ObservationBatch xi = data.obs.select({i});
      const Eigen::RowVectorXd logw =
          log_importance_weights(enc, dec, prior, sched, xi, is, root.split(i));
      const double m = logw.maxCoeff();
      nll -= m + std::log((logw.array() - m).exp().mean());
      elbo_sum += logw.mean();
    }
    const std::string settings = json{{"importance_samples", is.samples},
                                      {"partition_samples", is.partition_samples},
                                      {"items", items}}
                                     .dump();
    report.add("nll", nll / items, settings);
    report.add("elbo", elbo_sum / items, settings);
  }
  return report;
}

}  // namespace ldebm
