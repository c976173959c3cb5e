// ldebm: train, synthesize, eval and plot from a run config.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ldebm/checkpoint.hpp"
#include "ldebm/config.hpp"
#include "ldebm/data.hpp"
#include "ldebm/run.hpp"
#include "ldebm/sampler.hpp"
#include "ldebm/training.hpp"
#include "svg.hpp"

namespace {

using namespace ldebm;

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::optional<int> label;
  std::optional<int> n_samples;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("config_path", o.config, "Run config file");
  cmd->add_option("--config", o.config, "Run config file");
  cmd->add_option("--set", o.overrides, "Override, section.key=value (repeatable)");
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint to load");
  cmd->add_option("--label", o.label, "Symbol index for controlled synthesis");
  cmd->add_option("-n,--n-samples", o.n_samples, "Number of samples");
  cmd->add_option("--seed", o.seed, "Seed override");
  cmd->add_option("--out-dir", o.out_dir, "Output directory override");
}

std::vector<std::string> all_overrides(const Options& o) {
  std::vector<std::string> ov = o.overrides;
  if (o.seed) ov.push_back("run.seed=" + std::to_string(*o.seed));
  if (!o.out_dir.empty()) ov.push_back("run.out_dir=" + o.out_dir);
  if (o.n_samples) ov.push_back("eval.n_samples=" + std::to_string(*o.n_samples));
  return ov;
}

// Loaded model state plus the config it runs under.
struct Session {
  RunConfig cfg;
  LoadedCheckpoint ckpt;
};

Session open_checkpoint(const Options& o) {
  std::string path = o.checkpoint;
  if (path.empty()) {
    const std::string dir = !o.out_dir.empty() ? o.out_dir
                            : !o.config.empty() ? load_run_config(o.config).out_dir
                                                : RunConfig{}.out_dir;
    path = dir + "/checkpoint.ckpt";
  }
  if (!std::filesystem::exists(path)) throw CheckpointError("missing checkpoint " + path);
  Session s{RunConfig{}, load_checkpoint(path)};
  for (const std::string& ov : o.overrides) {
    const std::string section = ov.substr(0, ov.find('.'));
    if (section == "model" || section == "schedule" || section == "data")
      throw ConfigError("'" + ov + "' would change the trained model; retrain instead");
  }
  s.cfg = parse_run_config(s.ckpt.config.to_ini(), all_overrides(o));
  return s;
}

int cmd_train(const Options& o) {
  if (o.config.empty()) throw ConfigError("train needs a config file");
  const RunConfig cfg = load_run_config(o.config, all_overrides(o));
  std::cout << "training " << cfg.preset << " (" << artifact_tag(cfg) << ") into "
            << cfg.out_dir << "\n";
  const TrainOutcome r = run_training(cfg, cfg.out_dir, [](const StepDiagnostics& d) {
    if (d.step % 50 == 0)
      std::cout << "step " << d.step << " epoch " << d.epoch << " loss " << d.loss
                << " gap " << d.energy_gap << "\n";
  });
  std::ofstream(cfg.out_dir + "/config.ini") << "# " << artifact_tag(cfg) << "\n" << cfg.to_ini();
  std::cout << "done: " << r.steps << " steps, " << r.epochs << " epochs, " << r.checkpoint
            << "\n";
  return 0;
}

int cmd_synthesize(const Options& o) {
  Session s = open_checkpoint(o);
  const RunConfig& cfg = s.cfg;
  std::filesystem::create_directories(cfg.out_dir);
  const int n = cfg.eval.n_samples;
  const Eigen::MatrixXd z = sample_prior(cfg, *s.ckpt.models.prior, n, o.label, eval_stream(cfg, 0));
  Rng gen = eval_stream(cfg, 4);
  const ObservationBatch x = s.ckpt.models.decoder->generate(z, GenerationMode::kGreedy, gen);
  const std::string tag = artifact_tag(cfg) + (o.label ? " label=" + std::to_string(*o.label) : "");
  const std::vector<int> labels(n, o.label.value_or(-1));
  std::string path;
  if (!x.is_sequence()) {
    path = cfg.out_dir + "/samples.csv";
    write_points_csv(path, x.points, labels, tag);
    if (z.rows() == 2) write_points_csv(cfg.out_dir + "/samples_z0.csv", z, labels, tag);
  } else {
    path = cfg.out_dir + "/samples.txt";
    std::ofstream out(path);
    out << "# " << tag << "\n";
    for (const auto& s_ids : x.tokens) out << detokenize(s_ids, *s.ckpt.vocab) << "\n";
  }
  std::cout << "wrote " << n << " samples to " << path << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  Session s = open_checkpoint(o);
  const RunData data = load_run_data(s.cfg, s.ckpt.vocab);
  const EvalReport report = evaluate(s.cfg, s.ckpt.models, data);
  std::filesystem::create_directories(s.cfg.out_dir);
  const std::string path = s.cfg.out_dir + "/eval_report.json";
  std::ofstream(path) << report.to_json() << "\n";
  for (const auto& e : report.entries()) std::cout << e.name << " = " << e.value << "\n";
  std::cout << "report: " << path << "\n";
  return 0;
}

Eigen::MatrixXd first_two(const Eigen::MatrixXd& m) {
  if (m.rows() >= 2) return m.topRows(2);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2, m.cols());
  out.row(0) = m.row(0);
  return out;
}

int cmd_plot(const Options& o) {
  Session s = open_checkpoint(o);
  const RunConfig& cfg = s.cfg;
  const RunData data = load_run_data(cfg, s.ckpt.vocab);
  std::filesystem::create_directories(cfg.out_dir);
  const std::string tag = artifact_tag(cfg);
  const Eigen::Index n = std::min<Eigen::Index>(cfg.eval.n_samples, data.obs.size());
  std::vector<int> idx(n);
  for (Eigen::Index i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  const ObservationBatch sub = data.obs.select(idx);
  std::vector<int> sub_labels;
  for (int i : idx) sub_labels.push_back(data.labels.empty() ? -1 : data.labels[i]);

  const Eigen::MatrixXd post = s.ckpt.models.encoder->posterior(sub).mu;
  const Eigen::MatrixXd prior_z = sample_prior(cfg, *s.ckpt.models.prior, static_cast<int>(n), {},
                                               eval_stream(cfg, 0));
  const DiffusionSchedule sched = cfg.train.schedule();
  std::vector<int> prior_class(n);
  const Eigen::MatrixXd probs = classify_batch(*s.ckpt.models.prior, sched, prior_z);
  for (Eigen::Index j = 0; j < n; ++j) probs.col(j).maxCoeff(&prior_class[j]);

  std::vector<tools::Panel> panels;
  if (!sub.is_sequence()) {
    panels.push_back({"data", sub.points, sub_labels});
    write_points_csv(cfg.out_dir + "/plot_data.csv", sub.points, sub_labels, tag);
  }
  panels.push_back({"posterior z0", first_two(post), sub_labels});
  panels.push_back({"prior z0", first_two(prior_z), prior_class});
  write_points_csv(cfg.out_dir + "/plot_posterior_z0.csv", first_two(post), sub_labels, tag);
  write_points_csv(cfg.out_dir + "/plot_prior_z0.csv", first_two(prior_z), prior_class, tag);
  if (!sub.is_sequence()) {
    Rng unused(0);
    const Eigen::MatrixXd dec =
        s.ckpt.models.decoder->generate(prior_z, GenerationMode::kGreedy, unused).points;
    panels.push_back({"decoded samples", dec, prior_class});
    write_points_csv(cfg.out_dir + "/plot_decoded.csv", dec, prior_class, tag);
  }
  const std::string path = cfg.out_dir + "/panels.svg";
  tools::write_scatter_svg(path, panels, tag);
  std::cout << "wrote " << path << " and point CSVs\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent diffusion EBM: train, synthesize, eval, plot"};
  app.require_subcommand(1);
  Options o;
  CLI::App* train = app.add_subcommand("train", "Train a model from a config");
  CLI::App* synth = app.add_subcommand("synthesize", "Write prior samples from a checkpoint");
  CLI::App* eval = app.add_subcommand("eval", "Compute the evaluation report");
  CLI::App* plot = app.add_subcommand("plot", "Render scatter panels and point CSVs");
  for (CLI::App* c : {train, synth, eval, plot}) add_common(c, o);
  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(o);
    if (synth->parsed()) return cmd_synthesize(o);
    if (eval->parsed()) return cmd_eval(o);
    return cmd_plot(o);
  } catch (const ConfigError& e) {
    std::cerr << "ldebm: config error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "ldebm: checkpoint error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingError& e) {
    std::cerr << "ldebm: training aborted at step " << e.step << ": " << e.what() << "\n";
    return 4;
  } catch (const SamplerError& e) {
    std::cerr << "ldebm: sampler error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "ldebm: error: " << e.what() << "\n";
    return 1;
  }
}
