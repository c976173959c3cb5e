#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldebm/data.hpp"
#include "ldebm/training.hpp"

namespace ldebm {

struct DataSpec {
  std::string kind = "gaussian_grid";  // gaussian_grid | pinwheel | corpus
  int n = 10000;
  int arms = 10;
  std::string corpus;  // path, for kind = corpus
  GaussianGridParams grid;
  PinwheelParams pinwheel;
};

struct EvalSpec {
  int n_samples = 10000;          // prior samples for coverage
  double coverage_radius = 0.0;   // 0 picks 3 component standard deviations
  int nll_samples = 500;
  int partition_samples = 1000;
  int nll_items = 100;            // observations scored by nll/elbo
};

/// Everything a run needs; reproducible from (RunConfig, code version).
struct RunConfig {
  std::string preset = "gaussian_grid";
  DataSpec data;
  TrainingConfig train;
  ModalitySpec modality;
  EvalSpec eval;
  std::string out_dir = "out";
  long max_steps = 0;  // 0 = run all epochs
  std::uint64_t seed = 0;

  /// Canonical INI text listing every key.
  std::string to_ini() const;
  /// FNV-1a of to_ini().
  std::uint64_t hash() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses INI text (sections, key = value) and applies `section.key=value`
/// overrides on top. `[run] preset` picks the defaults the rest refines.
RunConfig parse_run_config(const std::string& ini_text,
                           const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

}  // namespace ldebm
