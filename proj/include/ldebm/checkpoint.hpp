#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "ldebm/config.hpp"
#include "ldebm/corpus.hpp"
#include "ldebm/training.hpp"

namespace ldebm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes every model parameter plus the manifest (config, schedule, dims,
/// vocabulary, progress). Layout is described in docs/checkpoint.md.
void save_checkpoint(const std::string& path, const RunConfig& cfg, const Models& models,
                     const Vocabulary* vocab, long step, int epoch);

struct LoadedCheckpoint {
  RunConfig config;
  std::optional<Vocabulary> vocab;
  Models models;
  long step = 0;
  int epoch = 0;
  std::uint64_t config_hash = 0;
};

/// Reads and validates a checkpoint against its embedded config before any
/// parameter is used; throws CheckpointError on any mismatch.
LoadedCheckpoint load_checkpoint(const std::string& path);

/// The raw file bytes of a checkpoint (handy for bit-identity checks).
std::string read_file_bytes(const std::string& path);

}  // namespace ldebm
