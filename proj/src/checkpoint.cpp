#include "ldebm/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ldebm {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'L', 'D', 'E', 'B', 'M', 'C', 'K', 'P'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw CheckpointError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

ModalitySpec modality_for(const RunConfig& cfg, const std::optional<Vocabulary>& vocab) {
  ModalitySpec m = cfg.modality;
  if (m.kind == ModalitySpec::Kind::kTokens) {
    if (!vocab) throw CheckpointError("token model checkpoint has no vocabulary");
    m.vocab_size = vocab->size();
  }
  return m;
}

}  // namespace

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const std::string& path, const RunConfig& cfg, const Models& models,
                     const Vocabulary* vocab, long step, int epoch) {
  const ParameterList params = models.parameters();
  const DiffusionSchedule sched = cfg.train.schedule();

  json manifest;
  manifest["config"] = cfg.to_ini();
  manifest["config_hash"] = hex64(cfg.hash());
  manifest["seed"] = cfg.seed;
  manifest["schedule"] = {{"num_steps", sched.num_steps()},
                          {"sigma_sq", sched.sigma_sq_values()}};
  manifest["dims"] = {{"latent_dim", cfg.train.latent_dim},
                      {"num_classes", cfg.train.num_classes},
                      {"modality", cfg.modality.kind == ModalitySpec::Kind::kTokens ? "tokens"
                                                                                    : "points"},
                      {"vocab_size", vocab ? vocab->size() : 0}};
  if (vocab) {
    manifest["vocab_hash"] = hex64(vocab->hash());
    manifest["vocab"] = vocab->tokens();
  }
  manifest["step"] = step;
  manifest["epoch"] = epoch;
  json blocks = json::array();
  for (const Parameter* p : params)
    blocks.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  manifest["blocks"] = blocks;
  const std::string text = manifest.dump();

  std::string out(kMagic, kMagic + 8);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const Parameter* p : params)
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c)
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(p->value(r, c))));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot write checkpoint " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("short write to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const std::string in = read_file_bytes(path);
  if (in.size() < 16 || std::memcmp(in.data(), kMagic, 8) != 0)
    throw CheckpointError(path + " is not a checkpoint");
  std::size_t pos = 8;
  const std::uint32_t version = get_u32(in, pos);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t len = get_u32(in, pos);
  if (pos + len > in.size()) throw CheckpointError("checkpoint manifest truncated");
  json manifest;
  try {
    manifest = json::parse(in.substr(pos, len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  }
  pos += len;

  LoadedCheckpoint out;
  try {
    out.config = parse_run_config(manifest.at("config").get<std::string>());
    if (hex64(out.config.hash()) != manifest.at("config_hash").get<std::string>())
      throw CheckpointError("config hash does not match the embedded config");
    out.config_hash = out.config.hash();

    const DiffusionSchedule sched = out.config.train.schedule();
    const auto stored = manifest.at("schedule").at("sigma_sq").get<std::vector<double>>();
    if (stored != sched.sigma_sq_values())
      throw CheckpointError("embedded schedule disagrees with the config");
    const json& dims = manifest.at("dims");
    if (dims.at("latent_dim").get<int>() != out.config.train.latent_dim ||
        dims.at("num_classes").get<int>() != out.config.train.num_classes)
      throw CheckpointError("embedded dims disagree with the config");

    if (manifest.contains("vocab")) {
      out.vocab = Vocabulary::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
      if (hex64(out.vocab->hash()) != manifest.at("vocab_hash").get<std::string>())
        throw CheckpointError("vocabulary hash mismatch");
      if (dims.at("vocab_size").get<int>() != out.vocab->size())
        throw CheckpointError("vocabulary size mismatch");
    }
    out.step = manifest.at("step").get<long>();
    out.epoch = manifest.at("epoch").get<int>();

    out.models = build_models(out.config.train, modality_for(out.config, out.vocab));
    const ParameterList params = out.models.parameters();
    const json& blocks = manifest.at("blocks");
    if (blocks.size() != params.size())
      throw CheckpointError("checkpoint holds " + std::to_string(blocks.size()) +
                            " blocks, model has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const json& b = blocks[i];
      Parameter& p = *params[i];
      if (b.at("name").get<std::string>() != p.name || b.at("rows").get<long>() != p.value.rows() ||
          b.at("cols").get<long>() != p.value.cols())
        throw CheckpointError("block " + b.at("name").get<std::string>() +
                              " does not match model parameter " + p.name);
    }
    for (Parameter* p : params)
      for (Eigen::Index r = 0; r < p->value.rows(); ++r)
        for (Eigen::Index c = 0; c < p->value.cols(); ++c)
          p->value(r, c) = static_cast<double>(std::bit_cast<float>(get_u32(in, pos)));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("embedded config invalid: ") + e.what());
  }
  if (pos != in.size()) throw CheckpointError("trailing bytes after parameter blocks");
  return out;
}

}  // namespace ldebm
