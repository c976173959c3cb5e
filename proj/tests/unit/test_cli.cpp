#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ldebm/checkpoint.hpp"
#include "ldebm/config.hpp"
#include "ldebm/run.hpp"

using namespace ldebm;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"(# small grid run
[run]
preset = gaussian_grid
seed = 4

[data]
n = 400
grid_side = 2

[model]
num_classes = 4
hidden_dim = 16
time_embed_dim = 8
num_res_blocks = 1
encoder_hidden = 16

[langevin]
n_steps = 5

[train]
batch_size = 16
epochs = 3
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ldebm_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string saved_checkpoint(const fs::path& dir) {
  const RunConfig cfg = parse_run_config(kSmall);
  const Models m = build_models(cfg.train, cfg.modality);
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(path, cfg, m, nullptr, 7, 2);
  return path;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config sections and overrides") {
    const RunConfig c = parse_run_config(kSmall, {"train.lambda2=0.5", "run.seed=9"});
    CHECK(c.seed == 9);
    CHECK(c.train.seed == 9);
    CHECK(c.train.num_classes == 4);
    CHECK(c.train.batch_size == 16);
    CHECK(c.train.lambda2 == 0.5);
    CHECK(c.data.n == 400);
    CHECK(c.train.langevin.n_steps == 5);
    CHECK(c.modality.kind == ModalitySpec::Kind::kPoints);
  }

  TEST_CASE("config errors") {
    CHECK_THROWS_AS(parse_run_config("[train]\nbogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[train]\nbatch_size = ten\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[train]\nbatch_size = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[run]\npreset = nope\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(kSmall, {"lambda1=2"}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(kSmall, {"train.lambda1"}), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/x.cfg"), ConfigError);
  }

  TEST_CASE("canonical text round-trips") {
    const RunConfig a = parse_run_config(kSmall, {"langevin.indexing=current"});
    const RunConfig b = parse_run_config(a.to_ini());
    CHECK(b.to_ini() == a.to_ini());
    CHECK(b.hash() == a.hash());
    CHECK(parse_run_config(kSmall).hash() != a.hash());
  }

  TEST_CASE("checkpoint round trip") {
    const fs::path dir = scratch("roundtrip");
    const RunConfig cfg = parse_run_config(kSmall);
    const Models m = build_models(cfg.train, cfg.modality);
    const std::string path = (dir / "m.ckpt").string();
    save_checkpoint(path, cfg, m, nullptr, 7, 2);
    const LoadedCheckpoint ck = load_checkpoint(path);
    CHECK(ck.step == 7);
    CHECK(ck.epoch == 2);
    CHECK(ck.config_hash == cfg.hash());
    CHECK(ck.config.to_ini() == cfg.to_ini());
    const ParameterList a = m.parameters(), b = ck.models.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]->name == b[i]->name);
      // parameters are stored as float32
      CHECK(b[i]->value.isApprox(a[i]->value.cast<float>().cast<double>(), 0.0));
    }
    // saving what was loaded reproduces the bytes
    const std::string again = (dir / "again.ckpt").string();
    save_checkpoint(again, ck.config, ck.models, nullptr, 7, 2);
    CHECK(read_file_bytes(again) == read_file_bytes(path));
  }

  TEST_CASE("corrupt checkpoints are rejected") {
    const fs::path dir = scratch("corrupt");
    const std::string path = saved_checkpoint(dir);
    const std::string good = read_file_bytes(path);
    const fs::path bad = dir / "bad.ckpt";

    std::string b = good;
    b[0] = 'X';
    write_bytes(bad, b);
    CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

    write_bytes(bad, good.substr(0, good.size() - 3));
    CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

    write_bytes(bad, good + "xx");
    CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

    b = good;
    b[8] = 9;  // version
    write_bytes(bad, b);
    CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

    // edited config text no longer matches its hash
    b = good;
    const auto at = b.find("batch_size = 16");
    REQUIRE(at != std::string::npos);
    b.replace(at, 15, "batch_size = 17");
    write_bytes(bad, b);
    CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

    CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), CheckpointError);
  }

  TEST_CASE("shape mismatch is rejected") {
    const fs::path dir = scratch("shape");
    const RunConfig cfg = parse_run_config(kSmall);
    const RunConfig wider = parse_run_config(kSmall, {"model.hidden_dim=24"});
    // manifest says hidden 16, blocks come from a hidden-24 model
    const Models m = build_models(wider.train, wider.modality);
    const std::string path = (dir / "m.ckpt").string();
    save_checkpoint(path, cfg, m, nullptr, 0, 0);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }

  TEST_CASE("50-step runs give bit-identical checkpoints") {
    const RunConfig cfg = parse_run_config(kSmall, {"run.max_steps=50"});
    const fs::path a = scratch("bit_a"), b = scratch("bit_b");
    const TrainOutcome oa = run_training(cfg, a.string());
    const TrainOutcome ob = run_training(cfg, b.string());
    CHECK(oa.steps == 50);
    CHECK(read_file_bytes(oa.checkpoint) == read_file_bytes(ob.checkpoint));
    const RunConfig other = parse_run_config(kSmall, {"run.max_steps=50", "run.seed=5"});
    const TrainOutcome oc = run_training(other, scratch("bit_c").string());
    CHECK(read_file_bytes(oc.checkpoint) != read_file_bytes(oa.checkpoint));
  }

  TEST_CASE("artifact tag") {
    const RunConfig c = parse_run_config(kSmall);
    CHECK(artifact_tag(c) == "seed=4 config_hash=" + hash_hex(c.hash()));
    CHECK(hash_hex(0xabcULL) == "0000000000000abc");
  }
}
