#include "ldebm/config.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace ldebm {

namespace {

namespace pt = boost::property_tree;

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(static_cast<int>(to_long(key, item)));
  }
  return out;
}

std::string int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
};

#define LDEBM_DOUBLE(member) \
  Field{[](const RunConfig& c) { return fmt(c.member); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }}
#define LDEBM_INT(member) \
  Field{[](const RunConfig& c) { return std::to_string(c.member); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { \
          c.member = static_cast<decltype(c.member)>(to_long(k, v)); }}
#define LDEBM_BOOL(member) \
  Field{[](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }}
#define LDEBM_STRING(member) \
  Field{[](const RunConfig& c) { return c.member; }, \
        [](RunConfig& c, const std::string&, const std::string& v) { c.member = v; }}

// Ordered (section, key) -> field; the order is the canonical INI layout.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"run.preset", LDEBM_STRING(preset)},
      {"run.seed", Field{[](const RunConfig& c) { return std::to_string(c.seed); },
                         [](RunConfig& c, const std::string& k, const std::string& v) {
                           c.seed = static_cast<std::uint64_t>(to_long(k, v));
                         }}},
      {"run.out_dir", LDEBM_STRING(out_dir)},
      {"run.max_steps", LDEBM_INT(max_steps)},
      {"data.kind", LDEBM_STRING(data.kind)},
      {"data.n", LDEBM_INT(data.n)},
      {"data.arms", LDEBM_INT(data.arms)},
      {"data.corpus", LDEBM_STRING(data.corpus)},
      {"data.grid_side", LDEBM_INT(data.grid.side)},
      {"data.grid_spacing", LDEBM_DOUBLE(data.grid.spacing)},
      {"data.grid_std", LDEBM_DOUBLE(data.grid.std)},
      {"data.pinwheel_radial_std", LDEBM_DOUBLE(data.pinwheel.radial_std)},
      {"data.pinwheel_tangential_std", LDEBM_DOUBLE(data.pinwheel.tangential_std)},
      {"data.pinwheel_radial_offset", LDEBM_DOUBLE(data.pinwheel.radial_offset)},
      {"data.pinwheel_rate", LDEBM_DOUBLE(data.pinwheel.rate)},
      {"model.latent_dim", LDEBM_INT(train.latent_dim)},
      {"model.num_classes", LDEBM_INT(train.num_classes)},
      {"model.hidden_dim", LDEBM_INT(train.energy.hidden_dim)},
      {"model.time_embed_dim", LDEBM_INT(train.energy.time_embed_dim)},
      {"model.num_res_blocks", LDEBM_INT(train.energy.num_res_blocks)},
      {"model.energy_scale", LDEBM_DOUBLE(train.energy_scale)},
      {"model.step_scaled_energy", LDEBM_BOOL(train.step_scaled_energy)},
      {"model.encoder_hidden",
       Field{[](const RunConfig& c) { return int_list(c.modality.hidden); },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               c.modality.hidden = to_int_list(k, v);
             }}},
      {"model.embed_dim", LDEBM_INT(modality.embed_dim)},
      {"model.rnn_hidden", LDEBM_INT(modality.hidden_dim)},
      {"schedule.num_steps", LDEBM_INT(train.num_steps)},
      {"schedule.sigma_sq_min", LDEBM_DOUBLE(train.sigma_sq_min)},
      {"schedule.sigma_sq_max", LDEBM_DOUBLE(train.sigma_sq_max)},
      {"langevin.n_steps", LDEBM_INT(train.langevin.n_steps)},
      {"langevin.b_sq", LDEBM_DOUBLE(train.langevin.b_sq)},
      {"langevin.with_noise", LDEBM_BOOL(train.langevin.with_noise)},
      {"langevin.indexing",
       Field{[](const RunConfig& c) {
               return std::string(c.train.langevin.indexing == StepIndexing::kNext ? "next"
                                                                                   : "current");
             },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               if (v == "next") c.train.langevin.indexing = StepIndexing::kNext;
               else if (v == "current") c.train.langevin.indexing = StepIndexing::kCurrent;
               else throw ConfigError(k + ": expected 'next' or 'current'");
             }}},
      {"train.lambda1", LDEBM_DOUBLE(train.lambda1)},
      {"train.lambda2", LDEBM_DOUBLE(train.lambda2)},
      {"train.lambda3", LDEBM_DOUBLE(train.lambda3)},
      {"train.encoder_mi_sign", LDEBM_DOUBLE(train.encoder_mi_sign)},
      {"train.geometric_clustering", LDEBM_BOOL(train.geometric_clustering)},
      {"train.partition_gradient", LDEBM_BOOL(train.partition_gradient)},
      {"train.partition_from_positive", LDEBM_BOOL(train.partition_from_positive)},
      {"train.partition_samples", LDEBM_INT(train.partition_samples)},
      {"train.lr_encdec", LDEBM_DOUBLE(train.lr_encdec)},
      {"train.lr_prior", LDEBM_DOUBLE(train.lr_prior)},
      {"train.adam_beta1", LDEBM_DOUBLE(train.adam_beta1)},
      {"train.adam_beta2", LDEBM_DOUBLE(train.adam_beta2)},
      {"train.lr_decay", LDEBM_DOUBLE(train.lr_decay)},
      {"train.weight_decay", LDEBM_DOUBLE(train.weight_decay)},
      {"train.recurrent_clip", LDEBM_DOUBLE(train.recurrent_clip)},
      {"train.batch_size", LDEBM_INT(train.batch_size)},
      {"train.epochs", LDEBM_INT(train.epochs)},
      {"train.recluster_every", LDEBM_INT(train.recluster_every)},
      {"eval.n_samples", LDEBM_INT(eval.n_samples)},
      {"eval.coverage_radius", LDEBM_DOUBLE(eval.coverage_radius)},
      {"eval.nll_samples", LDEBM_INT(eval.nll_samples)},
      {"eval.partition_samples", LDEBM_INT(eval.partition_samples)},
      {"eval.nll_items", LDEBM_INT(eval.nll_items)},
  };
  return table;
}

#undef LDEBM_DOUBLE
#undef LDEBM_INT
#undef LDEBM_BOOL
#undef LDEBM_STRING

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "gaussian_grid") {
    c.train = gaussian_grid_preset();
    c.data.kind = "gaussian_grid";
  } else if (name == "pinwheel") {
    c.train = pinwheel_preset();
    c.data.kind = "pinwheel";
  } else if (name == "toy_text") {
    c.train = toy_text_preset();
    c.data.kind = "corpus";
    c.modality.kind = ModalitySpec::Kind::kTokens;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

void apply_override(std::map<std::string, std::string>& kv, const std::string& ov) {
  const auto eq = ov.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + ov + "' is not section.key=value");
  const std::string key = ov.substr(0, eq);
  if (key.find('.') == std::string::npos)
    throw ConfigError("override key '" + key + "' needs a section");
  kv[key] = ov.substr(eq + 1);
}

}  // namespace

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, field] : fields()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << field.get(*this) << '\n';
  }
  return os.str();
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_ini()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunConfig parse_run_config(const std::string& ini_text,
                           const std::vector<std::string>& overrides) {
  pt::ptree tree;
  try {
    std::istringstream is(ini_text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  std::map<std::string, std::string> kv;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("key '" + section + "' outside a section");
    for (const auto& [key, value] : body) kv[section + "." + key] = value.data();
  }
  for (const auto& ov : overrides) apply_override(kv, ov);

  const auto preset = kv.find("run.preset");
  RunConfig cfg = preset_config(preset == kv.end() ? "gaussian_grid" : preset->second);
  std::map<std::string, const Field*> index;
  for (const auto& [key, field] : fields()) index[key] = &field;
  for (const auto& [key, value] : kv) {
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second->set(cfg, key, value);
  }
  cfg.train.seed = cfg.seed;
  if (cfg.data.kind == "corpus") cfg.modality.kind = ModalitySpec::Kind::kTokens;
  else if (cfg.data.kind == "gaussian_grid" || cfg.data.kind == "pinwheel")
    cfg.modality.kind = ModalitySpec::Kind::kPoints;
  else throw ConfigError("data.kind must be gaussian_grid, pinwheel or corpus");
  try {
    cfg.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

}  // namespace ldebm
