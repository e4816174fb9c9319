#include "missfuse/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "missfuse/errors.hpp"
#include "missfuse/rng.hpp"

namespace missfuse {

namespace {

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + value + "'");
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + value +
                      "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

template <class T, class Fn>
std::vector<T> parse_list(const std::string& key, const std::string& value,
                          Fn parse_one) {
  std::vector<T> out;
  std::istringstream is(value);
  std::string part;
  while (std::getline(is, part, ',')) {
    if (!part.empty()) out.push_back(parse_one(key, part));
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    if constexpr (std::is_same_v<T, double>) {
      os << fmt_double(v[i]);
    } else {
      os << v[i];
    }
  }
  return os.str();
}

}  // namespace

void RunConfig::apply_kv(const std::string& key, const std::string& value) {
  // top level
  if (key == "seed") {
    seed = parse_u64(key, value);
  } else if (key == "out_dir") {
    out_dir = value;
  } else if (key == "disable_pra") {
    disable_pra = parse_bool(key, value);
  } else if (key == "disable_uapoe_variance") {
    disable_uapoe_variance = parse_bool(key, value);
  } else if (key == "deterministic_inference") {
    deterministic_inference = parse_bool(key, value);
  } else if (key == "literal_attention") {
    literal_attention = parse_bool(key, value);
  } else if (key == "vector_gate") {
    vector_gate = parse_bool(key, value);
    // gen.
  } else if (key == "gen.num_classes") {
    gen.num_classes = parse_int(key, value);
  } else if (key == "gen.num_modalities") {
    gen.num_modalities = parse_int(key, value);
  } else if (key == "gen.latent_dim") {
    gen.latent_dim = parse_int(key, value);
  } else if (key == "gen.modality_dims") {
    gen.modality_dims = parse_list<int>(key, value, parse_int);
  } else if (key == "gen.separation") {
    gen.separation = parse_double(key, value);
  } else if (key == "gen.noise_std") {
    gen.noise_std = parse_double(key, value);
  } else if (key == "gen.subset_probs") {
    gen.subset_probs = parse_list<double>(key, value, parse_double);
  } else if (key == "gen.split_ratios") {
    gen.split_ratios = parse_list<double>(key, value, parse_double);
  } else if (key == "gen.n_total") {
    gen.n_total = parse_int(key, value);
  } else if (key == "gen.seed") {
    gen.seed = parse_u64(key, value);
    // train.
  } else if (key == "train.lr") {
    train.lr = parse_double(key, value);
  } else if (key == "train.warmup_epochs") {
    train.warmup_epochs = parse_int(key, value);
  } else if (key == "train.max_epochs") {
    train.max_epochs = parse_int(key, value);
  } else if (key == "train.patience") {
    train.patience = parse_int(key, value);
  } else if (key == "train.batch_size") {
    train.batch_size = parse_int(key, value);
  } else if (key == "train.beta") {
    train.beta = parse_double(key, value);
  } else if (key == "train.mc_samples") {
    train.mc_samples = parse_int(key, value);
  } else if (key == "train.mc_during_training") {
    train.mc_during_training = parse_bool(key, value);
  } else if (key == "train.seed") {
    train.seed = parse_u64(key, value);
  } else if (key == "train.precision") {
    train.precision = value;
    // eval.
  } else if (key == "eval.mc_samples") {
    eval.mc_samples = parse_int(key, value);
  } else if (key == "eval.seeds") {
    eval.seeds = parse_list<uint64_t>(key, value, parse_u64);
    // model.
  } else if (key == "model.feat_dim") {
    feat_dim = parse_int(key, value);
  } else if (key == "model.latent_dim") {
    latent_dim = parse_int(key, value);
  } else if (key == "model.heads") {
    heads = parse_int(key, value);
  } else if (key == "model.encoder_hidden") {
    encoder_hidden = parse_int(key, value);
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

void RunConfig::finalize_seeds() {
  Rng root(seed);
  if (gen.seed == 0) gen.seed = root.child("gen").origin();
  if (train.seed == 0) train.seed = root.child("train").origin();
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.num_modalities = gen.num_modalities;
  mc.input_dims = gen.modality_dims;
  mc.num_classes = gen.num_classes;
  mc.feat_dim = feat_dim;
  mc.latent_dim = latent_dim;
  mc.heads = heads;
  mc.encoder_hidden = encoder_hidden;
  mc.disable_pra = disable_pra;
  mc.literal_attention = literal_attention;
  mc.vector_gate = vector_gate;
  mc.fixed_unit_variance = disable_uapoe_variance;
  mc.deterministic_inference = deterministic_inference;
  return mc;
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "seed=" << seed << "\n";
  os << "out_dir=" << out_dir << "\n";
  os << "disable_pra=" << disable_pra << "\n";
  os << "disable_uapoe_variance=" << disable_uapoe_variance << "\n";
  os << "deterministic_inference=" << deterministic_inference << "\n";
  os << "literal_attention=" << literal_attention << "\n";
  os << "vector_gate=" << vector_gate << "\n";
  os << "gen.num_classes=" << gen.num_classes << "\n";
  os << "gen.num_modalities=" << gen.num_modalities << "\n";
  os << "gen.latent_dim=" << gen.latent_dim << "\n";
  os << "gen.modality_dims=" << join(gen.modality_dims) << "\n";
  os << "gen.separation=" << fmt_double(gen.separation) << "\n";
  os << "gen.noise_std=" << fmt_double(gen.noise_std) << "\n";
  os << "gen.subset_probs=" << join(gen.subset_probs) << "\n";
  os << "gen.split_ratios=" << join(gen.split_ratios) << "\n";
  os << "gen.n_total=" << gen.n_total << "\n";
  os << "gen.seed=" << gen.seed << "\n";
  os << "train.lr=" << fmt_double(train.lr) << "\n";
  os << "train.warmup_epochs=" << train.warmup_epochs << "\n";
  os << "train.max_epochs=" << train.max_epochs << "\n";
  os << "train.patience=" << train.patience << "\n";
  os << "train.batch_size=" << train.batch_size << "\n";
  os << "train.beta=" << fmt_double(train.beta) << "\n";
  os << "train.mc_samples=" << train.mc_samples << "\n";
  os << "train.mc_during_training=" << train.mc_during_training << "\n";
  os << "train.seed=" << train.seed << "\n";
  os << "train.precision=" << train.precision << "\n";
  os << "eval.mc_samples=" << eval.mc_samples << "\n";
  os << "eval.seeds=" << join(eval.seeds) << "\n";
  os << "model.feat_dim=" << feat_dim << "\n";
  os << "model.latent_dim=" << latent_dim << "\n";
  os << "model.heads=" << heads << "\n";
  os << "model.encoder_hidden=" << encoder_hidden << "\n";
  return os.str();
}

void apply_config_text(RunConfig& cfg, const std::string& text,
                       const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ParseError(origin + " line " + std::to_string(line_no) +
                       ": expected key=value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    try {
      cfg.apply_kv(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + " line " + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), {});
  RunConfig cfg;
  apply_config_text(cfg, text, path);
  return cfg;
}

}  // namespace missfuse
