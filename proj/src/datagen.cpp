#include "missfuse/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "missfuse/errors.hpp"
#include "missfuse/rng.hpp"

namespace missfuse {

namespace {

// Tabular-like modality 0 is much cleaner; later modalities are noisier, so
// the experts have genuinely different reliabilities to learn.
double noise_scale(int modality) {
  return modality == 0 ? 0.15 : 0.6 + 0.4 * modality;
}

// The second half of the latent carries no class signal but is amplified
// into the image-like views, so views correlate strongly within class and
// the best fusion weights depend on which co-modalities are present.
double nuisance_gain(int modality) { return modality == 0 ? 1.0 : 4.0; }

// floor + largest remainder, preserving the total exactly
std::vector<int> apportion(const std::vector<double>& weights, int total) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> counts(weights.size());
  std::vector<std::pair<double, size_t>> remainders;
  int assigned = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] / wsum * total;
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    remainders.push_back({exact - counts[i], i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < total - assigned; ++k) {
    counts[remainders[k % remainders.size()].second] += 1;
  }
  return counts;
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

void GenConfig::validate() const {
  if (num_classes < 2) throw ConfigError("gen.num_classes must be >= 2");
  if (num_modalities < 1 || num_modalities > 8) {
    throw ConfigError("gen.num_modalities must be in [1, 8]");
  }
  if (static_cast<int>(modality_dims.size()) != num_modalities) {
    throw ConfigError("gen.modality_dims size must equal num_modalities");
  }
  for (int d : modality_dims) {
    if (d < 1) throw ConfigError("gen.modality_dims entries must be >= 1");
  }
  if (latent_dim < 1) throw ConfigError("gen.latent_dim must be >= 1");
  if (noise_std < 0) throw ConfigError("gen.noise_std must be >= 0");
  if (n_total < num_classes) throw ConfigError("gen.n_total too small");
  if (split_ratios.size() != 3) {
    throw ConfigError("gen.split_ratios must have 3 entries (train, val, test)");
  }
  double ratio_sum = 0;
  for (double r : split_ratios) {
    if (r <= 0) throw ConfigError("gen.split_ratios entries must be > 0");
    ratio_sum += r;
  }
  if (std::abs(ratio_sum - 1.0) > 1e-9) {
    throw ConfigError("gen.split_ratios must sum to 1");
  }
  const auto probs = effective_subset_probs();
  const size_t expected = (1u << num_modalities) - 1;
  if (probs.size() != expected) {
    throw ConfigError("gen.subset_probs must have " + std::to_string(expected) +
                      " entries");
  }
  double prob_sum = 0;
  for (double p : probs) {
    if (p < 0) throw ConfigError("gen.subset_probs entries must be >= 0");
    prob_sum += p;
  }
  if (std::abs(prob_sum - 1.0) > 1e-9) {
    throw ConfigError("gen.subset_probs must sum to 1");
  }
  if (probs.back() <= 0) {
    throw ConfigError("gen.subset_probs must give the full mask nonzero mass");
  }
}

std::vector<double> GenConfig::effective_subset_probs() const {
  if (!subset_probs.empty()) return subset_probs;
  if (num_modalities == 4) {
    // long-tailed: tabular-only dominates, tabular+one view common,
    // image-only subsets and full observation in the tail
    // (indexed by mask bits - 1)
    return {0.32, 0.04, 0.12,  0.04, 0.11, 0.02, 0.045, 0.04,
            0.10, 0.02, 0.04,  0.02, 0.035, 0.02, 0.03};
  }
  const size_t n = (1u << num_modalities) - 1;
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

Cohort generate(const GenConfig& config) {
  config.validate();
  Cohort cohort;
  cohort.config = config;

  Rng root(config.seed);
  Rng center_rng = root.child("centers");
  Rng proj_rng = root.child("projections");
  Rng latent_rng = root.child("latents");
  Rng noise_rng = root.child("noise");
  Rng mask_rng = root.child("masks");
  Rng shuffle_rng = root.child("shuffle");

  const int d_u = config.latent_dim;
  const int d_signal = (d_u + 1) / 2;  // class centers live here
  std::vector<std::vector<double>> centers(config.num_classes,
                                           std::vector<double>(d_u, 0.0));
  const double center_scale =
      config.separation / std::sqrt(static_cast<double>(d_signal));
  for (auto& c : centers) {
    for (int j = 0; j < d_signal; ++j) c[j] = center_rng.normal() * center_scale;
  }

  // fixed random projection per modality; nuisance latent columns amplified
  std::vector<std::vector<double>> proj(config.num_modalities);
  for (int m = 0; m < config.num_modalities; ++m) {
    proj[m].resize(static_cast<size_t>(config.modality_dims[m]) * d_u);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_u));
    for (int i = 0; i < config.modality_dims[m]; ++i) {
      for (int j = 0; j < d_u; ++j) {
        const double gain = j < d_signal ? 1.0 : nuisance_gain(m);
        proj[m][static_cast<size_t>(i) * d_u + j] =
            proj_rng.normal() * scale * gain;
      }
    }
  }

  const std::vector<int> class_counts =
      apportion(std::vector<double>(config.num_classes, 1.0), config.n_total);
  const std::vector<int> split_totals = apportion(config.split_ratios,
                                                  config.n_total);

  // per-class allocation to splits, matching both marginals
  std::vector<std::vector<int>> alloc(config.num_classes);
  std::vector<int> split_left = split_totals;
  for (int c = 0; c < config.num_classes; ++c) {
    const std::vector<double> weights(split_left.begin(), split_left.end());
    alloc[c] = apportion(weights, class_counts[c]);
    for (int s = 0; s < 3; ++s) split_left[s] -= alloc[c][s];
  }

  const auto probs = config.effective_subset_probs();
  auto draw_mask = [&]() {
    double u = mask_rng.uniform();
    for (size_t i = 0; i < probs.size(); ++i) {
      u -= probs[i];
      if (u < 0) {
        return ModalityMask::from_bits(static_cast<uint32_t>(i) + 1,
                                       config.num_modalities);
      }
    }
    return ModalityMask::all_observed(config.num_modalities);
  };

  auto make_sample = [&](int label, const ModalityMask& mask) {
    Sample s;
    s.label = label;
    s.mask = mask;
    std::vector<double> u(d_u);
    for (int i = 0; i < d_u; ++i) u[i] = centers[label][i] + latent_rng.normal();
    s.features.resize(config.num_modalities);
    for (int m = 0; m < config.num_modalities; ++m) {
      const int d_m = config.modality_dims[m];
      // noise draws are consumed for every modality so that a sample's
      // observed values do not depend on which other modalities are kept
      std::vector<float> view(d_m);
      const double sigma = config.noise_std * noise_scale(m);
      for (int i = 0; i < d_m; ++i) {
        double acc = 0;
        for (int j = 0; j < d_u; ++j) {
          acc += proj[m][static_cast<size_t>(i) * d_u + j] * u[j];
        }
        view[i] = static_cast<float>(acc + sigma * noise_rng.normal());
      }
      if (mask.observed(m)) s.features[m] = std::move(view);
    }
    return s;
  };

  for (int split = 0; split < 3; ++split) {
    std::vector<Sample>& dest = split == 0   ? cohort.train
                                : split == 1 ? cohort.val
                                             : cohort.test;
    for (int c = 0; c < config.num_classes; ++c) {
      for (int k = 0; k < alloc[c][split]; ++k) {
        const ModalityMask mask =
            split == 2 ? ModalityMask::all_observed(config.num_modalities)
                       : draw_mask();
        dest.push_back(make_sample(c, mask));
      }
    }
    shuffle_rng.shuffle(dest);
  }
  return cohort;
}

std::vector<double> availability_rates(const Cohort& cohort) {
  const int m_count = cohort.config.num_modalities;
  std::vector<double> rates(m_count, 0.0);
  int n = 0;
  for (const auto* split : {&cohort.train, &cohort.val}) {
    for (const auto& s : *split) {
      ++n;
      for (int m = 0; m < m_count; ++m) rates[m] += s.mask.observed(m);
    }
  }
  if (n > 0) {
    for (auto& r : rates) r /= n;
  }
  return rates;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt_double(v[i]);
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& f : split_fields(s, ',')) {
    if (!f.empty()) out.push_back(std::stoi(f));
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& f : split_fields(s, ',')) {
    if (!f.empty()) out.push_back(std::stod(f));
  }
  return out;
}

const char* split_name(int split) {
  return split == 0 ? "train" : split == 1 ? "val" : "test";
}

}  // namespace

void write_cohort(const Cohort& cohort, const std::string& base_path) {
  {
    std::ofstream manifest(base_path + ".manifest");
    if (!manifest) {
      throw DataError("cannot open for writing: " + base_path + ".manifest");
    }
    const auto& c = cohort.config;
    manifest << "format=missfuse-cohort-v1\n"
             << "classes=" << c.num_classes << "\n"
             << "modalities=" << c.num_modalities << "\n"
             << "latent_dim=" << c.latent_dim << "\n"
             << "modality_dims=" << join_ints(c.modality_dims) << "\n"
             << "separation=" << fmt_double(c.separation) << "\n"
             << "noise_std=" << fmt_double(c.noise_std) << "\n"
             << "subset_probs=" << join_doubles(c.subset_probs) << "\n"
             << "split_ratios=" << join_doubles(c.split_ratios) << "\n"
             << "n_total=" << c.n_total << "\n"
             << "seed=" << c.seed << "\n"
             << "count_train=" << cohort.train.size() << "\n"
             << "count_val=" << cohort.val.size() << "\n"
             << "count_test=" << cohort.test.size() << "\n";
  }

  std::ofstream table(base_path + ".tsv");
  if (!table) throw DataError("cannot open for writing: " + base_path + ".tsv");
  table << "id\tsplit\tlabel\tmask";
  for (int m = 0; m < cohort.config.num_modalities; ++m) {
    for (int j = 0; j < cohort.config.modality_dims[m]; ++j) {
      table << "\tm" << m << "_f" << j;
    }
  }
  table << "\n";

  int id = 0;
  for (int split = 0; split < 3; ++split) {
    const std::vector<Sample>& src = split == 0   ? cohort.train
                                     : split == 1 ? cohort.val
                                                  : cohort.test;
    for (const auto& s : src) {
      table << id++ << "\t" << split_name(split) << "\t" << s.label << "\t"
            << s.mask.to_string();
      for (int m = 0; m < cohort.config.num_modalities; ++m) {
        for (int j = 0; j < cohort.config.modality_dims[m]; ++j) {
          table << "\t";
          if (s.mask.observed(m)) table << fmt_float(s.features[m][j]);
        }
      }
      table << "\n";
    }
  }
}

Cohort read_cohort(const std::string& base_path) {
  Cohort cohort;
  GenConfig& c = cohort.config;
  size_t count_train = 0, count_val = 0, count_test = 0;

  {
    std::ifstream manifest(base_path + ".manifest");
    if (!manifest) throw DataError("cannot open: " + base_path + ".manifest");
    std::string line;
    int line_no = 0;
    bool format_seen = false;
    while (std::getline(manifest, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ParseError(base_path + ".manifest line " +
                         std::to_string(line_no) + ": expected key=value");
      }
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      try {
        if (key == "format") {
          if (value != "missfuse-cohort-v1") {
            throw ParseError("unsupported cohort format: " + value);
          }
          format_seen = true;
        } else if (key == "classes") {
          c.num_classes = std::stoi(value);
        } else if (key == "modalities") {
          c.num_modalities = std::stoi(value);
        } else if (key == "latent_dim") {
          c.latent_dim = std::stoi(value);
        } else if (key == "modality_dims") {
          c.modality_dims = parse_ints(value);
        } else if (key == "separation") {
          c.separation = std::stod(value);
        } else if (key == "noise_std") {
          c.noise_std = std::stod(value);
        } else if (key == "subset_probs") {
          c.subset_probs = parse_doubles(value);
        } else if (key == "split_ratios") {
          c.split_ratios = parse_doubles(value);
        } else if (key == "n_total") {
          c.n_total = std::stoi(value);
        } else if (key == "seed") {
          c.seed = std::stoull(value);
        } else if (key == "count_train") {
          count_train = std::stoul(value);
        } else if (key == "count_val") {
          count_val = std::stoul(value);
        } else if (key == "count_test") {
          count_test = std::stoul(value);
        } else {
          throw ParseError("unknown key: " + key);
        }
      } catch (const ParseError&) {
        throw;
      } catch (const std::exception& e) {
        throw ParseError(base_path + ".manifest line " +
                         std::to_string(line_no) + ", field " + key + ": " +
                         e.what());
      }
    }
    if (!format_seen) {
      throw ParseError(base_path + ".manifest: missing format line");
    }
  }

  std::ifstream table(base_path + ".tsv");
  if (!table) throw DataError("cannot open: " + base_path + ".tsv");
  std::string line;
  int line_no = 0;
  size_t expected_fields = 4;
  for (int d : c.modality_dims) expected_fields += d;
  while (std::getline(table, line)) {
    ++line_no;
    if (line_no == 1) continue;  // header
    if (line.empty()) continue;
    const auto fields = split_fields(line, '\t');
    if (fields.size() != expected_fields) {
      throw ParseError(base_path + ".tsv line " + std::to_string(line_no) +
                       ": expected " + std::to_string(expected_fields) +
                       " fields, got " + std::to_string(fields.size()));
    }
    Sample s;
    const std::string& split = fields[1];
    try {
      s.label = std::stoi(fields[2]);
    } catch (const std::exception&) {
      throw ParseError(base_path + ".tsv line " + std::to_string(line_no) +
                       ", field label: not an integer");
    }
    if (s.label < 0 || s.label >= c.num_classes) {
      throw ParseError(base_path + ".tsv line " + std::to_string(line_no) +
                       ": label out of range");
    }
    const std::string& mask_str = fields[3];
    if (static_cast<int>(mask_str.size()) != c.num_modalities) {
      throw ParseError(base_path + ".tsv line " + std::to_string(line_no) +
                       ", field mask: wrong length");
    }
    s.mask.bits.resize(c.num_modalities);
    for (int m = 0; m < c.num_modalities; ++m) {
      if (mask_str[m] != '0' && mask_str[m] != '1') {
        throw ParseError(base_path + ".tsv line " + std::to_string(line_no) +
                         ", field mask: invalid character");
      }
      s.mask.bits[m] = mask_str[m] == '1';
    }
    s.features.resize(c.num_modalities);
    size_t field_idx = 4;
    for (int m = 0; m < c.num_modalities; ++m) {
      const int d_m = c.modality_dims[m];
      if (s.mask.observed(m)) s.features[m].resize(d_m);
      for (int j = 0; j < d_m; ++j, ++field_idx) {
        const std::string& f = fields[field_idx];
        if (s.mask.observed(m)) {
          if (f.empty()) {
            throw ParseError(base_path + ".tsv line " +
                             std::to_string(line_no) + ", field " +
                             std::to_string(field_idx + 1) +
                             ": observed modality with empty value");
          }
          try {
            s.features[m][j] = std::stof(f);
          } catch (const std::exception&) {
            throw ParseError(base_path + ".tsv line " +
                             std::to_string(line_no) + ", field " +
                             std::to_string(field_idx + 1) +
                             ": not a number");
          }
        } else if (!f.empty()) {
          throw ParseError(base_path + ".tsv line " + std::to_string(line_no) +
                           ", field " + std::to_string(field_idx + 1) +
                           ": missing modality with non-empty value");
        }
      }
    }
    if (split == "train") {
      cohort.train.push_back(std::move(s));
    } else if (split == "val") {
      cohort.val.push_back(std::move(s));
    } else if (split == "test") {
      cohort.test.push_back(std::move(s));
    } else {
      throw ParseError(base_path + ".tsv line " + std::to_string(line_no) +
                       ", field split: unknown split '" + split + "'");
    }
  }
  if (cohort.train.size() != count_train || cohort.val.size() != count_val ||
      cohort.test.size() != count_test) {
    throw ParseError(base_path + ": row counts do not match manifest");
  }
  return cohort;
}

}  // namespace missfuse
