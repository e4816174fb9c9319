#pragma once

// Synthetic multimodal cohort simulator. A class-conditioned gaussian latent
// is projected into per-modality views with modality-specific noise;
// training and validation masks follow a configurable long-tailed
// distribution over the non-empty subsets, while the test split is fully
// observed so the evaluation harness can re-mask it to any subset.

#include <cstdint>
#include <string>
#include <vector>

#include "missfuse/types.hpp"

namespace missfuse {

struct GenConfig {
  int num_classes = 3;
  int num_modalities = 4;
  int latent_dim = 16;
  std::vector<int> modality_dims = {8, 32, 32, 32};
  double separation = 3.0;
  double noise_std = 1.0;
  // Probability of each non-empty observed subset, indexed by mask bits - 1
  // (modality m <-> bit 1 << m). Empty selects the built-in default.
  std::vector<double> subset_probs;
  std::vector<double> split_ratios = {8.0 / 11, 1.0 / 11, 2.0 / 11};
  int n_total = 2750;
  uint64_t seed = 0;  // 0 lets the run config derive it from the root seed

  bool operator==(const GenConfig&) const = default;
  void validate() const;
  // Config value or the built-in default when unset.
  std::vector<double> effective_subset_probs() const;
};

struct Cohort {
  GenConfig config;
  std::vector<Sample> train, val, test;

  bool operator==(const Cohort&) const = default;
};

Cohort generate(const GenConfig& config);

// Fraction of train+val samples observing each modality.
std::vector<double> availability_rates(const Cohort& cohort);

// Writes <base>.manifest (key=value provenance) and <base>.tsv (one row per
// sample, empty feature fields for missing modalities). The round trip
// read_cohort(write_cohort(c)) == c is exact.
void write_cohort(const Cohort& cohort, const std::string& base_path);
Cohort read_cohort(const std::string& base_path);

}  // namespace missfuse
