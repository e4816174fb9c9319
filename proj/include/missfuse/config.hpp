#pragma once

// Flat key=value run configuration with section prefixes (gen., train.,
// eval., model.) plus top-level ablation switches. Precedence: built-in
// defaults, then config file, then command-line flags; the MISSFUSE_SEED
// environment variable overrides the root seed last.

#include <cstdint>
#include <string>
#include <vector>

#include "missfuse/datagen.hpp"
#include "missfuse/model.hpp"
#include "missfuse/training.hpp"

namespace missfuse {

struct EvalConfig {
  int mc_samples = 0;  // 0 -> train.mc_samples
  std::vector<uint64_t> seeds = {1, 2, 3};
};

struct RunConfig {
  GenConfig gen;
  TrainConfig train;
  EvalConfig eval;

  // shared model dimensions
  int feat_dim = 64;
  int latent_dim = 0;      // 0 -> feat_dim
  int heads = 4;
  int encoder_hidden = 0;  // 0 -> 2 * feat_dim

  // ablation switches
  bool disable_pra = false;
  bool disable_uapoe_variance = false;  // fixed unit expert variance
  bool deterministic_inference = false;  // classify at the posterior mean
  bool literal_attention = false;
  bool vector_gate = false;

  std::string out_dir = "out";
  uint64_t seed = 1337;  // root seed

  // Applies one key=value assignment; unknown keys raise ConfigError.
  void apply_kv(const std::string& key, const std::string& value);

  // Fills unset per-stage seeds from the root seed.
  void finalize_seeds();

  ModelConfig model_config() const;

  std::string serialize() const;
};

RunConfig load_run_config(const std::string& path);
void apply_config_text(RunConfig& cfg, const std::string& text,
                       const std::string& origin);

}  // namespace missfuse
