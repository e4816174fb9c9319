#pragma once

// Command implementations behind the CLI, reusable from the test suites.
// Every command is deterministic given its configuration and seed; primary
// outputs contain no timestamps.

#include <iosfwd>
#include <string>
#include <vector>

#include "missfuse/config.hpp"

namespace missfuse::cli {

int cmd_generate(const RunConfig& cfg);

int cmd_train(const RunConfig& cfg, const std::string& cohort_base);

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& cohort_base);

int cmd_verify(const RunConfig& cfg, bool inject_fault);

int cmd_ablate(const RunConfig& cfg, int num_seeds);

// ---- benchmark machinery shared by cmd_ablate and the acceptance suite ----

struct VariantResult {
  std::string name;
  std::vector<double> avg_acc;  // per training seed, averaged over subsets
  std::vector<double> avg_macro_f1;
  std::vector<double> avg_auc;
};

struct BenchmarkResult {
  std::vector<VariantResult> variants;  // full, no_pra, no_uapoe, no_mc
  std::vector<int> sweep_draws;         // Monte Carlo sweep, full model
  std::vector<std::vector<double>> sweep_acc;  // [draw index][seed]
};

// Trains the full model and the three single-switch variants over
// `num_seeds` training seeds on the configured synthetic cohort, evaluating
// each over all non-empty subsets. with_mc_sweep re-evaluates the full
// models at several posterior draw counts.
BenchmarkResult run_benchmark(const RunConfig& cfg, int num_seeds,
                              bool with_mc_sweep, std::ostream* progress);

}  // namespace missfuse::cli
