#pragma once

// Self-contained verification checks behind `missfuse verify`, also reused
// by the acceptance suite. Every check validates an implementation against
// an independent route: numerical integration on a grid, Monte Carlo
// estimation, or central finite differences.

#include <cstdint>
#include <string>
#include <vector>

namespace missfuse::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  double stat = 0.0;  // worst observed error or statistic
  std::string detail;
};

// Fused gaussian moments vs. the normalized pointwise product of densities
// on a grid over [-10, 10] with step 1e-3. Tolerance 1e-3 on mean and
// variance.
CheckResult poe_grid_check(int num_configs, uint64_t seed);

// Closed-form KL to the standard normal prior vs. a Monte Carlo estimate,
// within 3 standard errors.
CheckResult kl_mc_check(int num_posteriors, int num_samples, uint64_t seed);

// Over random samples and every non-empty subset (M = 4): attention mass on
// missing-modality slots is exactly zero, and overwriting a missing
// modality's placeholder features moves no output logit by more than 1e-12.
CheckResult masking_soundness_check(int num_samples, uint64_t seed);

// Full-objective gradient check (64-bit) at small dimensions; max relative
// error 1e-4 across all parameters for each seed.
CheckResult gradient_fidelity_check(int num_seeds, uint64_t seed);

// The checks run by `missfuse verify`, sized to finish within a minute.
std::vector<CheckResult> run_default_checks(uint64_t seed);

}  // namespace missfuse::verify
