#include "missfuse/verify.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

#include "missfuse/grad_check.hpp"
#include "missfuse/model.hpp"
#include "missfuse/rng.hpp"
#include "missfuse/training.hpp"
#include "missfuse/uapoe.hpp"

namespace missfuse::verify {

namespace {

std::string fmt_stat(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

double log_normal_pdf(double x, double mu, double var) {
  const double d = x - mu;
  return -0.5 * (std::log(2.0 * 3.14159265358979323846 * var) + d * d / var);
}

}  // namespace

CheckResult poe_grid_check(int num_configs, uint64_t seed) {
  Rng rng(seed);
  constexpr double kLo = -10.0, kHi = 10.0, kStep = 1e-3;
  const int points = static_cast<int>((kHi - kLo) / kStep) + 1;

  double worst = 0.0;
  for (int cfg = 0; cfg < num_configs; ++cfg) {
    const int num_experts = 1 + rng.uniform_int(4);
    std::vector<GaussianExpert> experts(num_experts);
    for (auto& e : experts) {
      e.mu = {rng.uniform(-3.0, 3.0)};
      e.var = {std::exp(rng.uniform(-4.0, 4.0))};
    }
    const FusedPosterior fused = fuse(experts);

    // normalized product of densities, integrated on the grid
    std::vector<double> logf(points);
    double log_max = -1e300;
    for (int i = 0; i < points; ++i) {
      const double x = kLo + i * kStep;
      double lf = log_normal_pdf(x, 0.0, 1.0);  // prior
      for (const auto& e : experts) lf += log_normal_pdf(x, e.mu[0], e.var[0]);
      logf[i] = lf;
      log_max = std::max(log_max, lf);
    }
    double norm = 0.0, mean = 0.0;
    for (int i = 0; i < points; ++i) {
      const double f = std::exp(logf[i] - log_max);
      norm += f;
      mean += (kLo + i * kStep) * f;
    }
    mean /= norm;
    double var = 0.0;
    for (int i = 0; i < points; ++i) {
      const double x = kLo + i * kStep;
      var += (x - mean) * (x - mean) * std::exp(logf[i] - log_max);
    }
    var /= norm;

    worst = std::max(worst, std::abs(fused.mu[0] - mean));
    worst = std::max(worst, std::abs(fused.var[0] - var));
  }
  return CheckResult{"poe_grid_oracle", worst <= 1e-3, worst,
                     std::to_string(num_configs) + " configs, max |delta| " +
                         fmt_stat(worst)};
}

CheckResult kl_mc_check(int num_posteriors, int num_samples, uint64_t seed) {
  Rng rng(seed);
  double worst_z = 0.0;
  bool pass = true;
  for (int t = 0; t < num_posteriors; ++t) {
    const int dim = 1 + rng.uniform_int(4);
    FusedPosterior post;
    for (int d = 0; d < dim; ++d) {
      post.mu.push_back(rng.uniform(-2.0, 2.0));
      post.var.push_back(std::exp(rng.uniform(-2.0, 1.0)));
    }
    const double closed = kl_to_prior(post);

    double sum = 0.0, sum_sq = 0.0;
    for (int k = 0; k < num_samples; ++k) {
      double term = 0.0;
      for (int d = 0; d < dim; ++d) {
        const double s = post.mu[d] + std::sqrt(post.var[d]) * rng.normal();
        term += log_normal_pdf(s, post.mu[d], post.var[d]) -
                log_normal_pdf(s, 0.0, 1.0);
      }
      sum += term;
      sum_sq += term * term;
    }
    const double est = sum / num_samples;
    const double sample_var =
        (sum_sq - sum * sum / num_samples) / (num_samples - 1);
    const double se = std::sqrt(sample_var / num_samples);
    const double z = se > 0.0 ? std::abs(closed - est) / se
                              : (closed == est ? 0.0 : 1e9);
    worst_z = std::max(worst_z, z);
    pass = pass && z <= 3.0;
  }
  return CheckResult{"kl_mc_oracle", pass, worst_z,
                     std::to_string(num_posteriors) + " posteriors, worst z " +
                         fmt_stat(worst_z)};
}

CheckResult masking_soundness_check(int num_samples, uint64_t seed) {
  ModelConfig cfg;
  cfg.num_modalities = 4;
  cfg.input_dims = {6, 8, 8, 8};
  cfg.num_classes = 3;
  cfg.feat_dim = 16;
  cfg.heads = 4;

  Rng root(seed);
  auto params = make_model_params<double>(cfg);
  init_model(params, root);
  Rng data_rng = root.child("data");

  auto logits_of = [&](const FusedPosterior& post) {
    std::vector<double> logits(cfg.num_classes, 0.0);
    for (int c = 0; c < cfg.num_classes; ++c) {
      double acc = params.head.cls_b.value.data[c];
      for (int d = 0; d < cfg.feat_dim; ++d) {
        acc += params.head.cls_w.value.at(c, d) * post.mu[d];
      }
      logits[c] = acc;
    }
    return logits;
  };

  double worst_mass = 0.0;
  double worst_logit_delta = 0.0;
  for (int i = 0; i < num_samples; ++i) {
    Sample full;
    full.mask = ModalityMask::all_observed(4);
    full.features.resize(4);
    for (int m = 0; m < 4; ++m) {
      full.features[m].resize(cfg.input_dims[m]);
      for (auto& v : full.features[m]) {
        v = static_cast<float>(data_rng.normal());
      }
    }
    for (uint32_t bits = 1; bits < 16; ++bits) {
      const Sample masked = remask(full, ModalityMask::from_bits(bits, 4));

      diff::Graph<double> g;
      AttnDiag diag;
      auto fwd = forward_posterior(g, params, masked, &diag);
      for (int m = 0; m < 4; ++m) {
        int slot = 0;
        for (int j = 0; j < 4; ++j) {
          if (j == m) continue;
          if (!masked.mask.observed(j)) {
            worst_mass = std::max(worst_mass, std::abs(diag.mass[m][slot]));
          }
          ++slot;
        }
      }
      FusedPosterior clean;
      for (double v : g.value(fwd.post.mu).data) clean.mu.push_back(v);
      for (double v : g.value(fwd.post.var).data) clean.var.push_back(v);

      // rebuild with garbage placeholder features for missing modalities
      diff::Graph<double> g2;
      FeatureBundle<double> dirty;
      dirty.mask = masked.mask;
      for (int m = 0; m < 4; ++m) {
        if (masked.mask.observed(m)) {
          dirty.h.push_back(
              encode_modality(g2, params.encoders[m], masked.features[m], m));
        } else {
          auto junk = diff::Tensor<double>::zeros({cfg.feat_dim});
          for (auto& v : junk.data) v = data_rng.normal() * 1e3;
          dirty.h.push_back(g2.constant(std::move(junk)));
        }
      }
      auto fwd2 = forward_from_bundle(g2, params, dirty);
      FusedPosterior perturbed;
      for (double v : g2.value(fwd2.post.mu).data) perturbed.mu.push_back(v);
      for (double v : g2.value(fwd2.post.var).data) perturbed.var.push_back(v);

      const auto l1 = logits_of(clean);
      const auto l2 = logits_of(perturbed);
      for (int c = 0; c < cfg.num_classes; ++c) {
        worst_logit_delta =
            std::max(worst_logit_delta, std::abs(l1[c] - l2[c]));
      }
    }
  }
  const bool pass = worst_mass == 0.0 && worst_logit_delta <= 1e-12;
  return CheckResult{"masking_soundness", pass,
                     std::max(worst_mass, worst_logit_delta),
                     std::to_string(num_samples) +
                         " samples x 15 masks, stray mass " +
                         fmt_stat(worst_mass) + ", logit delta " +
                         fmt_stat(worst_logit_delta)};
}

CheckResult gradient_fidelity_check(int num_seeds, uint64_t seed) {
  ModelConfig cfg;
  cfg.num_modalities = 3;
  cfg.input_dims = {4, 5, 6};
  cfg.num_classes = 3;
  cfg.feat_dim = 8;
  cfg.latent_dim = 8;
  cfg.heads = 2;
  cfg.encoder_hidden = 8;

  double worst = 0.0;
  bool pass = true;
  std::string worst_detail;
  for (int s = 0; s < num_seeds; ++s) {
    Rng root(seed + static_cast<uint64_t>(s));
    auto params = make_model_params<double>(cfg);
    init_model(params, root);

    Rng data_rng = root.child("data");
    std::vector<Sample> batch(4);
    for (auto& sample : batch) {
      uint32_t bits = 0;
      while (bits == 0) bits = data_rng.uniform_int(8);
      sample.mask = ModalityMask::from_bits(bits, 3);
      sample.label = data_rng.uniform_int(3);
      sample.features.resize(3);
      for (int m = 0; m < 3; ++m) {
        if (!sample.mask.observed(m)) continue;
        sample.features[m].resize(cfg.input_dims[m]);
        for (auto& v : sample.features[m]) {
          v = static_cast<float>(data_rng.normal());
        }
      }
    }
    std::vector<const Sample*> batch_ptr;
    for (auto& sample : batch) batch_ptr.push_back(&sample);

    const uint64_t mc_seed = root.child("mc").origin();
    auto make_loss = [&](diff::Graph<double>& g) {
      Rng mc_rng(mc_seed);  // identical draws on every evaluation
      auto loss = batch_loss<double>(g, params, batch_ptr, 1e-3, 3,
                                     /*mc_enabled=*/true, mc_rng);
      return loss.total;
    };
    auto plist = param_list(params);
    auto report = diff::grad_check(make_loss, plist);
    if (report.max_rel_err > worst) {
      worst = report.max_rel_err;
      worst_detail = report.worst_param;
    }
    pass = pass && report.max_rel_err <= 1e-4;
  }
  return CheckResult{"gradient_fidelity", pass, worst,
                     std::to_string(num_seeds) + " seeds, max rel err " +
                         fmt_stat(worst) +
                         (worst_detail.empty() ? "" : " at " + worst_detail)};
}

std::vector<CheckResult> run_default_checks(uint64_t seed) {
  std::vector<CheckResult> results;
  results.push_back(poe_grid_check(200, seed));
  results.push_back(kl_mc_check(50, 100000, seed + 1));
  results.push_back(masking_soundness_check(200, seed + 2));
  results.push_back(gradient_fidelity_check(2, seed + 3));
  return results;
}

}  // namespace missfuse::verify
