#pragma once

// Uncertainty-aware product-of-experts fusion. Each modality's aligned
// representation is mapped to a diagonal gaussian expert; all experts are
// fused with a standard-normal prior by precision aggregation, so experts
// that learn large variance contribute little. Classification averages
// softmax outputs over reparameterized draws from the fused posterior.
//
// The fusion and prediction formulas exist twice: on the tape (training,
// differentiable) and as plain arithmetic (inference and verification).
// test_uapoe pins the two routes together.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "missfuse/errors.hpp"
#include "missfuse/graph.hpp"
#include "missfuse/init.hpp"
#include "missfuse/rng.hpp"

namespace missfuse {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// ---- plain (inference / verification) surface -----------------------------

struct GaussianExpert {
  std::vector<double> mu;
  std::vector<double> var;
};

struct FusedPosterior {
  std::vector<double> mu;
  std::vector<double> var;
};

namespace detail {
// Test hook: cmd_verify's fault-injection mode flips the sign of the fused
// mean accumulation to prove the oracle catches a broken fusion.
inline bool& fuse_fault_flag() {
  static bool flag = false;
  return flag;
}
}  // namespace detail

inline void set_fuse_fault_injection(bool enabled) {
  detail::fuse_fault_flag() = enabled;
}

// Closed-form product of the experts and a standard-normal prior.
// Summation order is fixed (expert list order) for determinism.
inline FusedPosterior fuse(std::span<const GaussianExpert> experts) {
  if (experts.empty()) throw ConfigError("fuse requires at least one expert");
  const size_t dim = experts[0].mu.size();
  FusedPosterior out;
  out.mu.assign(dim, 0.0);
  out.var.assign(dim, 0.0);
  const double mean_sign = detail::fuse_fault_flag() ? -1.0 : 1.0;
  for (size_t d = 0; d < dim; ++d) {
    double precision = 1.0;  // prior
    double weighted_mu = 0.0;
    for (const auto& e : experts) {
      if (e.mu.size() != dim || e.var.size() != dim) {
        throw DimensionError("fuse: expert dimension mismatch");
      }
      if (!(e.var[d] > 0.0)) throw DataError("fuse: non-positive variance");
      precision += 1.0 / e.var[d];
      weighted_mu += mean_sign * e.mu[d] / e.var[d];
    }
    out.var[d] = 1.0 / precision;
    out.mu[d] = out.var[d] * weighted_mu;
  }
  return out;
}

// KL(q || N(0, I)) for a diagonal gaussian.
inline double kl_to_prior(const FusedPosterior& post) {
  double kl = 0.0;
  for (size_t d = 0; d < post.mu.size(); ++d) {
    kl += post.mu[d] * post.mu[d] + post.var[d] - std::log(post.var[d]) - 1.0;
  }
  return 0.5 * kl;
}

inline std::vector<double> softmax_plain(std::vector<double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double denom = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (auto& v : logits) v /= denom;
  return logits;
}

// Monte Carlo class probabilities; deterministic mode classifies at the
// posterior mean and ignores draws.
template <class S>
std::vector<double> predict_probs(const FusedPosterior& post,
                                  const diff::Tensor<S>& cls_w,
                                  const diff::Tensor<S>& cls_b, int draws,
                                  Rng& rng, bool deterministic) {
  if (!deterministic && draws < 1) {
    throw ConfigError("predict requires at least one draw, got " +
                      std::to_string(draws));
  }
  const int classes = cls_w.rows();
  const int dim = cls_w.cols();
  if (static_cast<size_t>(dim) != post.mu.size()) {
    throw DimensionError("predict: posterior dimension mismatch");
  }
  auto logits_for = [&](const std::vector<double>& s) {
    std::vector<double> logits(classes, 0.0);
    for (int c = 0; c < classes; ++c) {
      double acc = static_cast<double>(cls_b.data[c]);
      for (int d = 0; d < dim; ++d) {
        acc += static_cast<double>(cls_w.at(c, d)) * s[d];
      }
      logits[c] = acc;
    }
    return logits;
  };

  if (deterministic) return softmax_plain(logits_for(post.mu));

  std::vector<double> probs(classes, 0.0);
  std::vector<double> s(dim);
  for (int k = 0; k < draws; ++k) {
    for (int d = 0; d < dim; ++d) {
      s[d] = post.mu[d] + std::sqrt(post.var[d]) * rng.normal();
    }
    auto p = softmax_plain(logits_for(s));
    for (int c = 0; c < classes; ++c) probs[c] += p[c];
  }
  for (auto& v : probs) v /= draws;
  return probs;
}

// ---- tape (training) surface -----------------------------------------------

template <class S>
struct HeadParams {
  std::vector<diff::Param<S>> expert_w, expert_b;  // [2*latent x D], [2*latent]
  diff::Param<S> cls_w, cls_b;                     // [C x latent], [C]
};

template <class S>
struct ExpertVals {
  diff::Val mu, var;
};

template <class S>
struct PosteriorVals {
  diff::Val mu, var;
};

template <class S>
HeadParams<S> make_head_params(int num_modalities, int feat_dim, int latent_dim,
                               int num_classes) {
  HeadParams<S> p;
  for (int m = 0; m < num_modalities; ++m) {
    const std::string pre = "head." + std::to_string(m) + ".";
    p.expert_w.push_back(
        {pre + "w", diff::Tensor<S>::zeros({2 * latent_dim, feat_dim})});
    p.expert_b.push_back({pre + "b", diff::Tensor<S>::zeros({2 * latent_dim})});
  }
  p.cls_w = {"cls.w", diff::Tensor<S>::zeros({num_classes, latent_dim})};
  p.cls_b = {"cls.b", diff::Tensor<S>::zeros({num_classes})};
  return p;
}

template <class S>
void init_head(HeadParams<S>& p, int feat_dim, int latent_dim, Rng& rng) {
  for (size_t m = 0; m < p.expert_w.size(); ++m) {
    init_linear(p.expert_w[m], p.expert_b[m], feat_dim, rng);
  }
  init_linear(p.cls_w, p.cls_b, latent_dim, rng);
}

// G_m: aligned feature -> (mu, var) with var = exp(clamp(logvar)).
// fixed_unit_variance pins var to 1 (uniform precision averaging ablation).
template <class S>
ExpertVals<S> expert(diff::Graph<S>& g, diff::Val z, int m, HeadParams<S>& p,
                     int latent_dim, bool fixed_unit_variance) {
  auto out = g.add(g.matvec(g.param(p.expert_w[m]), z), g.param(p.expert_b[m]));
  ExpertVals<S> e;
  e.mu = g.slice(out, 0, latent_dim);
  if (fixed_unit_variance) {
    e.var = g.constant(diff::Tensor<S>::full({latent_dim}, S(1)));
  } else {
    auto logvar = g.clamp(g.slice(out, latent_dim, latent_dim),
                          S(kLogVarMin), S(kLogVarMax));
    e.var = g.exp(logvar);
  }
  return e;
}

template <class S>
PosteriorVals<S> fuse_vals(diff::Graph<S>& g,
                           std::span<const ExpertVals<S>> experts) {
  if (experts.empty()) throw ConfigError("fuse requires at least one expert");
  const int dim = g.value(experts[0].mu).numel();
  auto precision = g.constant(diff::Tensor<S>::full({dim}, S(1)));  // prior
  diff::Val weighted{};
  for (const auto& e : experts) {
    auto inv_var = g.div(g.constant(diff::Tensor<S>::full({dim}, S(1))), e.var);
    precision = g.add(precision, inv_var);
    auto term = g.mul(e.mu, inv_var);
    weighted = weighted.valid() ? g.add(weighted, term) : term;
  }
  PosteriorVals<S> post;
  post.var = g.div(g.constant(diff::Tensor<S>::full({dim}, S(1))), precision);
  post.mu = g.mul(post.var, weighted);
  return post;
}

// Reparameterized draws keep the objective differentiable; mc_enabled=false
// classifies at the posterior mean.
template <class S>
diff::Val predict_vals(diff::Graph<S>& g, const PosteriorVals<S>& post,
                       HeadParams<S>& p, int draws, Rng& rng, bool mc_enabled) {
  const int dim = g.value(post.mu).numel();
  auto logits_to_probs = [&](diff::Val s) {
    auto logits = g.add(g.matvec(g.param(p.cls_w), s), g.param(p.cls_b));
    return g.masked_softmax(logits,
                            diff::Tensor<S>::zeros({g.value(logits).numel()}));
  };
  if (!mc_enabled) return logits_to_probs(post.mu);
  if (draws < 1) {
    throw ConfigError("predict requires at least one draw, got " +
                      std::to_string(draws));
  }
  auto std_dev = g.sqrt(post.var);
  diff::Val acc{};
  for (int k = 0; k < draws; ++k) {
    diff::Tensor<S> eps = diff::Tensor<S>::zeros({dim});
    for (auto& v : eps.data) v = static_cast<S>(rng.normal());
    auto s = g.add(post.mu, g.mul(std_dev, g.constant(std::move(eps))));
    auto probs = logits_to_probs(s);
    acc = acc.valid() ? g.add(acc, probs) : probs;
  }
  return g.mul_const(acc, S(1) / static_cast<S>(draws));
}

template <class S>
diff::Val kl_vals(diff::Graph<S>& g, const PosteriorVals<S>& post) {
  auto sq = g.mul(post.mu, post.mu);
  auto inner = g.sub(g.add(sq, post.var), g.log(post.var));
  return g.mul_const(g.sum(g.add_const(inner, S(-1))), S(0.5));
}

}  // namespace missfuse
