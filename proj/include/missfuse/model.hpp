#pragma once

// Full model: modality encoders -> prototype-anchored alignment ->
// per-modality gaussian experts -> product-of-experts fusion -> Monte Carlo
// classifier. The disable_pra variant skips alignment: observed modalities
// feed a parameterless layer norm of their encoded feature to the expert
// heads, missing modalities feed the zero vector.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "missfuse/encoders.hpp"
#include "missfuse/errors.hpp"
#include "missfuse/graph.hpp"
#include "missfuse/pra.hpp"
#include "missfuse/rng.hpp"
#include "missfuse/types.hpp"
#include "missfuse/uapoe.hpp"

namespace missfuse {

struct ModelConfig {
  int num_modalities = 4;
  std::vector<int> input_dims = {8, 32, 32, 32};
  int num_classes = 3;
  int feat_dim = 64;
  int latent_dim = 0;      // 0 -> feat_dim
  int heads = 4;
  int encoder_hidden = 0;  // 0 -> 2 * feat_dim
  bool disable_pra = false;
  bool literal_attention = false;
  bool vector_gate = false;
  bool fixed_unit_variance = false;      // uniform precision averaging variant
  bool deterministic_inference = false;  // classify at the posterior mean

  int effective_latent() const { return latent_dim > 0 ? latent_dim : feat_dim; }
  int effective_hidden() const {
    return encoder_hidden > 0 ? encoder_hidden : 2 * feat_dim;
  }
  PraConfig pra_config() const {
    return PraConfig{num_modalities, feat_dim, heads, literal_attention,
                     vector_gate};
  }

  void validate() const {
    if (num_modalities < 1 || num_modalities > 8) {
      throw ConfigError("num_modalities must be in [1, 8]");
    }
    if (static_cast<int>(input_dims.size()) != num_modalities) {
      throw ConfigError("input_dims size does not match num_modalities");
    }
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (feat_dim < 2) throw ConfigError("feat_dim must be >= 2");
    if (!disable_pra) pra_config().validate();
  }
};

template <class S>
struct ModelParams {
  ModelConfig cfg;
  std::vector<EncoderParams<S>> encoders;
  std::optional<PraParams<S>> pra;  // absent when disable_pra
  HeadParams<S> head;
};

template <class S>
ModelParams<S> make_model_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<S> p;
  p.cfg = cfg;
  for (int m = 0; m < cfg.num_modalities; ++m) {
    p.encoders.push_back(make_encoder_params<S>(
        m, cfg.input_dims[m], cfg.effective_hidden(), cfg.feat_dim));
  }
  if (!cfg.disable_pra) p.pra = make_pra_params<S>(cfg.pra_config());
  p.head = make_head_params<S>(cfg.num_modalities, cfg.feat_dim,
                               cfg.effective_latent(), cfg.num_classes);
  return p;
}

template <class S>
void init_model(ModelParams<S>& p, Rng& rng) {
  Rng stream = rng.child("model_init");
  for (auto& enc : p.encoders) init_encoder(enc, stream);
  if (p.pra) init_pra(*p.pra, p.cfg.pra_config(), stream);
  init_head(p.head, p.cfg.feat_dim, p.cfg.effective_latent(), stream);
}

// Visits every trainable tensor exactly once, in a fixed order.
template <class S, class Fn>
void visit_params(ModelParams<S>& p, Fn&& fn) {
  for (auto& enc : p.encoders) {
    fn(enc.w1);
    fn(enc.b1);
    fn(enc.w2);
    fn(enc.b2);
  }
  if (p.pra) {
    auto& pra = *p.pra;
    for (auto& proto : pra.prototype) fn(proto);
    fn(pra.token_obs);
    fn(pra.token_mis);
    for (auto& w : pra.query_w) fn(w);
    for (auto& b : pra.query_b) fn(b);
    for (auto& w : pra.gate_w) fn(w);
    for (auto& b : pra.gate_b) fn(b);
    for (auto& w : pra.attn_q) fn(w);
    for (auto& w : pra.attn_k) fn(w);
    for (auto& w : pra.attn_v) fn(w);
    for (auto& w : pra.attn_o) fn(w);
    fn(pra.ln_gain);
    fn(pra.ln_shift);
  }
  for (auto& w : p.head.expert_w) fn(w);
  for (auto& b : p.head.expert_b) fn(b);
  fn(p.head.cls_w);
  fn(p.head.cls_b);
}

template <class S>
std::vector<diff::Param<S>*> param_list(ModelParams<S>& p) {
  std::vector<diff::Param<S>*> out;
  visit_params(p, [&](diff::Param<S>& param) { out.push_back(&param); });
  return out;
}

template <class S>
size_t param_count(ModelParams<S>& p) {
  size_t n = 0;
  visit_params(p, [&](diff::Param<S>& param) { n += param.value.numel(); });
  return n;
}

template <class S>
ModelParams<S> clone_params(const ModelParams<S>& p) {
  return p;  // Param holds values; plain copy is a deep copy
}

template <class S>
struct SampleForward {
  PosteriorVals<S> post;
  std::vector<diff::Val> z;  // aligned representations fed to the experts
};

// Alignment, expert heads and fusion on an already-encoded bundle.
template <class S>
SampleForward<S> forward_from_bundle(diff::Graph<S>& g, ModelParams<S>& p,
                                     FeatureBundle<S>& bundle,
                                     AttnDiag* diag = nullptr) {
  SampleForward<S> out;
  if (p.cfg.disable_pra) {
    auto unit_gain = g.constant(diff::Tensor<S>::full({p.cfg.feat_dim}, S(1)));
    auto zero_shift = g.constant(diff::Tensor<S>::zeros({p.cfg.feat_dim}));
    for (int m = 0; m < p.cfg.num_modalities; ++m) {
      out.z.push_back(bundle.mask.observed(m)
                          ? g.layer_norm(bundle.h[m], unit_gain, zero_shift)
                          : g.constant(diff::Tensor<S>::zeros({p.cfg.feat_dim})));
    }
    if (diag) diag->mass.assign(p.cfg.num_modalities, {});
  } else {
    auto aligned = align(g, bundle, *p.pra, p.cfg.pra_config(), diag);
    out.z = std::move(aligned.z);
  }

  std::vector<ExpertVals<S>> experts;
  for (int m = 0; m < p.cfg.num_modalities; ++m) {
    experts.push_back(expert(g, out.z[m], m, p.head, p.cfg.effective_latent(),
                             p.cfg.fixed_unit_variance));
  }
  out.post = fuse_vals<S>(g, experts);
  return out;
}

// Forward pass up to the fused posterior (no classifier).
template <class S>
SampleForward<S> forward_posterior(diff::Graph<S>& g, ModelParams<S>& p,
                                   const Sample& sample,
                                   AttnDiag* diag = nullptr) {
  if (!sample.mask.any()) {
    throw DataError("forward requires a non-empty observed subset");
  }
  auto bundle = encode(g, p.encoders, sample, p.cfg.feat_dim);
  return forward_from_bundle(g, p, bundle, diag);
}

// Differentiable class probabilities plus the posterior KL term, for the
// training objective.
template <class S>
struct TrainForward {
  diff::Val probs;
  diff::Val kl;
};

template <class S>
TrainForward<S> forward_train(diff::Graph<S>& g, ModelParams<S>& p,
                              const Sample& sample, int draws, Rng& rng,
                              bool mc_enabled) {
  auto fwd = forward_posterior(g, p, sample);
  TrainForward<S> out;
  out.probs = predict_vals(g, fwd.post, p.head, draws, rng,
                           mc_enabled && !p.cfg.deterministic_inference);
  out.kl = kl_vals(g, fwd.post);
  return out;
}

// Inference: graph forward to the fused posterior, then plain Monte Carlo
// prediction (no tape), honoring the model's deterministic-inference flag.
template <class S>
std::vector<double> infer_probs(ModelParams<S>& p, const Sample& sample,
                                int draws, Rng& rng) {
  diff::Graph<S> g;
  auto fwd = forward_posterior(g, p, sample);
  FusedPosterior post;
  for (S v : g.value(fwd.post.mu).data) post.mu.push_back(static_cast<double>(v));
  for (S v : g.value(fwd.post.var).data)
    post.var.push_back(static_cast<double>(v));
  return predict_probs(post, p.head.cls_w.value, p.head.cls_b.value, draws, rng,
                       p.cfg.deterministic_inference);
}

}  // namespace missfuse
