#pragma once

// Prototype-anchored representation alignment. For every target modality a
// learnable prototype plus an availability token build the query; masked
// multi-head cross-attention over the other modalities refines it; a sigmoid
// gate blends the original feature with the refinement for observed
// modalities, while missing ones take the refinement alone. Missing
// modalities never serve as keys or values: their attention slots carry a
// -inf bias and their (placeholder) features are skipped entirely, so
// perturbing a placeholder cannot change any output.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "missfuse/encoders.hpp"
#include "missfuse/errors.hpp"
#include "missfuse/graph.hpp"
#include "missfuse/rng.hpp"
#include "missfuse/types.hpp"

namespace missfuse {

struct PraConfig {
  int num_modalities = 4;
  int feat_dim = 64;
  int heads = 4;
  bool literal_attention = false;  // raw features as keys/values, single head
  bool vector_gate = false;        // per-dimension gate instead of scalar

  int head_dim() const {
    return literal_attention ? feat_dim : feat_dim / heads;
  }
  int num_heads() const { return literal_attention ? 1 : heads; }

  void validate() const {
    if (!literal_attention && feat_dim % heads != 0) {
      throw ConfigError("feat_dim " + std::to_string(feat_dim) +
                        " not divisible by heads " + std::to_string(heads));
    }
  }
};

template <class S>
struct PraParams {
  std::vector<diff::Param<S>> prototype;          // per modality, [D]
  diff::Param<S> token_obs, token_mis;            // shared, [D]
  std::vector<diff::Param<S>> query_w, query_b;   // [D x 2D], [D]
  std::vector<diff::Param<S>> gate_w, gate_b;     // [1|D x 2D], [1|D]
  std::vector<diff::Param<S>> attn_q, attn_k,     // [D x D] each; empty in
      attn_v, attn_o;                             // literal attention mode
  diff::Param<S> ln_gain, ln_shift;               // [D]
};

template <class S>
struct AlignedBundle {
  std::vector<diff::Val> z;      // final aligned representation, every m
  std::vector<diff::Val> h_hat;  // attention refinement, every m
  std::vector<std::optional<diff::Val>> alpha;  // gate, observed m only
};

// Total attention mass per (target, context slot), summed over heads.
// Context slots are the modalities other than the target in ascending index
// order.
struct AttnDiag {
  std::vector<std::vector<double>> mass;
};

template <class S>
PraParams<S> make_pra_params(const PraConfig& cfg) {
  cfg.validate();
  const int m_count = cfg.num_modalities;
  const int d = cfg.feat_dim;
  PraParams<S> p;
  p.token_obs = {"pra.token_obs", diff::Tensor<S>::zeros({d})};
  p.token_mis = {"pra.token_mis", diff::Tensor<S>::zeros({d})};
  p.ln_gain = {"pra.ln_gain", diff::Tensor<S>::full({d}, S(1))};
  p.ln_shift = {"pra.ln_shift", diff::Tensor<S>::zeros({d})};
  const int gate_out = cfg.vector_gate ? d : 1;
  for (int m = 0; m < m_count; ++m) {
    const std::string pre = "pra." + std::to_string(m) + ".";
    p.prototype.push_back({pre + "prototype", diff::Tensor<S>::zeros({d})});
    p.query_w.push_back({pre + "query_w", diff::Tensor<S>::zeros({d, 2 * d})});
    p.query_b.push_back({pre + "query_b", diff::Tensor<S>::zeros({d})});
    p.gate_w.push_back(
        {pre + "gate_w", diff::Tensor<S>::zeros({gate_out, 2 * d})});
    p.gate_b.push_back({pre + "gate_b", diff::Tensor<S>::zeros({gate_out})});
    if (!cfg.literal_attention) {
      p.attn_q.push_back({pre + "attn_q", diff::Tensor<S>::zeros({d, d})});
      p.attn_k.push_back({pre + "attn_k", diff::Tensor<S>::zeros({d, d})});
      p.attn_v.push_back({pre + "attn_v", diff::Tensor<S>::zeros({d, d})});
      p.attn_o.push_back({pre + "attn_o", diff::Tensor<S>::zeros({d, d})});
    }
  }
  return p;
}

template <class S>
void init_pra(PraParams<S>& p, const PraConfig& cfg, Rng& rng) {
  // prototypes and availability tokens: zero-mean gaussian, std 0.02
  for (auto& v : p.token_obs.value.data) v = static_cast<S>(rng.normal() * 0.02);
  for (auto& v : p.token_mis.value.data) v = static_cast<S>(rng.normal() * 0.02);
  for (auto& proto : p.prototype) {
    for (auto& v : proto.value.data) v = static_cast<S>(rng.normal() * 0.02);
  }
  for (int m = 0; m < cfg.num_modalities; ++m) {
    init_linear(p.query_w[m], p.query_b[m], 2 * cfg.feat_dim, rng);
    init_linear(p.gate_w[m], p.gate_b[m], 2 * cfg.feat_dim, rng);
    // start with the gate favoring the original feature; the refinement
    // branch earns weight as the attention maps train
    for (auto& v : p.gate_b[m].value.data) v += S(2);
    if (!cfg.literal_attention) {
      init_uniform(p.attn_q[m].value, cfg.feat_dim, rng);
      init_uniform(p.attn_k[m].value, cfg.feat_dim, rng);
      init_uniform(p.attn_v[m].value, cfg.feat_dim, rng);
      // zero output projection: attention is a no-op at initialization and
      // is switched on by gradient flow, so early training matches the
      // attention-free wiring
      for (auto& v : p.attn_o[m].value.data) v = S(0);
    }
  }
}

// q = phi_m([P_m || a]) with a the availability token selected by the mask
// bit for the target modality.
template <class S>
diff::Val build_query(diff::Graph<S>& g, int m, const ModalityMask& mask,
                      PraParams<S>& p) {
  auto avail = g.param(mask.observed(m) ? p.token_obs : p.token_mis);
  auto cat = g.concat2(g.param(p.prototype[m]), avail);
  return g.add(g.matvec(g.param(p.query_w[m]), cat), g.param(p.query_b[m]));
}

// Masked multi-head cross-attention of the target's query over the other
// modalities. Returns the zero vector when no context modality is observed.
template <class S>
diff::Val attend(diff::Graph<S>& g, int m, FeatureBundle<S>& bundle,
                 diff::Val query, PraParams<S>& p, const PraConfig& cfg,
                 AttnDiag* diag = nullptr) {
  constexpr S kInf = std::numeric_limits<S>::infinity();
  const int m_count = cfg.num_modalities;
  const int heads = cfg.num_heads();
  const int dk = cfg.head_dim();

  std::vector<int> context;  // ascending modality index, target removed
  for (int j = 0; j < m_count; ++j) {
    if (j != m) context.push_back(j);
  }
  const int slots = static_cast<int>(context.size());

  diff::Tensor<S> bias = diff::Tensor<S>::zeros({slots});
  int observed_slots = 0;
  for (int s = 0; s < slots; ++s) {
    if (bundle.mask.observed(context[s])) {
      ++observed_slots;
    } else {
      bias.data[s] = -kInf;
    }
  }
  if (diag) {
    diag->mass[m].assign(slots, 0.0);
  }
  if (observed_slots == 0) {
    return g.constant(diff::Tensor<S>::zeros({cfg.feat_dim}));
  }

  diff::Val q_proj =
      cfg.literal_attention ? query : g.matvec(g.param(p.attn_q[m]), query);

  // keys/values for observed context only; masked slots never touch features
  std::vector<diff::Val> key(slots), value(slots);
  for (int s = 0; s < slots; ++s) {
    const int j = context[s];
    if (!bundle.mask.observed(j)) continue;
    key[s] = cfg.literal_attention ? bundle.h[j]
                                   : g.matvec(g.param(p.attn_k[m]), bundle.h[j]);
    value[s] = cfg.literal_attention
                   ? bundle.h[j]
                   : g.matvec(g.param(p.attn_v[m]), bundle.h[j]);
  }

  const S inv_sqrt_dk = S(1) / std::sqrt(static_cast<S>(dk));
  std::vector<diff::Val> head_out;
  for (int h = 0; h < heads; ++h) {
    auto q_h = heads == 1 ? q_proj : g.slice(q_proj, h * dk, dk);
    std::vector<diff::Val> scores(slots);
    for (int s = 0; s < slots; ++s) {
      if (!bundle.mask.observed(context[s])) {
        scores[s] = g.constant_scalar(S(0));  // masked; never read
        continue;
      }
      auto k_h = heads == 1 ? key[s] : g.slice(key[s], h * dk, dk);
      scores[s] = g.mul_const(g.dot(q_h, k_h), inv_sqrt_dk);
    }
    auto weights = g.masked_softmax(g.concat(scores), bias);
    if (diag) {
      for (int s = 0; s < slots; ++s) {
        diag->mass[m][s] += static_cast<double>(g.value(weights).data[s]);
      }
    }
    diff::Val acc{};
    for (int s = 0; s < slots; ++s) {
      if (!bundle.mask.observed(context[s])) continue;
      auto v_h = heads == 1 ? value[s] : g.slice(value[s], h * dk, dk);
      auto term = g.mul(g.slice(weights, s, 1), v_h);
      acc = acc.valid() ? g.add(acc, term) : term;
    }
    head_out.push_back(acc);
  }
  auto merged = heads == 1 ? head_out[0] : g.concat(head_out);
  return cfg.literal_attention ? merged
                               : g.matvec(g.param(p.attn_o[m]), merged);
}

template <class S>
struct CalibrateOut {
  diff::Val z;
  std::optional<diff::Val> alpha;
};

// Observed: z = LN(alpha * h + (1 - alpha) * h_hat) with
// alpha = sigmoid(psi_m([h || h_hat])). Missing: z = LN(h_hat) exactly.
template <class S>
CalibrateOut<S> calibrate(diff::Graph<S>& g, int m, diff::Val h,
                          diff::Val h_hat, const ModalityMask& mask,
                          PraParams<S>& p) {
  CalibrateOut<S> out;
  if (!mask.observed(m)) {
    out.z = g.layer_norm(h_hat, g.param(p.ln_gain), g.param(p.ln_shift));
    return out;
  }
  auto gate_in = g.concat2(h, h_hat);
  auto alpha = g.sigmoid(
      g.add(g.matvec(g.param(p.gate_w[m]), gate_in), g.param(p.gate_b[m])));
  auto one_minus = g.add_const(g.mul_const(alpha, S(-1)), S(1));
  auto fused = g.add(g.mul(alpha, h), g.mul(one_minus, h_hat));
  out.z = g.layer_norm(fused, g.param(p.ln_gain), g.param(p.ln_shift));
  out.alpha = alpha;
  return out;
}

// Full alignment pass over every modality, observed or missing.
template <class S>
AlignedBundle<S> align(diff::Graph<S>& g, FeatureBundle<S>& bundle,
                       PraParams<S>& p, const PraConfig& cfg,
                       AttnDiag* diag = nullptr) {
  if (!bundle.mask.any()) {
    throw DataError("align requires a non-empty observed subset");
  }
  if (diag) diag->mass.assign(cfg.num_modalities, {});
  AlignedBundle<S> out;
  for (int m = 0; m < cfg.num_modalities; ++m) {
    auto query = build_query(g, m, bundle.mask, p);
    auto h_hat = attend(g, m, bundle, query, p, cfg, diag);
    auto cal = calibrate(g, m, bundle.h[m], h_hat, bundle.mask, p);
    out.z.push_back(cal.z);
    out.h_hat.push_back(h_hat);
    out.alpha.push_back(cal.alpha);
  }
  return out;
}

}  // namespace missfuse
