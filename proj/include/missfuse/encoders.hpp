#pragma once

// Modality-specific encoders into the shared feature space. Each encoder is
// a two-layer perceptron; missing modalities get an exact zero vector and
// their encoder is never executed, so no gradient ever reaches it.

#include <string>
#include <vector>

#include "missfuse/errors.hpp"
#include "missfuse/graph.hpp"
#include "missfuse/init.hpp"
#include "missfuse/rng.hpp"
#include "missfuse/types.hpp"

namespace missfuse {

template <class S>
struct EncoderParams {
  diff::Param<S> w1, b1;  // input_dim -> hidden
  diff::Param<S> w2, b2;  // hidden -> feat_dim
};

template <class S>
struct FeatureBundle {
  std::vector<diff::Val> h;  // one feat_dim vector per modality
  ModalityMask mask;
};

template <class S>
EncoderParams<S> make_encoder_params(int modality, int input_dim, int hidden,
                                     int feat_dim) {
  const std::string prefix = "enc" + std::to_string(modality) + ".";
  EncoderParams<S> p;
  p.w1 = {prefix + "w1", diff::Tensor<S>::zeros({hidden, input_dim})};
  p.b1 = {prefix + "b1", diff::Tensor<S>::zeros({hidden})};
  p.w2 = {prefix + "w2", diff::Tensor<S>::zeros({feat_dim, hidden})};
  p.b2 = {prefix + "b2", diff::Tensor<S>::zeros({feat_dim})};
  return p;
}

template <class S>
void init_encoder(EncoderParams<S>& p, Rng& rng) {
  init_linear(p.w1, p.b1, p.w1.value.cols(), rng);
  init_linear(p.w2, p.b2, p.w2.value.cols(), rng);
}

template <class S>
diff::Val encode_modality(diff::Graph<S>& g, EncoderParams<S>& p,
                          const std::vector<float>& raw, int modality) {
  if (static_cast<int>(raw.size()) != p.w1.value.cols()) {
    throw DataError("modality " + std::to_string(modality) +
                    ": feature dimension " + std::to_string(raw.size()) +
                    " does not match configured " +
                    std::to_string(p.w1.value.cols()));
  }
  diff::Tensor<S> x = diff::Tensor<S>::zeros({static_cast<int>(raw.size())});
  for (size_t i = 0; i < raw.size(); ++i) x.data[i] = static_cast<S>(raw[i]);
  auto hidden = g.relu(g.add(g.matvec(g.param(p.w1), g.constant(std::move(x))),
                             g.param(p.b1)));
  return g.add(g.matvec(g.param(p.w2), hidden), g.param(p.b2));
}

template <class S>
FeatureBundle<S> encode(diff::Graph<S>& g, std::vector<EncoderParams<S>>& encs,
                        const Sample& sample, int feat_dim) {
  if (sample.features.size() != encs.size() ||
      sample.mask.bits.size() != encs.size()) {
    throw DataError("sample modality count does not match model");
  }
  FeatureBundle<S> out;
  out.mask = sample.mask;
  out.h.reserve(encs.size());
  for (size_t m = 0; m < encs.size(); ++m) {
    if (sample.mask.observed(static_cast<int>(m))) {
      out.h.push_back(encode_modality(g, encs[m], sample.features[m],
                                      static_cast<int>(m)));
    } else {
      out.h.push_back(g.constant(diff::Tensor<S>::zeros({feat_dim})));
    }
  }
  return out;
}

}  // namespace missfuse
