#pragma once

#include <cmath>

#include "missfuse/graph.hpp"
#include "missfuse/rng.hpp"

namespace missfuse {

// Uniform in +/- 1/sqrt(fan_in).
template <class S>
void init_uniform(diff::Tensor<S>& t, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
}

template <class S>
void init_linear(diff::Param<S>& w, diff::Param<S>& b, int fan_in, Rng& rng) {
  init_uniform(w.value, fan_in, rng);
  init_uniform(b.value, fan_in, rng);
}

}  // namespace missfuse
