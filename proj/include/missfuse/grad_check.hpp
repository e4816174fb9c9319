#pragma once

// Central finite-difference verification of tape gradients. Runs in 64-bit
// only; the callable must be a pure function of the parameter values (any
// internal randomness re-seeded identically on every invocation).

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "missfuse/errors.hpp"
#include "missfuse/graph.hpp"

namespace missfuse::diff {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
};

// make_loss(Graph<double>&) -> Val building a scalar loss from `params`.
// Returns the max over all parameter entries of
//   |g_tape - g_fd| / max(1, |g_fd|)
// with g_fd the central difference at the given step.
template <class F>
GradCheckReport grad_check(F&& make_loss, std::span<Param<double>* const> params,
                           double step = 1e-5) {
  auto eval = [&]() -> double {
    Graph<double> g;
    Val loss = make_loss(g);
    const double v = g.value(loss).data[0];
    if (!std::isfinite(v)) {
      throw DataError("grad_check aborted: non-finite loss value");
    }
    return v;
  };

  Graph<double> g;
  Val loss = make_loss(g);
  if (!std::isfinite(g.value(loss).data[0])) {
    throw DataError("grad_check aborted: non-finite loss at base point");
  }
  g.backward(loss);

  std::vector<Tensor<double>> tape_grads;
  tape_grads.reserve(params.size());
  for (const Param<double>* p : params) {
    const Tensor<double>* gp = g.grad_of(*p);
    tape_grads.push_back(gp ? *gp : Tensor<double>::zeros(p->value.shape));
  }

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param<double>& p = *params[pi];
    for (int k = 0; k < p.value.numel(); ++k) {
      const double orig = p.value.data[k];
      p.value.data[k] = orig + step;
      double fp = 0.0, fm = 0.0;
      try {
        fp = eval();
        p.value.data[k] = orig - step;
        fm = eval();
      } catch (const DataError& e) {
        p.value.data[k] = orig;
        throw DataError(std::string(e.what()) + " (param " + p.name +
                        ", index " + std::to_string(k) + ")");
      }
      p.value.data[k] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double rel = std::abs(tape_grads[pi].data[k] - fd) /
                         std::max(1.0, std::abs(fd));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name;
        report.worst_index = k;
      }
    }
  }
  return report;
}

}  // namespace missfuse::diff
