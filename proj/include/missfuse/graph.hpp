#pragma once

// Reverse-mode tape over small dense tensors. Nodes are appended in forward
// order, so the creation index is a valid topological order and backward()
// is a single reverse sweep. Gradient buffers are allocated on first touch,
// which keeps forward-only evaluation cheap and gives dead branches an exact
// zero gradient.

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "missfuse/errors.hpp"
#include "missfuse/tensor.hpp"

namespace missfuse::diff {

struct Val {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// A named trainable tensor. Lives outside any graph; a graph step leases it
// in as a leaf via Graph::param and exposes the accumulated gradient after
// backward().
template <class S>
struct Param {
  std::string name;
  Tensor<S> value;
};

template <class S>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  size_t size() const { return nodes_.size(); }

  const Tensor<S>& value(Val v) const { return nodes_.at(v.id).val; }

  // Gradient of the last backward() w.r.t. this node; zeros if untouched.
  Tensor<S> grad(Val v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.data.empty()) return Tensor<S>::zeros(n.val.shape);
    return n.grad;
  }

  // Null when the parameter was never used in this graph or received no
  // gradient (both mean an exact zero).
  const Tensor<S>* grad_of(const Param<S>& p) const {
    auto it = param_ids_.find(&p);
    if (it == param_ids_.end()) return nullptr;
    const Tensor<S>& g = nodes_[it->second].grad;
    return g.data.empty() ? nullptr : &g;
  }

  Val constant(Tensor<S> t) { return push(std::move(t), false, nullptr); }

  Val constant_scalar(S v) { return constant(Tensor<S>::scalar(v)); }

  Val leaf(Tensor<S> t) { return push(std::move(t), true, nullptr); }

  // Leases a parameter into the graph, at most once per graph.
  Val param(Param<S>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return Val{it->second};
    Val v = leaf(p.value);
    param_ids_.emplace(&p, v.id);
    return v;
  }

  void backward(Val loss) {
    Node& ln = nodes_.at(loss.id);
    if (ln.val.numel() != 1) {
      throw ConfigError("backward requires a scalar loss, got shape " +
                        ln.val.shape_str());
    }
    gbuf(loss.id).data[0] = S(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && !n.grad.data.empty()) n.back();
    }
  }

  // ---- elementwise -------------------------------------------------------

  Val add(Val a, Val b) { return binary(a, b, BinOp::kAdd); }
  Val sub(Val a, Val b) { return binary(a, b, BinOp::kSub); }
  Val mul(Val a, Val b) { return binary(a, b, BinOp::kMul); }
  Val div(Val a, Val b) { return binary(a, b, BinOp::kDiv); }

  Val add_const(Val a, S c) {
    Tensor<S> out = val(a);
    for (auto& x : out.data) x += c;
    return unary(a, std::move(out), [this, a](const Tensor<S>& gy, Val) {
      Tensor<S>& ga = gbuf(a.id);
      for (int i = 0; i < gy.numel(); ++i) ga.data[i] += gy.data[i];
    });
  }

  Val mul_const(Val a, S c) {
    Tensor<S> out = val(a);
    for (auto& x : out.data) x *= c;
    return unary(a, std::move(out), [this, a, c](const Tensor<S>& gy, Val) {
      Tensor<S>& ga = gbuf(a.id);
      for (int i = 0; i < gy.numel(); ++i) ga.data[i] += gy.data[i] * c;
    });
  }

  Val relu(Val a) {
    Tensor<S> out = val(a);
    for (auto& x : out.data) x = x > S(0) ? x : S(0);
    return unary(a, std::move(out), [this, a](const Tensor<S>& gy, Val) {
      const Tensor<S>& x = val(a);
      Tensor<S>& ga = gbuf(a.id);
      for (int i = 0; i < gy.numel(); ++i) {
        if (x.data[i] > S(0)) ga.data[i] += gy.data[i];
      }
    });
  }

  Val sigmoid(Val a) {
    Tensor<S> out = val(a);
    for (auto& x : out.data) x = S(1) / (S(1) + std::exp(-x));
    return unary(a, std::move(out), [this, a](const Tensor<S>& gy, Val y) {
      const Tensor<S>& yv = val(y);
      Tensor<S>& ga = gbuf(a.id);
      for (int i = 0; i < gy.numel(); ++i) {
        ga.data[i] += gy.data[i] * yv.data[i] * (S(1) - yv.data[i]);
      }
    });
  }

  Val exp(Val a) {
    Tensor<S> out = val(a);
    for (auto& x : out.data) x = std::exp(x);
    return unary(a, std::move(out), [this, a](const Tensor<S>& gy, Val y) {
      const Tensor<S>& yv = val(y);
      Tensor<S>& ga = gbuf(a.id);
      for (int i = 0; i < gy.numel(); ++i) ga.data[i] += gy.data[i] * yv.data[i];
    });
  }

  Val log(Val a) {
    Tensor<S> out = val(a);
    for (auto& x : out.data) x = std::log(x);
    return unary(a, std::move(out), [this, a](const Tensor<S>& gy, Val) {
      const Tensor<S>& x = val(a);
      Tensor<S>& ga = gbuf(a.id);
      for (int i = 0; i < gy.numel(); ++i) ga.data[i] += gy.data[i] / x.data[i];
    });
  }

  Val sqrt(Val a) {
    Tensor<S> out = val(a);
    for (auto& x : out.data) x = std::sqrt(x);
    return unary(a, std::move(out), [this, a](const Tensor<S>& gy, Val y) {
      const Tensor<S>& yv = val(y);
      Tensor<S>& ga = gbuf(a.id);
      for (int i = 0; i < gy.numel(); ++i) {
        ga.data[i] += gy.data[i] * S(0.5) / yv.data[i];
      }
    });
  }

  // Pass-through gradient inside [lo, hi], zero outside.
  Val clamp(Val a, S lo, S hi) {
    Tensor<S> out = val(a);
    for (auto& x : out.data) x = x < lo ? lo : (x > hi ? hi : x);
    return unary(a, std::move(out), [this, a, lo, hi](const Tensor<S>& gy, Val) {
      const Tensor<S>& x = val(a);
      Tensor<S>& ga = gbuf(a.id);
      for (int i = 0; i < gy.numel(); ++i) {
        if (x.data[i] >= lo && x.data[i] <= hi) ga.data[i] += gy.data[i];
      }
    });
  }

  // ---- linear algebra ----------------------------------------------------

  Val matmul(Val a, Val b) {
    const Tensor<S>& A = val(a);
    const Tensor<S>& B = val(b);
    if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.rows()) {
      throw DimensionError("matmul shape mismatch: " + A.shape_str() + " x " +
                           B.shape_str());
    }
    const int m = A.rows(), k = A.cols(), n = B.cols();
    Tensor<S> out = Tensor<S>::zeros({m, n});
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < k; ++p) {
        const S aip = A.at(i, p);
        for (int j = 0; j < n; ++j) out.at(i, j) += aip * B.at(p, j);
      }
    }
    const bool ng = needs_grad(a) || needs_grad(b);
    Val y = push(std::move(out), ng, nullptr);
    if (ng) {
      nodes_[y.id].back = [this, a, b, y, m, k, n] {
        const Tensor<S>& gy = nodes_[y.id].grad;
        const Tensor<S>& A2 = val(a);
        const Tensor<S>& B2 = val(b);
        if (needs_grad(a)) {
          Tensor<S>& ga = gbuf(a.id);  // gy * B^T
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
              const S g = gy.at(i, j);
              for (int p = 0; p < k; ++p) ga.at(i, p) += g * B2.at(p, j);
            }
        }
        if (needs_grad(b)) {
          Tensor<S>& gb = gbuf(b.id);  // A^T * gy
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              const S av = A2.at(i, p);
              for (int j = 0; j < n; ++j) gb.at(p, j) += av * gy.at(i, j);
            }
        }
      };
    }
    return y;
  }

  // y = A x, A [m x n], x [n] -> [m]
  Val matvec(Val a, Val x) {
    const Tensor<S>& A = val(a);
    const Tensor<S>& X = val(x);
    if (A.ndim() != 2 || X.ndim() != 1 || A.cols() != X.numel()) {
      throw DimensionError("matvec shape mismatch: " + A.shape_str() + " x " +
                           X.shape_str());
    }
    const int m = A.rows(), n = A.cols();
    Tensor<S> out = Tensor<S>::zeros({m});
    for (int i = 0; i < m; ++i) {
      S acc = 0;
      const S* row = A.data.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) acc += row[j] * X.data[j];
      out.data[i] = acc;
    }
    const bool ng = needs_grad(a) || needs_grad(x);
    Val y = push(std::move(out), ng, nullptr);
    if (ng) {
      nodes_[y.id].back = [this, a, x, y, m, n] {
        const Tensor<S>& gy = nodes_[y.id].grad;
        const Tensor<S>& A2 = val(a);
        const Tensor<S>& X2 = val(x);
        if (needs_grad(a)) {
          Tensor<S>& ga = gbuf(a.id);
          for (int i = 0; i < m; ++i) {
            const S g = gy.data[i];
            S* row = ga.data.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) row[j] += g * X2.data[j];
          }
        }
        if (needs_grad(x)) {
          Tensor<S>& gx = gbuf(x.id);
          for (int i = 0; i < m; ++i) {
            const S g = gy.data[i];
            const S* row = A2.data.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) gx.data[j] += g * row[j];
          }
        }
      };
    }
    return y;
  }

  // ---- shape -------------------------------------------------------------

  Val concat(std::span<const Val> parts) {
    if (parts.empty()) throw ConfigError("concat of zero tensors");
    int total = 0;
    for (Val p : parts) {
      if (val(p).ndim() != 1) {
        throw DimensionError("concat expects rank-1 tensors, got " +
                             val(p).shape_str());
      }
      total += val(p).numel();
    }
    Tensor<S> out = Tensor<S>::zeros({total});
    int off = 0;
    bool ng = false;
    for (Val p : parts) {
      const Tensor<S>& t = val(p);
      std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
      off += t.numel();
      ng = ng || needs_grad(p);
    }
    std::vector<Val> owned(parts.begin(), parts.end());
    Val y = push(std::move(out), ng, nullptr);
    if (ng) {
      nodes_[y.id].back = [this, owned = std::move(owned), y] {
        const Tensor<S>& gy = nodes_[y.id].grad;
        int off2 = 0;
        for (Val p : owned) {
          const int n = val(p).numel();
          if (needs_grad(p)) {
            Tensor<S>& gp = gbuf(p.id);
            for (int i = 0; i < n; ++i) gp.data[i] += gy.data[off2 + i];
          }
          off2 += n;
        }
      };
    }
    return y;
  }

  Val concat2(Val a, Val b) {
    const Val parts[2] = {a, b};
    return concat(parts);
  }

  Val slice(Val a, int start, int len) {
    const Tensor<S>& x = val(a);
    if (x.ndim() != 1 || start < 0 || len <= 0 || start + len > x.numel()) {
      throw DimensionError("slice [" + std::to_string(start) + ", " +
                           std::to_string(start + len) + ") out of range for " +
                           x.shape_str());
    }
    Tensor<S> out({len}, std::vector<S>(x.data.begin() + start,
                                        x.data.begin() + start + len));
    return unary(a, std::move(out),
                 [this, a, start, len](const Tensor<S>& gy, Val) {
                   Tensor<S>& ga = gbuf(a.id);
                   for (int i = 0; i < len; ++i) ga.data[start + i] += gy.data[i];
                 });
  }

  Val sum(Val a) {
    S acc = 0;
    for (S v : val(a).data) acc += v;
    return unary(a, Tensor<S>::scalar(acc), [this, a](const Tensor<S>& gy, Val) {
      Tensor<S>& ga = gbuf(a.id);
      for (auto& g : ga.data) g += gy.data[0];
    });
  }

  Val mean(Val a) {
    const int n = val(a).numel();
    S acc = 0;
    for (S v : val(a).data) acc += v;
    acc /= static_cast<S>(n);
    return unary(a, Tensor<S>::scalar(acc),
                 [this, a, n](const Tensor<S>& gy, Val) {
                   Tensor<S>& ga = gbuf(a.id);
                   const S g = gy.data[0] / static_cast<S>(n);
                   for (auto& x : ga.data) x += g;
                 });
  }

  // {1} -> any shape, or {n} -> {r, n} row replication.
  Val broadcast_to(Val a, std::vector<int> shape) {
    const Tensor<S>& x = val(a);
    Tensor<S> out = Tensor<S>::zeros(shape);
    if (x.numel() == 1) {
      for (auto& v : out.data) v = x.data[0];
      return unary(a, std::move(out), [this, a](const Tensor<S>& gy, Val) {
        Tensor<S>& ga = gbuf(a.id);
        for (S g : gy.data) ga.data[0] += g;
      });
    }
    if (x.ndim() == 1 && shape.size() == 2 && shape[1] == x.numel()) {
      const int r = shape[0], n = shape[1];
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.data[j];
      return unary(a, std::move(out), [this, a, r, n](const Tensor<S>& gy, Val) {
        Tensor<S>& ga = gbuf(a.id);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < n; ++j) ga.data[j] += gy.at(i, j);
      });
    }
    throw DimensionError("broadcast " + x.shape_str() + " -> " +
                         Tensor<S>::zeros(shape).shape_str() + " unsupported");
  }

  Val dot(Val a, Val b) { return sum(mul(a, b)); }

  // ---- model-specific ----------------------------------------------------

  // Softmax over the positions whose bias entry is 0; positions with a -inf
  // bias get weight exactly 0 and contribute no gradient. The -inf entries
  // are sentinels only and never enter arithmetic. All positions masked
  // yields the all-zero vector.
  Val masked_softmax(Val logits, const Tensor<S>& bias) {
    const Tensor<S>& x = val(logits);
    if (x.ndim() != 1 || !x.same_shape(bias)) {
      throw DimensionError("masked_softmax shape mismatch: " + x.shape_str() +
                           " vs bias " + bias.shape_str());
    }
    const int n = x.numel();
    std::vector<uint8_t> keep(n, 0);
    for (int i = 0; i < n; ++i) {
      const S b = bias.data[i];
      if (b == S(0)) {
        keep[i] = 1;
      } else if (!(std::isinf(static_cast<double>(b)) && b < S(0))) {
        throw ConfigError("masked_softmax bias entries must be 0 or -inf");
      }
    }
    Tensor<S> out = Tensor<S>::zeros({n});
    S mx = std::numeric_limits<S>::lowest();
    bool any = false;
    for (int i = 0; i < n; ++i) {
      if (keep[i]) {
        any = true;
        mx = std::max(mx, x.data[i]);
      }
    }
    if (any) {
      S denom = 0;
      for (int i = 0; i < n; ++i) {
        if (keep[i]) {
          out.data[i] = std::exp(x.data[i] - mx);
          denom += out.data[i];
        }
      }
      for (int i = 0; i < n; ++i) out.data[i] /= denom;
    }
    return unary(logits, std::move(out),
                 [this, logits, keep = std::move(keep), n](const Tensor<S>& gy,
                                                           Val y) {
                   const Tensor<S>& yv = val(y);
                   Tensor<S>& gl = gbuf(logits.id);
                   S inner = 0;
                   for (int i = 0; i < n; ++i) inner += yv.data[i] * gy.data[i];
                   for (int i = 0; i < n; ++i) {
                     if (keep[i]) {
                       gl.data[i] += yv.data[i] * (gy.data[i] - inner);
                     }
                   }
                 });
  }

  Val layer_norm(Val x, Val gain, Val shift) {
    const Tensor<S>& xv = val(x);
    const int n = xv.numel();
    if (n < 2) {
      throw ConfigError("layer_norm requires dimension >= 2, got " +
                        std::to_string(n));
    }
    if (!xv.same_shape(val(gain)) || !xv.same_shape(val(shift))) {
      throw DimensionError("layer_norm affine shape mismatch");
    }
    constexpr S kEps = S(1e-5);
    S mu = 0;
    for (S v : xv.data) mu += v;
    mu /= static_cast<S>(n);
    S var = 0;
    for (S v : xv.data) var += (v - mu) * (v - mu);
    var /= static_cast<S>(n);
    const S inv = S(1) / std::sqrt(var + kEps);
    Tensor<S> xhat = Tensor<S>::zeros({n});
    Tensor<S> out = Tensor<S>::zeros({n});
    const Tensor<S>& g = val(gain);
    const Tensor<S>& s = val(shift);
    for (int i = 0; i < n; ++i) {
      xhat.data[i] = (xv.data[i] - mu) * inv;
      out.data[i] = g.data[i] * xhat.data[i] + s.data[i];
    }
    const bool ng = needs_grad(x) || needs_grad(gain) || needs_grad(shift);
    Val y = push(std::move(out), ng, nullptr);
    if (ng) {
      nodes_[y.id].back = [this, x, gain, shift, y, n, inv,
                           xhat = std::move(xhat)] {
        const Tensor<S>& gy = nodes_[y.id].grad;
        const Tensor<S>& gv = val(gain);
        if (needs_grad(gain)) {
          Tensor<S>& gg = gbuf(gain.id);
          for (int i = 0; i < n; ++i) gg.data[i] += gy.data[i] * xhat.data[i];
        }
        if (needs_grad(shift)) {
          Tensor<S>& gs = gbuf(shift.id);
          for (int i = 0; i < n; ++i) gs.data[i] += gy.data[i];
        }
        if (needs_grad(x)) {
          Tensor<S>& gx = gbuf(x.id);
          S m1 = 0, m2 = 0;
          for (int i = 0; i < n; ++i) {
            const S gxh = gy.data[i] * gv.data[i];
            m1 += gxh;
            m2 += gxh * xhat.data[i];
          }
          m1 /= static_cast<S>(n);
          m2 /= static_cast<S>(n);
          for (int i = 0; i < n; ++i) {
            const S gxh = gy.data[i] * gv.data[i];
            gx.data[i] += (gxh - m1 - xhat.data[i] * m2) * inv;
          }
        }
      };
    }
    return y;
  }

 private:
  enum class BinOp { kAdd, kSub, kMul, kDiv };

  struct Node {
    Tensor<S> val;
    Tensor<S> grad;  // empty until first touched by backward
    std::function<void()> back;
    bool needs_grad = false;
  };

  const Tensor<S>& val(Val v) const { return nodes_[v.id].val; }
  bool needs_grad(Val v) const { return nodes_[v.id].needs_grad; }

  Tensor<S>& gbuf(int id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor<S>::zeros(n.val.shape);
    return n.grad;
  }

  Val push(Tensor<S> t, bool ng, std::function<void()> back) {
    nodes_.push_back(Node{std::move(t), {}, std::move(back), ng});
    return Val{static_cast<int>(nodes_.size()) - 1};
  }

  // Single-input op helper; fn(gy, y) accumulates into the input.
  template <class Fn>
  Val unary(Val a, Tensor<S> out, Fn fn) {
    const bool ng = needs_grad(a);
    Val y = push(std::move(out), ng, nullptr);
    if (ng) {
      nodes_[y.id].back = [this, y, fn = std::move(fn)] {
        fn(nodes_[y.id].grad, y);
      };
    }
    return y;
  }

  // Elementwise with same shapes, or scalar {1} on either side.
  Val binary(Val a, Val b, BinOp op) {
    const Tensor<S>& A = val(a);
    const Tensor<S>& B = val(b);
    const bool a_scalar = A.numel() == 1 && B.numel() > 1;
    const bool b_scalar = B.numel() == 1 && A.numel() > 1;
    if (!a_scalar && !b_scalar && !A.same_shape(B)) {
      throw DimensionError("elementwise shape mismatch: " + A.shape_str() +
                           " vs " + B.shape_str());
    }
    const int n = std::max(A.numel(), B.numel());
    Tensor<S> out = Tensor<S>::zeros(a_scalar ? B.shape : A.shape);
    for (int i = 0; i < n; ++i) {
      const S x = A.data[a_scalar ? 0 : i];
      const S y = B.data[b_scalar ? 0 : i];
      switch (op) {
        case BinOp::kAdd: out.data[i] = x + y; break;
        case BinOp::kSub: out.data[i] = x - y; break;
        case BinOp::kMul: out.data[i] = x * y; break;
        case BinOp::kDiv: out.data[i] = x / y; break;
      }
    }
    const bool ng = needs_grad(a) || needs_grad(b);
    Val y = push(std::move(out), ng, nullptr);
    if (ng) {
      nodes_[y.id].back = [this, a, b, y, op, a_scalar, b_scalar, n] {
        const Tensor<S>& gy = nodes_[y.id].grad;
        const Tensor<S>& A2 = val(a);
        const Tensor<S>& B2 = val(b);
        for (int i = 0; i < n; ++i) {
          const S g = gy.data[i];
          const S x = A2.data[a_scalar ? 0 : i];
          const S z = B2.data[b_scalar ? 0 : i];
          S da = 0, db = 0;
          switch (op) {
            case BinOp::kAdd: da = g; db = g; break;
            case BinOp::kSub: da = g; db = -g; break;
            case BinOp::kMul: da = g * z; db = g * x; break;
            case BinOp::kDiv: da = g / z; db = -g * x / (z * z); break;
          }
          if (needs_grad(a)) gbuf(a.id).data[a_scalar ? 0 : i] += da;
          if (needs_grad(b)) gbuf(b.id).data[b_scalar ? 0 : i] += db;
        }
      };
    }
    return y;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> param_ids_;
};

}  // namespace missfuse::diff
