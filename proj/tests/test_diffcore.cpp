#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "missfuse/grad_check.hpp"
#include "missfuse/graph.hpp"
#include "missfuse/rng.hpp"
#include "missfuse/tensor.hpp"

using missfuse::ConfigError;
using missfuse::DataError;
using missfuse::DimensionError;
using missfuse::Rng;
using missfuse::diff::Graph;
using missfuse::diff::Param;
using missfuse::diff::Tensor;
using missfuse::diff::Val;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  auto t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

// Independent oracle: naive triple loop.
Tensor<double> matmul_ref(const Tensor<double>& a, const Tensor<double>& b) {
  auto out = Tensor<double>::zeros({a.rows(), b.cols()});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j)
      for (int k = 0; k < a.cols(); ++k) out.at(i, j) += a.at(i, k) * b.at(k, j);
  return out;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
  Graph<double> g;
  auto eye = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto b = g.constant(Tensor<double>({2, 2}, {3, 4, 5, 6}));
  auto y = g.matmul(eye, b);
  CHECK(g.value(y).data == std::vector<double>{3, 4, 5, 6});

  auto p = g.matmul(g.constant(Tensor<double>({1, 1}, {2})),
                    g.constant(Tensor<double>({1, 1}, {3})));
  CHECK(g.value(p).data[0] == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    Graph<double> g;
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto y = g.matmul(g.constant(a), g.constant(b));
    auto ref = matmul_ref(a, b);
    for (int i = 0; i < ref.numel(); ++i) {
      CHECK(std::abs(g.value(y).data[i] - ref.data[i]) <= 1e-12);
    }
  }
}

TEST_CASE("matmul shape mismatch reports both shapes") {
  Graph<double> g;
  auto a = g.constant(Tensor<double>::zeros({2, 3}));
  auto b = g.constant(Tensor<double>::zeros({2, 2}));
  try {
    g.matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("masked_softmax basic conventions") {
  Graph<double> g;

  auto uniform = g.masked_softmax(g.constant(Tensor<double>::vec({0, 0, 0})),
                                  Tensor<double>::vec({0, 0, 0}));
  for (double v : g.value(uniform).data) CHECK(v == doctest::Approx(1.0 / 3));

  auto survivor = g.masked_softmax(g.constant(Tensor<double>::vec({5, 1, 2})),
                                   Tensor<double>::vec({0, -kInf, -kInf}));
  CHECK(g.value(survivor).data == std::vector<double>{1, 0, 0});

  auto all_masked = g.masked_softmax(g.constant(Tensor<double>::vec({1, 2})),
                                     Tensor<double>::vec({-kInf, -kInf}));
  CHECK(g.value(all_masked).data == std::vector<double>{0, 0});
}

TEST_CASE("masked_softmax weight and gradient are exactly zero at masked slots") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Graph<double> g;
    Param<double> logits{"logits", random_tensor({5}, rng, 2.0)};
    Tensor<double> bias = Tensor<double>::vec({0, -kInf, 0, -kInf, 0});
    auto y = g.masked_softmax(g.param(logits), bias);

    double total = 0;
    for (int i = 0; i < 5; ++i) {
      const double w = g.value(y).data[i];
      total += w;
      if (std::isinf(bias.data[i])) CHECK(w == 0.0);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    g.backward(g.sum(g.mul(y, y)));
    const auto* grad = g.grad_of(logits);
    REQUIRE(grad != nullptr);
    CHECK(grad->data[1] == 0.0);
    CHECK(grad->data[3] == 0.0);
  }
}

TEST_CASE("masked_softmax rejects bias entries other than 0 and -inf") {
  Graph<double> g;
  CHECK_THROWS_AS(g.masked_softmax(g.constant(Tensor<double>::vec({1, 2})),
                                   Tensor<double>::vec({0, -1.0})),
                  ConfigError);
}

TEST_CASE("layer_norm fixed points and shift invariance") {
  Graph<double> g;
  auto ones = g.constant(Tensor<double>::vec({1, 1, 1, 1}));
  auto gain = g.constant(Tensor<double>::full({4}, 1.0));
  auto shift = g.constant(Tensor<double>::zeros({4}));
  auto y = g.layer_norm(ones, gain, shift);
  for (double v : g.value(y).data) CHECK(v == 0.0);

  auto pm = g.layer_norm(g.constant(Tensor<double>::vec({-1, 1})),
                         g.constant(Tensor<double>::full({2}, 1.0)),
                         g.constant(Tensor<double>::zeros({2})));
  CHECK(g.value(pm).data[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(g.value(pm).data[1] == doctest::Approx(1.0).epsilon(1e-4));

  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Graph<double> g2;
    auto x = random_tensor({16}, rng, 3.0);
    auto gn = g2.constant(Tensor<double>::full({16}, 1.0));
    auto sh = g2.constant(Tensor<double>::zeros({16}));
    auto out = g2.value(g2.layer_norm(g2.constant(x), gn, sh));

    double mu = 0;
    for (double v : out.data) mu += v;
    mu /= 16;
    double var = 0;
    for (double v : out.data) var += (v - mu) * (v - mu);
    var /= 16;
    CHECK(std::abs(mu) <= 1e-10);
    CHECK(std::abs(var - 1.0) <= 1e-4);

    // adding a constant to all inputs leaves pre-affine output unchanged
    auto shifted = x;
    for (auto& v : shifted.data) v += 7.5;
    auto out2 = g2.value(g2.layer_norm(g2.constant(shifted), gn, sh));
    for (int i = 0; i < 16; ++i) CHECK(std::abs(out.data[i] - out2.data[i]) <= 1e-10);
  }
}

TEST_CASE("layer_norm requires dimension >= 2") {
  Graph<double> g;
  CHECK_THROWS_AS(g.layer_norm(g.constant(Tensor<double>::vec({1.0})),
                               g.constant(Tensor<double>::vec({1.0})),
                               g.constant(Tensor<double>::vec({0.0}))),
                  ConfigError);
}

TEST_CASE("grad_check on w^2 at w=3") {
  Param<double> w{"w", Tensor<double>::scalar(3.0)};
  Param<double>* params[] = {&w};
  auto report = missfuse::diff::grad_check(
      [&](Graph<double>& g) {
        auto wv = g.param(w);
        return g.sum(g.mul(wv, wv));
      },
      params);
  CHECK(report.max_rel_err <= 1e-8);

  Graph<double> g;
  auto wv = g.param(w);
  g.backward(g.sum(g.mul(wv, wv)));
  CHECK(g.grad_of(w)->data[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("grad_check aborts on non-finite loss") {
  Param<double> w{"w", Tensor<double>::scalar(-1.0)};
  Param<double>* params[] = {&w};
  CHECK_THROWS_AS(missfuse::diff::grad_check(
                      [&](Graph<double>& g) { return g.log(g.param(w)); },
                      params),
                  DataError);
}

// Every op's tape gradient agrees with central finite differences on
// randomized small shapes.
TEST_CASE("finite-difference agreement across all ops") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + rng.uniform_int(5);
    const int m = 2 + rng.uniform_int(4);

    Param<double> a{"a", random_tensor({n}, rng)};
    Param<double> b{"b", random_tensor({n}, rng)};
    Param<double> c{"c", random_tensor({m, n}, rng)};
    Param<double> d{"d", random_tensor({n, m}, rng)};
    Param<double> s{"s", Tensor<double>::scalar(0.5 + rng.uniform())};
    // keep div/log/sqrt arguments away from their singularities
    for (auto& v : b.value.data) v = 0.5 + std::abs(v);

    auto loss = [&](Graph<double>& g) {
      auto av = g.param(a);
      auto bv = g.param(b);
      auto cv = g.param(c);
      auto dv = g.param(d);
      auto sv = g.param(s);

      auto e1 = g.add(g.mul(av, bv), g.sub(av, bv));
      auto e2 = g.div(e1, bv);
      auto e3 = g.add(g.sigmoid(e2), g.exp(g.mul_const(av, 0.3)));
      auto e4 = g.add(e3, g.add(g.log(bv), g.sqrt(bv)));
      auto e5 = g.add(e4, g.relu(g.add_const(av, -0.1)));
      auto e6 = g.add(e5, g.clamp(av, -0.8, 0.8));
      auto mv = g.matvec(cv, e6);                       // [m]
      auto mm = g.matmul(cv, dv);                       // [m x m]
      auto bc = g.broadcast_to(sv, {static_cast<int>(m), static_cast<int>(m)});
      auto mm2 = g.mul(mm, bc);
      auto cat = g.concat2(mv, g.slice(e6, 1, n - 1));
      Tensor<double> bias = Tensor<double>::zeros({m + n - 1});
      bias.data[0] = -kInf;
      auto soft = g.masked_softmax(cat, bias);
      auto ln = g.layer_norm(mv, g.broadcast_to(sv, {m}),
                             g.broadcast_to(g.mul_const(sv, 0.1), {m}));
      auto total = g.add(g.add(g.mean(soft), g.mean(mm2)), g.mean(ln));
      return g.add(total, g.mul_const(g.mean(g.mul(soft, soft)), 2.0));
    };

    Param<double>* params[] = {&a, &b, &c, &d, &s};
    auto report = missfuse::diff::grad_check(loss, params);
    CAPTURE(trial);
    CAPTURE(report.worst_param);
    CHECK(report.max_rel_err <= 1e-4);
  }
}

TEST_CASE("scalar broadcast arithmetic grads") {
  Param<double> s{"s", Tensor<double>::scalar(1.7)};
  Param<double> v{"v", Tensor<double>::vec({0.3, -0.8, 2.0})};
  Param<double>* params[] = {&s, &v};
  auto report = missfuse::diff::grad_check(
      [&](Graph<double>& g) {
        auto sv = g.param(s);
        auto vv = g.param(v);
        auto y = g.add(g.mul(sv, vv), g.div(vv, sv));
        return g.sum(g.sub(y, sv));
      },
      params);
  CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("unused parameter reports null gradient") {
  Graph<double> g;
  Param<double> used{"used", Tensor<double>::scalar(2.0)};
  Param<double> unused{"unused", Tensor<double>::scalar(5.0)};
  auto u = g.param(used);
  g.param(unused);
  g.backward(g.mul(u, u));
  CHECK(g.grad_of(used) != nullptr);
  CHECK(g.grad_of(unused) == nullptr);
}
