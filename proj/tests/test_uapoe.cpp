#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "missfuse/grad_check.hpp"
#include "missfuse/rng.hpp"
#include "missfuse/uapoe.hpp"
#include "missfuse/verify.hpp"

using namespace missfuse;
using diff::Graph;
using diff::Param;
using diff::Tensor;
using diff::Val;

namespace {

GaussianExpert make_expert(std::vector<double> mu, std::vector<double> var) {
  return GaussianExpert{std::move(mu), std::move(var)};
}

std::vector<GaussianExpert> random_experts(int count, int dim, Rng& rng) {
  std::vector<GaussianExpert> experts(count);
  for (auto& e : experts) {
    for (int d = 0; d < dim; ++d) {
      e.mu.push_back(rng.uniform(-2.0, 2.0));
      e.var.push_back(std::exp(rng.uniform(-3.0, 3.0)));
    }
  }
  return experts;
}

}  // namespace

TEST_CASE("fuse closed forms by hand") {
  auto single = fuse(std::vector<GaussianExpert>{make_expert({0.0}, {1.0})});
  CHECK(single.var[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(single.mu[0] == 0.0);

  auto pair = fuse(std::vector<GaussianExpert>{make_expert({2.0}, {1.0}),
                                               make_expert({0.0}, {1.0})});
  CHECK(pair.var[0] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(pair.mu[0] == doctest::Approx(2.0 / 3).epsilon(1e-15));
}

TEST_CASE("fuse matches the grid-product oracle") {
  auto result = verify::poe_grid_check(40, 91);
  CAPTURE(result.detail);
  CHECK(result.pass);
}

TEST_CASE("fuse order invariance and prior dominance") {
  Rng rng(92);
  for (int trial = 0; trial < 30; ++trial) {
    auto experts = random_experts(1 + rng.uniform_int(4), 3, rng);
    auto fused = fuse(experts);

    auto reversed = experts;
    std::reverse(reversed.begin(), reversed.end());
    auto fused_rev = fuse(reversed);
    for (int d = 0; d < 3; ++d) {
      CHECK(std::abs(fused.mu[d] - fused_rev.mu[d]) <= 1e-10);
      CHECK(std::abs(fused.var[d] - fused_rev.var[d]) <= 1e-10);
      CHECK(fused.var[d] <= 1.0);
      for (const auto& e : experts) CHECK(fused.var[d] <= e.var[d]);
    }
  }
}

TEST_CASE("an infinitely uncertain expert drops out of the fusion exactly") {
  Rng rng(93);
  auto experts = random_experts(3, 2, rng);
  auto without = fuse(experts);

  auto with_huge = experts;
  with_huge.push_back(make_expert({5.0, -5.0}, {1e300, 1e300}));
  auto fused = fuse(with_huge);
  for (int d = 0; d < 2; ++d) {
    CHECK(fused.mu[d] == without.mu[d]);
    CHECK(fused.var[d] == without.var[d]);
  }
}

TEST_CASE("raising one expert's variance moves the mean toward the others") {
  auto low = fuse(std::vector<GaussianExpert>{make_expert({0.0}, {1.0}),
                                              make_expert({4.0}, {0.5})});
  auto high = fuse(std::vector<GaussianExpert>{make_expert({0.0}, {1.0}),
                                               make_expert({4.0}, {8.0})});
  auto only_first = fuse(std::vector<GaussianExpert>{make_expert({0.0}, {1.0})});
  CHECK(std::abs(high.mu[0] - only_first.mu[0]) <
        std::abs(low.mu[0] - only_first.mu[0]));
}

TEST_CASE("removing a unit-variance expert shifts the fused mean") {
  auto with = fuse(std::vector<GaussianExpert>{make_expert({1.0}, {1.0}),
                                               make_expert({3.0}, {1.0})});
  auto without = fuse(std::vector<GaussianExpert>{make_expert({1.0}, {1.0})});
  CHECK(with.mu[0] != without.mu[0]);
}

TEST_CASE("kl_to_prior closed forms and nonnegativity") {
  CHECK(kl_to_prior(FusedPosterior{{0.0}, {1.0}}) <= 1e-12);
  CHECK(kl_to_prior(FusedPosterior{{1.0}, {1.0}}) ==
        doctest::Approx(0.5).epsilon(1e-15));

  Rng rng(94);
  for (int trial = 0; trial < 50; ++trial) {
    FusedPosterior post;
    const int dim = 1 + rng.uniform_int(4);
    for (int d = 0; d < dim; ++d) {
      post.mu.push_back(rng.uniform(-3.0, 3.0));
      post.var.push_back(std::exp(rng.uniform(-3.0, 2.0)));
    }
    CHECK(kl_to_prior(post) >= 0.0);
  }
}

TEST_CASE("kl_to_prior matches the Monte Carlo oracle") {
  auto result = verify::kl_mc_check(10, 100000, 95);
  CAPTURE(result.detail);
  CHECK(result.pass);
}

TEST_CASE("expert head variance parameterization") {
  const int latent = 3;
  auto head = make_head_params<double>(1, 4, latent, 2);
  // zero weights and bias -> logvar 0 -> unit variance
  Graph<double> g;
  auto z = g.constant(Tensor<double>::vec({0.5, -1.0, 2.0, 0.1}));
  auto e = expert(g, z, 0, head, latent, false);
  for (double v : g.value(e.var).data) CHECK(v == 1.0);

  // logvar forced far below the clamp floor
  for (int d = 0; d < latent; ++d) head.expert_b.at(0).value.data[latent + d] = -50.0;
  Graph<double> g2;
  auto e2 = expert(g2, g2.constant(Tensor<double>::vec({0.5, -1.0, 2.0, 0.1})),
                   0, head, latent, false);
  for (double v : g2.value(e2.var).data) {
    CHECK(v == doctest::Approx(std::exp(-10.0)).epsilon(1e-12));
  }

  // random head: variance strictly positive
  Rng rng(96);
  init_head(head, 4, latent, rng);
  Graph<double> g3;
  auto e3 = expert(g3, g3.constant(Tensor<double>::vec({0.5, -1.0, 2.0, 0.1})),
                   0, head, latent, false);
  for (double v : g3.value(e3.var).data) CHECK(v > 0.0);
}

TEST_CASE("deterministic prediction is the softmax at the posterior mean") {
  Rng rng(97);
  Tensor<double> w = Tensor<double>::zeros({3, 2});
  Tensor<double> b = Tensor<double>::zeros({3});
  for (auto& v : w.data) v = rng.normal();
  for (auto& v : b.data) v = rng.normal();

  FusedPosterior post{{0.7, -0.4}, {0.2, 0.5}};
  auto p = predict_probs(post, w, b, 10, rng, /*deterministic=*/true);

  std::vector<double> logits(3);
  for (int c = 0; c < 3; ++c) {
    logits[c] = b.data[c] + w.at(c, 0) * post.mu[0] + w.at(c, 1) * post.mu[1];
  }
  auto expected = softmax_plain(logits);
  for (int c = 0; c < 3; ++c) {
    CHECK(p[c] == doctest::Approx(expected[c]).epsilon(1e-12));
  }
}

TEST_CASE("zero classifier yields the uniform distribution") {
  Tensor<double> w = Tensor<double>::zeros({4, 2});
  Tensor<double> b = Tensor<double>::zeros({4});
  Rng rng(98);
  FusedPosterior post{{0.7, -0.4}, {0.2, 0.5}};
  for (bool deterministic : {true, false}) {
    auto p = predict_probs(post, w, b, 50, rng, deterministic);
    for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("prediction validity: simplex membership") {
  Rng rng(99);
  Tensor<double> w = Tensor<double>::zeros({3, 4});
  Tensor<double> b = Tensor<double>::zeros({3});
  for (auto& v : w.data) v = rng.normal();
  for (auto& v : b.data) v = rng.normal();
  for (int trial = 0; trial < 20; ++trial) {
    FusedPosterior post;
    for (int d = 0; d < 4; ++d) {
      post.mu.push_back(rng.uniform(-2, 2));
      post.var.push_back(std::exp(rng.uniform(-2, 1)));
    }
    auto p = predict_probs(post, w, b, 16, rng, false);
    double total = 0;
    for (double v : p) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
}

TEST_CASE("Monte Carlo estimates at two draw counts agree within 3 SE") {
  Rng rng(100);
  const int dim = 3, classes = 3;
  Tensor<double> w = Tensor<double>::zeros({classes, dim});
  Tensor<double> b = Tensor<double>::zeros({classes});
  for (auto& v : w.data) v = rng.normal();
  for (auto& v : b.data) v = rng.normal();
  FusedPosterior post{{0.4, -0.8, 0.2}, {0.3, 0.6, 0.15}};

  Rng rng_a(101), rng_b(102), rng_se(103);
  auto p_small = predict_probs(post, w, b, 10000, rng_a, false);
  auto p_large = predict_probs(post, w, b, 100000, rng_b, false);

  // per-class standard error estimated from independent single draws
  const int probe = 4000;
  std::vector<double> sum(classes, 0.0), sum_sq(classes, 0.0);
  for (int k = 0; k < probe; ++k) {
    auto p = predict_probs(post, w, b, 1, rng_se, false);
    for (int c = 0; c < classes; ++c) {
      sum[c] += p[c];
      sum_sq[c] += p[c] * p[c];
    }
  }
  for (int c = 0; c < classes; ++c) {
    const double var = (sum_sq[c] - sum[c] * sum[c] / probe) / (probe - 1);
    const double se =
        std::sqrt(var / 10000.0 + var / 100000.0);  // combined two-sample SE
    CHECK(std::abs(p_small[c] - p_large[c]) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("predict rejects non-positive draw counts") {
  Tensor<double> w = Tensor<double>::zeros({2, 1});
  Tensor<double> b = Tensor<double>::zeros({2});
  Rng rng(104);
  FusedPosterior post{{0.0}, {1.0}};
  CHECK_THROWS_AS(predict_probs(post, w, b, 0, rng, false), ConfigError);
}

TEST_CASE("tape fusion and prediction agree with the plain route") {
  Rng rng(105);
  const int dim = 4, classes = 3;
  auto head = make_head_params<double>(2, dim, dim, classes);
  init_head(head, dim, dim, rng);

  for (int trial = 0; trial < 10; ++trial) {
    Graph<double> g;
    std::vector<ExpertVals<double>> tape_experts;
    std::vector<GaussianExpert> plain_experts;
    for (int m = 0; m < 2; ++m) {
      Tensor<double> z = Tensor<double>::zeros({dim});
      for (auto& v : z.data) v = rng.normal();
      auto e = expert(g, g.constant(z), m, head, dim, false);
      tape_experts.push_back(e);
      GaussianExpert pe;
      for (double v : g.value(e.mu).data) pe.mu.push_back(v);
      for (double v : g.value(e.var).data) pe.var.push_back(v);
      plain_experts.push_back(pe);
    }
    auto tape_post = fuse_vals<double>(g, tape_experts);
    auto plain_post = fuse(plain_experts);
    for (int d = 0; d < dim; ++d) {
      CHECK(g.value(tape_post.mu).data[d] ==
            doctest::Approx(plain_post.mu[d]).epsilon(1e-12));
      CHECK(g.value(tape_post.var).data[d] ==
            doctest::Approx(plain_post.var[d]).epsilon(1e-12));
    }

    // deterministic prediction route equivalence
    Rng unused(1);
    auto tape_p = g.value(predict_vals(g, tape_post, head, 1, unused, false));
    auto plain_p = predict_probs(plain_post, head.cls_w.value,
                                 head.cls_b.value, 1, unused, true);
    for (int c = 0; c < classes; ++c) {
      CHECK(tape_p.data[c] == doctest::Approx(plain_p[c]).epsilon(1e-12));
    }

    // KL route equivalence
    Graph<double>& gref = g;
    auto tape_kl = gref.value(kl_vals(gref, tape_post)).data[0];
    CHECK(tape_kl == doctest::Approx(kl_to_prior(plain_post)).epsilon(1e-12));
  }
}

TEST_CASE("gradient check through expert, fusion, prediction and KL") {
  Rng rng(106);
  const int dim = 4, classes = 3, modalities = 3;
  auto head = make_head_params<double>(modalities, dim, dim, classes);
  init_head(head, dim, dim, rng);

  std::vector<Tensor<double>> zs;
  for (int m = 0; m < modalities; ++m) {
    auto z = Tensor<double>::zeros({dim});
    for (auto& v : z.data) v = rng.normal();
    zs.push_back(z);
  }
  const uint64_t mc_seed = 777;

  auto make_loss = [&](Graph<double>& g) {
    Rng mc(mc_seed);
    std::vector<ExpertVals<double>> experts;
    for (int m = 0; m < modalities; ++m) {
      experts.push_back(expert(g, g.constant(zs[m]), m, head, dim, false));
    }
    auto post = fuse_vals<double>(g, experts);
    auto probs = predict_vals(g, post, head, 4, mc, true);
    auto ce = g.mul_const(g.log(g.add_const(g.slice(probs, 1, 1), 1e-12)), -1.0);
    return g.add(ce, g.mul_const(kl_vals(g, post), 1e-3));
  };

  std::vector<Param<double>*> params;
  for (auto& w : head.expert_w) params.push_back(&w);
  for (auto& b : head.expert_b) params.push_back(&b);
  params.push_back(&head.cls_w);
  params.push_back(&head.cls_b);

  auto report = diff::grad_check(make_loss, params);
  CAPTURE(report.worst_param);
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("fault injection hook breaks the grid oracle") {
  set_fuse_fault_injection(true);
  auto result = verify::poe_grid_check(10, 107);
  set_fuse_fault_injection(false);
  CHECK_FALSE(result.pass);
}
