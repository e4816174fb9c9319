#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "missfuse/datagen.hpp"
#include "missfuse/evalkit.hpp"
#include "missfuse/training.hpp"

using namespace missfuse;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string temp_base(const std::string& tag) {
  return (fs::temp_directory_path() / ("missfuse_gen_" + tag)).string();
}

void cleanup(const std::string& base) {
  fs::remove(base + ".manifest");
  fs::remove(base + ".tsv");
}

}  // namespace

TEST_CASE("same seed yields byte-identical cohort files") {
  GenConfig gen;
  gen.n_total = 200;
  gen.seed = 41;
  auto c1 = generate(gen);
  auto c2 = generate(gen);
  CHECK(c1 == c2);

  const auto base1 = temp_base("det1");
  const auto base2 = temp_base("det2");
  write_cohort(c1, base1);
  write_cohort(c2, base2);
  CHECK(slurp(base1 + ".manifest") == slurp(base2 + ".manifest"));
  CHECK(slurp(base1 + ".tsv") == slurp(base2 + ".tsv"));
  cleanup(base1);
  cleanup(base2);
}

TEST_CASE("cohort shape: counts, test completeness, feature placement") {
  GenConfig gen;  // defaults: 2750 total, ratios 8/11, 1/11, 2/11
  gen.seed = 42;
  auto cohort = generate(gen);
  CHECK(cohort.train.size() == 2000);
  CHECK(cohort.val.size() == 250);
  CHECK(cohort.test.size() == 500);

  for (const auto& s : cohort.test) CHECK(s.mask.count() == 4);
  for (const auto* split : {&cohort.train, &cohort.val, &cohort.test}) {
    for (const auto& s : *split) {
      CHECK(s.mask.any());
      for (int m = 0; m < 4; ++m) {
        if (s.mask.observed(m)) {
          CHECK(static_cast<int>(s.features[m].size()) ==
                gen.modality_dims[m]);
        } else {
          CHECK(s.features[m].empty());
        }
      }
    }
  }
}

TEST_CASE("splits are label-stratified within one sample") {
  GenConfig gen;
  gen.n_total = 1100;
  gen.seed = 43;
  auto cohort = generate(gen);

  const double class_share = 1.0 / gen.num_classes;
  for (const auto* split : {&cohort.train, &cohort.val, &cohort.test}) {
    std::vector<int> counts(gen.num_classes, 0);
    for (const auto& s : *split) ++counts[s.label];
    for (int c = 0; c < gen.num_classes; ++c) {
      const double expected = class_share * static_cast<double>(split->size());
      CHECK(std::abs(counts[c] - expected) <= 1.0);
    }
  }
}

TEST_CASE("availability rates converge to the subset-distribution marginals") {
  GenConfig gen;
  gen.n_total = 4400;
  gen.seed = 44;
  auto cohort = generate(gen);

  const auto probs = gen.effective_subset_probs();
  std::vector<double> marginal(4, 0.0);
  for (size_t i = 0; i < probs.size(); ++i) {
    for (int m = 0; m < 4; ++m) {
      if ((i + 1) & (1u << m)) marginal[m] += probs[i];
    }
  }
  const auto rates = availability_rates(cohort);
  const double n = cohort.train.size() + cohort.val.size();
  for (int m = 0; m < 4; ++m) {
    CHECK(std::abs(rates[m] - marginal[m]) <= 3.0 / std::sqrt(n));
  }
}

TEST_CASE("round trip is lossless for a generated cohort") {
  GenConfig gen;
  gen.n_total = 500;
  gen.seed = 45;
  auto cohort = generate(gen);
  const auto base = temp_base("roundtrip");
  write_cohort(cohort, base);
  auto loaded = read_cohort(base);
  CHECK(loaded == cohort);
  cleanup(base);
}

TEST_CASE("round trip with one sample per mask pattern") {
  GenConfig gen;
  gen.num_modalities = 4;
  gen.modality_dims = {2, 3, 3, 3};
  Cohort cohort;
  cohort.config = gen;
  for (uint32_t bits = 1; bits < 16; ++bits) {
    Sample s;
    s.mask = ModalityMask::from_bits(bits, 4);
    s.label = static_cast<int>(bits) % 3;
    s.features.resize(4);
    for (int m = 0; m < 4; ++m) {
      if (!s.mask.observed(m)) continue;
      s.features[m].resize(gen.modality_dims[m]);
      for (size_t j = 0; j < s.features[m].size(); ++j) {
        s.features[m][j] = static_cast<float>(bits) * 0.25f + j;
      }
    }
    cohort.train.push_back(s);
  }
  const auto base = temp_base("masks");
  write_cohort(cohort, base);
  auto loaded = read_cohort(base);
  CHECK(loaded == cohort);

  // 15 rows plus header
  std::istringstream tsv(slurp(base + ".tsv"));
  int lines = 0;
  std::string line;
  while (std::getline(tsv, line)) ++lines;
  CHECK(lines == 16);
  cleanup(base);
}

TEST_CASE("empty cohort round-trips as header-only table") {
  Cohort cohort;
  const auto base = temp_base("empty");
  write_cohort(cohort, base);
  auto loaded = read_cohort(base);
  CHECK(loaded == cohort);
  std::istringstream tsv(slurp(base + ".tsv"));
  int lines = 0;
  std::string line;
  while (std::getline(tsv, line)) ++lines;
  CHECK(lines == 1);
  cleanup(base);
}

TEST_CASE("malformed files raise parse errors with location") {
  GenConfig gen;
  gen.n_total = 30;
  gen.seed = 46;
  auto cohort = generate(gen);
  const auto base = temp_base("corrupt");
  write_cohort(cohort, base);

  // corrupt a feature field on data line 3 (file line 4)
  auto text = slurp(base + ".tsv");
  std::istringstream in(text);
  std::ostringstream out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 4) {
      const auto tab = line.rfind('\t');
      line = line.substr(0, tab + 1) + "not_a_number";
    }
    out << line << "\n";
  }
  {
    std::ofstream f(base + ".tsv");
    f << out.str();
  }
  try {
    read_cohort(base);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }
  cleanup(base);
}

TEST_CASE("invalid configurations are rejected") {
  GenConfig gen;
  gen.split_ratios = {0.5, 0.2, 0.2};  // does not sum to 1
  CHECK_THROWS_AS(generate(gen), ConfigError);

  GenConfig gen2;
  gen2.subset_probs.assign(15, 1.0 / 15.0);
  gen2.subset_probs[14] = 0.0;  // no mass on the full mask
  gen2.subset_probs[0] += 1.0 / 15.0;
  CHECK_THROWS_AS(generate(gen2), ConfigError);
}

TEST_CASE("zero separation cohort trains to chance accuracy") {
  GenConfig gen;
  gen.n_total = 550;
  gen.separation = 0.0;
  gen.seed = 47;
  auto cohort = generate(gen);

  ModelConfig mcfg;
  mcfg.num_modalities = 4;
  mcfg.input_dims = gen.modality_dims;
  mcfg.feat_dim = 12;
  mcfg.heads = 2;

  TrainConfig tcfg;
  tcfg.lr = 1e-3;
  tcfg.warmup_epochs = 2;
  tcfg.max_epochs = 12;
  tcfg.patience = 12;
  tcfg.mc_samples = 3;
  tcfg.seed = 48;

  auto result = train<float>(cohort.train, cohort.val, mcfg, tcfg);
  Rng eval_rng(49);
  std::vector<int> pred, truth;
  for (const auto& s : cohort.test) {
    auto p = infer_probs(result.params, s, 5, eval_rng);
    pred.push_back(eval::argmax_lowest(p));
    truth.push_back(s.label);
  }
  CHECK(std::abs(eval::accuracy(pred, truth) - 1.0 / 3) <= 0.05);
}

TEST_CASE("noise-free well-separated cohort trains to near-perfect accuracy") {
  GenConfig gen;
  gen.n_total = 440;
  gen.separation = 8.0;
  gen.noise_std = 0.0;
  gen.seed = 50;
  std::vector<double> probs(15, 0.0);
  probs[14] = 1.0;  // fully observed training
  gen.subset_probs = probs;
  auto cohort = generate(gen);

  ModelConfig mcfg;
  mcfg.num_modalities = 4;
  mcfg.input_dims = gen.modality_dims;
  mcfg.feat_dim = 16;
  mcfg.heads = 2;

  TrainConfig tcfg;
  tcfg.lr = 3e-3;
  tcfg.warmup_epochs = 2;
  tcfg.max_epochs = 30;
  tcfg.patience = 30;
  tcfg.mc_samples = 3;
  tcfg.seed = 51;

  auto result = train<float>(cohort.train, cohort.val, mcfg, tcfg);
  Rng eval_rng(52);
  std::vector<int> pred, truth;
  for (const auto& s : cohort.test) {
    auto p = infer_probs(result.params, s, 5, eval_rng);
    pred.push_back(eval::argmax_lowest(p));
    truth.push_back(s.label);
  }
  CHECK(eval::accuracy(pred, truth) >= 0.99);
}
