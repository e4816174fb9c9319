#pragma once

// Subset-enumerating evaluation protocol and metrics. A fully observed test
// set is re-masked to every non-empty modality subset; accuracy, per-class
// F1, macro-F1 and macro one-vs-rest AUC are computed per subset and
// averaged, optionally across several evaluation seeds.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "missfuse/types.hpp"

namespace missfuse::eval {

using Predictor = std::function<std::vector<double>(const Sample&)>;
using PredictorFactory = std::function<Predictor(uint64_t seed)>;

struct SubsetReport {
  ModalityMask mask;
  int n = 0;
  double acc = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> auc;  // absent when undefined for every class
  std::vector<double> per_class_f1;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct EvalSummary {
  std::vector<uint64_t> seeds;
  std::vector<std::vector<SubsetReport>> per_seed;  // [seed][subset]
  std::vector<double> avg_acc;                      // per seed, over subsets
  std::vector<double> avg_macro_f1;
  std::vector<double> avg_auc;
  MeanStd acc, macro_f1, auc;  // across seeds
};

// Ties resolve to the lowest class index.
int argmax_lowest(std::span<const double> scores);

std::vector<double> per_class_f1(const std::vector<int>& predicted,
                                 const std::vector<int>& truth, int classes);

double macro_f1(const std::vector<int>& predicted,
                const std::vector<int>& truth, int classes);

double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& truth);

// Rank-based (Mann-Whitney) one-vs-rest AUC with midrank tie handling,
// macro-averaged over classes that have both positives and negatives.
std::optional<double> macro_ovr_auc(
    const std::vector<std::vector<double>>& scores,
    const std::vector<int>& labels, int classes);

double macro_f1_of_predictor(const Predictor& predict,
                             const std::vector<Sample>& samples, int classes);

SubsetReport evaluate_subset(const Predictor& predict,
                             const std::vector<Sample>& test,
                             const ModalityMask& mask, int classes);

// Iterates all 2^M - 1 masks in ascending bit order for every seed.
EvalSummary evaluate_all(const PredictorFactory& make_predictor,
                         const std::vector<Sample>& test, int num_modalities,
                         int classes, const std::vector<uint64_t>& seeds);

MeanStd mean_std(std::span<const double> values);

void write_report(const std::string& path, const EvalSummary& summary,
                  int classes);

// Aligned human-readable table of the per-subset means.
std::string format_table(const EvalSummary& summary);

}  // namespace missfuse::eval
