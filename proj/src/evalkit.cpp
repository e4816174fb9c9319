#include "missfuse/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "missfuse/errors.hpp"

namespace missfuse::eval {

int argmax_lowest(std::span<const double> scores) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw ProtocolError("accuracy: size mismatch or empty input");
  }
  int hits = 0;
  for (size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::vector<double> per_class_f1(const std::vector<int>& predicted,
                                 const std::vector<int>& truth, int classes) {
  std::vector<int> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] == truth[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[truth[i]];
    }
  }
  std::vector<double> f1(classes, 0.0);
  for (int c = 0; c < classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    f1[c] = denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;  // 0/0 defined as 0
  }
  return f1;
}

double macro_f1(const std::vector<int>& predicted,
                const std::vector<int>& truth, int classes) {
  const auto f1 = per_class_f1(predicted, truth, classes);
  return std::accumulate(f1.begin(), f1.end(), 0.0) / classes;
}

std::optional<double> macro_ovr_auc(
    const std::vector<std::vector<double>>& scores,
    const std::vector<int>& labels, int classes) {
  const size_t n = labels.size();
  double total = 0.0;
  int valid = 0;
  std::vector<int> order(n);
  std::vector<double> ranks(n);
  for (int c = 0; c < classes; ++c) {
    size_t n_pos = 0;
    for (int y : labels) n_pos += y == c;
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) continue;  // AUC undefined for this class

    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return scores[a][c] < scores[b][c];
    });
    // midranks over ties
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && scores[order[j + 1]][c] == scores[order[i]][c]) ++j;
      const double midrank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (size_t k = i; k <= j; ++k) ranks[order[k]] = midrank;
      i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (size_t k = 0; k < n; ++k) {
      if (labels[k] == c) rank_sum_pos += ranks[k];
    }
    const double auc =
        (rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0) /
        (static_cast<double>(n_pos) * static_cast<double>(n_neg));
    total += auc;
    ++valid;
  }
  if (valid == 0) return std::nullopt;
  return total / valid;
}

double macro_f1_of_predictor(const Predictor& predict,
                             const std::vector<Sample>& samples, int classes) {
  std::vector<int> pred, truth;
  pred.reserve(samples.size());
  truth.reserve(samples.size());
  for (const auto& s : samples) {
    const auto probs = predict(s);
    pred.push_back(argmax_lowest(probs));
    truth.push_back(s.label);
  }
  return macro_f1(pred, truth, classes);
}

SubsetReport evaluate_subset(const Predictor& predict,
                             const std::vector<Sample>& test,
                             const ModalityMask& mask, int classes) {
  if (!mask.any()) throw ProtocolError("evaluate_subset: empty modality subset");
  if (test.empty()) throw ProtocolError("evaluate_subset: empty test set");

  std::vector<std::vector<double>> scores;
  std::vector<int> pred, truth;
  scores.reserve(test.size());
  for (const auto& s : test) {
    const Sample masked = remask(s, mask);
    auto probs = predict(masked);
    pred.push_back(argmax_lowest(probs));
    truth.push_back(s.label);
    scores.push_back(std::move(probs));
  }

  SubsetReport r;
  r.mask = mask;
  r.n = static_cast<int>(test.size());
  r.acc = accuracy(pred, truth);
  r.per_class_f1 = per_class_f1(pred, truth, classes);
  r.macro_f1 =
      std::accumulate(r.per_class_f1.begin(), r.per_class_f1.end(), 0.0) /
      classes;
  r.auc = macro_ovr_auc(scores, truth, classes);
  return r;
}

EvalSummary evaluate_all(const PredictorFactory& make_predictor,
                         const std::vector<Sample>& test, int num_modalities,
                         int classes, const std::vector<uint64_t>& seeds) {
  if (num_modalities < 1 || num_modalities > 8) {
    throw ProtocolError("evaluate_all: modality count must be in [1, 8]");
  }
  if (seeds.empty()) throw ProtocolError("evaluate_all: empty seed list");

  EvalSummary summary;
  summary.seeds = seeds;
  for (uint64_t seed : seeds) {
    Predictor predict = make_predictor(seed);
    std::vector<SubsetReport> reports;
    const uint32_t max_bits = (1u << num_modalities) - 1;
    for (uint32_t bits = 1; bits <= max_bits; ++bits) {
      reports.push_back(evaluate_subset(
          predict, test, ModalityMask::from_bits(bits, num_modalities),
          classes));
    }
    double acc = 0, f1 = 0, auc = 0;
    int auc_n = 0;
    for (const auto& r : reports) {
      acc += r.acc;
      f1 += r.macro_f1;
      if (r.auc) {
        auc += *r.auc;
        ++auc_n;
      }
    }
    const double n_sub = static_cast<double>(reports.size());
    summary.avg_acc.push_back(acc / n_sub);
    summary.avg_macro_f1.push_back(f1 / n_sub);
    summary.avg_auc.push_back(auc_n > 0 ? auc / auc_n : 0.0);
    summary.per_seed.push_back(std::move(reports));
  }
  summary.acc = mean_std(summary.avg_acc);
  summary.macro_f1 = mean_std(summary.avg_macro_f1);
  summary.auc = mean_std(summary.avg_auc);
  return summary;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_ms(const MeanStd& ms) {
  return fmt(ms.mean) + " (" + fmt(ms.std) + ")";
}

}  // namespace

void write_report(const std::string& path, const EvalSummary& summary,
                  int classes) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open report file for writing: " + path);

  out << "seed\tmask\tn\tacc\tmacro_f1\tauc";
  for (int c = 0; c < classes; ++c) out << "\tf1_" << c;
  out << "\n";
  for (size_t si = 0; si < summary.seeds.size(); ++si) {
    for (const auto& r : summary.per_seed[si]) {
      out << summary.seeds[si] << "\t" << r.mask.to_string() << "\t" << r.n
          << "\t" << fmt(r.acc) << "\t" << fmt(r.macro_f1) << "\t"
          << (r.auc ? fmt(*r.auc) : std::string("na"));
      for (double f1 : r.per_class_f1) out << "\t" << fmt(f1);
      out << "\n";
    }
  }

  out << "# per-subset mean(std) across seeds\n";
  const size_t subsets = summary.per_seed.empty() ? 0 : summary.per_seed[0].size();
  for (size_t k = 0; k < subsets; ++k) {
    std::vector<double> acc, f1, auc;
    for (size_t si = 0; si < summary.seeds.size(); ++si) {
      acc.push_back(summary.per_seed[si][k].acc);
      f1.push_back(summary.per_seed[si][k].macro_f1);
      if (summary.per_seed[si][k].auc) auc.push_back(*summary.per_seed[si][k].auc);
    }
    out << "SUBSET\t" << summary.per_seed[0][k].mask.to_string() << "\tacc\t"
        << fmt_ms(mean_std(acc)) << "\tmacro_f1\t" << fmt_ms(mean_std(f1))
        << "\tauc\t" << (auc.empty() ? std::string("na") : fmt_ms(mean_std(auc)))
        << "\n";
  }
  out << "# average over subsets, mean(std) across seeds\n";
  out << "AVERAGE\tacc\t" << fmt_ms(summary.acc) << "\tmacro_f1\t"
      << fmt_ms(summary.macro_f1) << "\tauc\t" << fmt_ms(summary.auc) << "\n";
}

std::string format_table(const EvalSummary& summary) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %6s %10s %10s %10s\n", "mask", "n",
                "acc", "macro_f1", "auc");
  os << line;
  const size_t subsets = summary.per_seed.empty() ? 0 : summary.per_seed[0].size();
  for (size_t k = 0; k < subsets; ++k) {
    std::vector<double> acc, f1, auc;
    for (size_t si = 0; si < summary.seeds.size(); ++si) {
      acc.push_back(summary.per_seed[si][k].acc);
      f1.push_back(summary.per_seed[si][k].macro_f1);
      if (summary.per_seed[si][k].auc) auc.push_back(*summary.per_seed[si][k].auc);
    }
    std::snprintf(line, sizeof(line), "%-10s %6d %10.4f %10.4f %10.4f\n",
                  summary.per_seed[0][k].mask.to_string().c_str(),
                  summary.per_seed[0][k].n, mean_std(acc).mean,
                  mean_std(f1).mean,
                  auc.empty() ? 0.0 : mean_std(auc).mean);
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-10s %6s %10.4f %10.4f %10.4f\n",
                "average", "", summary.acc.mean, summary.macro_f1.mean,
                summary.auc.mean);
  os << line;
  return os.str();
}

}  // namespace missfuse::eval
