#pragma once

// End-to-end objective (mean cross-entropy + beta * KL to the prior), Adam
// with linear warmup into cosine decay, early stopping on validation
// macro-F1, and per-epoch history records.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "missfuse/errors.hpp"
#include "missfuse/evalkit.hpp"
#include "missfuse/graph.hpp"
#include "missfuse/model.hpp"
#include "missfuse/rng.hpp"
#include "missfuse/types.hpp"

namespace missfuse {

struct TrainConfig {
  double lr = 2e-4;
  int warmup_epochs = 15;
  int max_epochs = 100;
  int patience = 40;
  int batch_size = 32;
  double beta = 1e-3;
  int mc_samples = 10;  // posterior draws per prediction
  bool mc_during_training = true;
  uint64_t seed = 0;  // 0 lets the run config derive it from the root seed
  std::string precision = "f32";  // f32 | f64

  void validate() const {
    if (beta < 0) throw ConfigError("train.beta must be >= 0");
    if (warmup_epochs < 0 || warmup_epochs >= max_epochs) {
      throw ConfigError("train.warmup_epochs must be in [0, max_epochs)");
    }
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (mc_samples < 1) throw ConfigError("train.mc_samples must be >= 1");
    if (precision != "f32" && precision != "f64") {
      throw ConfigError("train.precision must be f32 or f64");
    }
  }
};

// Linear ramp 0 -> lr over the warmup epochs, then cosine decay to 0.
double lr_at(int epoch, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double val_macro_f1 = 0.0;
  double kl_term = 0.0;  // beta-weighted KL contribution to the loss
};

void write_history(const std::string& path,
                   const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history(const std::string& path);

template <class S>
struct BatchLoss {
  diff::Val total;
  double value = 0.0;
  double kl_contribution = 0.0;  // 0 exactly when beta == 0
};

// Mean over the batch of CE(p, y) + beta * KL(q || prior). With beta == 0
// the objective graph is the plain mean cross-entropy, bit for bit.
template <class S>
BatchLoss<S> batch_loss(diff::Graph<S>& g, ModelParams<S>& params,
                        std::span<const Sample* const> batch, double beta,
                        int draws, bool mc_enabled, Rng& rng) {
  if (batch.empty()) throw DataError("batch_loss: empty batch");
  diff::Val ce_sum{};
  diff::Val kl_sum{};
  for (const Sample* s : batch) {
    auto fwd = forward_train(g, params, *s, draws, rng, mc_enabled);
    if (s->label < 0 || s->label >= params.cfg.num_classes) {
      throw DataError("label " + std::to_string(s->label) + " out of range");
    }
    auto p_true = g.slice(fwd.probs, s->label, 1);
    auto ce = g.mul_const(g.log(g.add_const(p_true, S(1e-12))), S(-1));
    ce_sum = ce_sum.valid() ? g.add(ce_sum, ce) : ce;
    kl_sum = kl_sum.valid() ? g.add(kl_sum, fwd.kl) : fwd.kl;
  }
  const S inv_n = S(1) / static_cast<S>(batch.size());
  BatchLoss<S> out;
  auto kl_mean = g.mul_const(kl_sum, inv_n);
  if (beta == 0.0) {
    out.total = g.mul_const(ce_sum, inv_n);
    out.kl_contribution = 0.0;
  } else {
    auto obj = g.add(ce_sum, g.mul_const(kl_sum, static_cast<S>(beta)));
    out.total = g.mul_const(obj, inv_n);
    out.kl_contribution =
        beta * static_cast<double>(g.value(kl_mean).data[0]);
  }
  out.value = static_cast<double>(g.value(out.total).data[0]);
  return out;
}

template <class S>
class Adam {
 public:
  Adam() = default;

  void step(ModelParams<S>& params, diff::Graph<S>& g, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    size_t idx = 0;
    visit_params(params, [&](diff::Param<S>& p) {
      if (idx == slots_.size()) {
        slots_.push_back({diff::Tensor<S>::zeros(p.value.shape),
                          diff::Tensor<S>::zeros(p.value.shape)});
      }
      Slot& slot = slots_[idx++];
      const diff::Tensor<S>* grad = g.grad_of(p);
      const int n = p.value.numel();
      for (int i = 0; i < n; ++i) {
        const S gi = grad ? grad->data[i] : S(0);
        slot.m.data[i] = S(kBeta1) * slot.m.data[i] + S(1 - kBeta1) * gi;
        slot.v.data[i] = S(kBeta2) * slot.v.data[i] + S(1 - kBeta2) * gi * gi;
        const S mhat = slot.m.data[i] / static_cast<S>(bc1);
        const S vhat = slot.v.data[i] / static_cast<S>(bc2);
        p.value.data[i] -=
            static_cast<S>(lr) * mhat / (std::sqrt(vhat) + S(kEps));
      }
    });
    if (registered_ != 0 && registered_ != idx) {
      throw ConfigError("optimizer parameter registration changed mid-run");
    }
    registered_ = idx;
  }

  size_t registered() const { return registered_; }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  struct Slot {
    diff::Tensor<S> m, v;
  };
  std::vector<Slot> slots_;
  size_t registered_ = 0;
  int t_ = 0;
};

template <class S>
struct TrainResult {
  ModelParams<S> params;  // best checkpoint by validation macro-F1
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_metric = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

// Fixed-seed training loop. Masks are used as stored in the dataset (no
// modality-dropout augmentation); validation runs on its natural masks.
template <class S>
TrainResult<S> train(const std::vector<Sample>& train_set,
                     const std::vector<Sample>& val_set,
                     const ModelConfig& mcfg, const TrainConfig& tcfg) {
  tcfg.validate();
  if (train_set.empty() || val_set.empty()) {
    throw DataError("train: empty train or validation split");
  }
  for (const auto& s : train_set) {
    if (!s.mask.any()) throw DataError("train: sample with empty mask");
  }

  Rng root(tcfg.seed);
  auto params = make_model_params<S>(mcfg);
  init_model(params, root);

  Adam<S> opt;
  Rng shuffle_rng = root.child("shuffle");
  Rng mc_rng = root.child("mc");

  TrainResult<S> result;
  result.params = params;
  double best = -1.0;
  int since_best = 0;

  std::vector<const Sample*> order;
  order.reserve(train_set.size());
  for (const auto& s : train_set) order.push_back(&s);

  for (int epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
    const double lr = lr_at(epoch, tcfg);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    double kl_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size();
         start += tcfg.batch_size, ++batches) {
      const size_t end = std::min(order.size(), start + tcfg.batch_size);
      std::span<const Sample* const> batch(order.data() + start, end - start);
      diff::Graph<S> g;
      auto loss =
          batch_loss(g, params, batch, tcfg.beta, tcfg.mc_samples,
                     tcfg.mc_during_training, mc_rng);
      if (!std::isfinite(loss.value)) {
        result.aborted = true;
        result.abort_reason = "non-finite loss at epoch " +
                              std::to_string(epoch) + ", batch " +
                              std::to_string(batches);
        return result;
      }
      loss_sum += loss.value;
      kl_sum += loss.kl_contribution;
      g.backward(loss.total);
      opt.step(params, g, lr);
    }

    // identical draw stream every epoch, so the monitored metric is
    // comparable across epochs and frozen parameters can never "improve"
    Rng val_rng = root.child("val");
    const double val_f1 = eval::macro_f1_of_predictor(
        [&](const Sample& s) {
          return infer_probs(params, s, tcfg.mc_samples, val_rng);
        },
        val_set, mcfg.num_classes);

    result.history.push_back(EpochRecord{epoch, loss_sum / batches, lr, val_f1,
                                         kl_sum / batches});

    if (val_f1 > best) {
      best = val_f1;
      result.best_epoch = epoch;
      result.best_metric = val_f1;
      result.params = params;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= tcfg.patience) break;
    }
  }
  return result;
}

}  // namespace missfuse
