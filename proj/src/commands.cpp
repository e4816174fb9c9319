#include "missfuse/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "missfuse/checkpoint.hpp"
#include "missfuse/datagen.hpp"
#include "missfuse/errors.hpp"
#include "missfuse/evalkit.hpp"
#include "missfuse/training.hpp"
#include "missfuse/uapoe.hpp"
#include "missfuse/verify.hpp"

namespace fs = std::filesystem;

namespace missfuse::cli {

namespace {

void ensure_out_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

int effective_eval_draws(const RunConfig& cfg) {
  return cfg.eval.mc_samples > 0 ? cfg.eval.mc_samples : cfg.train.mc_samples;
}

// one evaluation predictor per (checkpoint, eval seed)
template <class S>
eval::PredictorFactory make_factory(ModelParams<S>& params, int draws) {
  return [&params, draws](uint64_t seed) -> eval::Predictor {
    auto rng = std::make_shared<Rng>(Rng(seed).child("eval"));
    return [&params, draws, rng](const Sample& s) {
      return infer_probs(params, s, draws, *rng);
    };
  };
}

template <class S>
int train_and_save(const RunConfig& cfg, const Cohort& cohort) {
  ModelConfig mcfg = cfg.model_config();
  // data shape always follows the cohort on disk
  mcfg.num_modalities = cohort.config.num_modalities;
  mcfg.input_dims = cohort.config.modality_dims;
  mcfg.num_classes = cohort.config.num_classes;

  auto result = train<S>(cohort.train, cohort.val, mcfg, cfg.train);

  ensure_out_dir(cfg.out_dir);
  const std::string ckpt_path = cfg.out_dir + "/checkpoint.bin";
  save_checkpoint(ckpt_path, result.params);
  write_history(cfg.out_dir + "/history.tsv", result.history);
  {
    std::ofstream cfg_out(cfg.out_dir + "/train_config.txt");
    cfg_out << cfg.serialize();
  }

  if (result.aborted) {
    std::cout << "training aborted: " << result.abort_reason
              << " (last good checkpoint kept at " << ckpt_path << ")\n";
    return 1;
  }
  std::printf("trained %d epochs, best epoch %d, best val macro-F1 %.4f\n",
              static_cast<int>(result.history.size()), result.best_epoch,
              result.best_metric);
  std::printf("checkpoint: %s\n", ckpt_path.c_str());
  double kl_last = result.history.empty() ? 0.0 : result.history.back().kl_term;
  std::printf("final loss %.6f (kl term %.9g)\n",
              result.history.empty() ? 0.0 : result.history.back().loss,
              kl_last);
  return 0;
}

}  // namespace

int cmd_generate(const RunConfig& cfg) {
  Cohort cohort = generate(cfg.gen);
  ensure_out_dir(cfg.out_dir);
  const std::string base = cfg.out_dir + "/cohort";
  write_cohort(cohort, base);

  std::printf("wrote %s.manifest and %s.tsv\n", base.c_str(), base.c_str());
  std::printf("split counts: train=%zu val=%zu test=%zu\n",
              cohort.train.size(), cohort.val.size(), cohort.test.size());
  const auto rates = availability_rates(cohort);
  for (size_t m = 0; m < rates.size(); ++m) {
    std::printf("modality %zu availability (train+val): %.4f\n", m, rates[m]);
  }
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& cohort_base) {
  const Cohort cohort = read_cohort(cohort_base);
  if (cfg.train.precision == "f64") {
    return train_and_save<double>(cfg, cohort);
  }
  return train_and_save<float>(cfg, cohort);
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& cohort_base) {
  const auto ckpt = load_checkpoint(checkpoint_path);
  const Cohort cohort = read_cohort(cohort_base);
  const int draws = effective_eval_draws(cfg);

  eval::EvalSummary summary;
  if (cfg.train.precision == "f64") {
    auto params = params_from_checkpoint<double>(ckpt);
    summary = eval::evaluate_all(make_factory(params, draws), cohort.test,
                                 ckpt.config.num_modalities,
                                 ckpt.config.num_classes, cfg.eval.seeds);
  } else {
    auto params = params_from_checkpoint<float>(ckpt);
    summary = eval::evaluate_all(make_factory(params, draws), cohort.test,
                                 ckpt.config.num_modalities,
                                 ckpt.config.num_classes, cfg.eval.seeds);
  }

  ensure_out_dir(cfg.out_dir);
  const std::string report_path = cfg.out_dir + "/report.tsv";
  eval::write_report(report_path, summary, ckpt.config.num_classes);
  std::cout << eval::format_table(summary);
  std::printf("report: %s\n", report_path.c_str());
  return 0;
}

int cmd_verify(const RunConfig& cfg, bool inject_fault) {
  if (inject_fault) set_fuse_fault_injection(true);
  auto results = verify::run_default_checks(cfg.seed);
  set_fuse_fault_injection(false);

  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("[%s] %-20s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.c_str());
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

BenchmarkResult run_benchmark(const RunConfig& cfg, int num_seeds,
                              bool with_mc_sweep, std::ostream* progress) {
  BenchmarkResult result;
  const Cohort cohort = generate(cfg.gen);
  const int draws = effective_eval_draws(cfg);

  struct VariantSpec {
    std::string name;
    bool disable_pra;
    bool fixed_unit_variance;
    bool deterministic_inference;
  };
  const std::vector<VariantSpec> specs = {
      {"full", false, false, false},
      {"no_pra", true, false, false},
      {"no_uapoe", false, true, false},
      {"no_mc", false, false, true},
  };

  std::vector<std::vector<ModelParams<float>>> trained(specs.size());
  for (size_t v = 0; v < specs.size(); ++v) {
    VariantResult vr;
    vr.name = specs[v].name;
    for (int k = 0; k < num_seeds; ++k) {
      RunConfig run = cfg;
      run.disable_pra = specs[v].disable_pra;
      run.disable_uapoe_variance = specs[v].fixed_unit_variance;
      run.deterministic_inference = specs[v].deterministic_inference;
      run.train.seed = cfg.train.seed + static_cast<uint64_t>(k);

      ModelConfig mcfg = run.model_config();
      mcfg.num_modalities = cohort.config.num_modalities;
      mcfg.input_dims = cohort.config.modality_dims;
      mcfg.num_classes = cohort.config.num_classes;

      auto tr = train<float>(cohort.train, cohort.val, mcfg, run.train);
      if (tr.aborted) {
        throw DataError("benchmark training aborted: " + tr.abort_reason);
      }
      if (progress) {
        *progress << "# trained " << vr.name << " seed " << k << " ("
                  << tr.history.size() << " epochs, best val macro-F1 "
                  << tr.best_metric << ")\n";
      }
      trained[v].push_back(std::move(tr.params));

      auto summary = eval::evaluate_all(
          make_factory(trained[v].back(), draws), cohort.test,
          cohort.config.num_modalities, cohort.config.num_classes,
          {cfg.seed + static_cast<uint64_t>(k)});
      vr.avg_acc.push_back(summary.avg_acc[0]);
      vr.avg_macro_f1.push_back(summary.avg_macro_f1[0]);
      vr.avg_auc.push_back(summary.avg_auc[0]);
    }
    result.variants.push_back(std::move(vr));
  }

  if (with_mc_sweep) {
    result.sweep_draws = {1, 2, 5, 10, 20};
    for (int L : result.sweep_draws) {
      std::vector<double> accs;
      for (int k = 0; k < num_seeds; ++k) {
        auto summary = eval::evaluate_all(
            make_factory(trained[0][k], L), cohort.test,
            cohort.config.num_modalities, cohort.config.num_classes,
            {cfg.seed + static_cast<uint64_t>(k)});
        accs.push_back(summary.avg_acc[0]);
      }
      if (progress) {
        *progress << "# mc sweep L=" << L << " done\n";
      }
      result.sweep_acc.push_back(std::move(accs));
    }
  }
  return result;
}

int cmd_ablate(const RunConfig& cfg, int num_seeds) {
  if (num_seeds < 3) throw ConfigError("ablate requires at least 3 seeds");
  auto bench = run_benchmark(cfg, num_seeds, /*with_mc_sweep=*/true, &std::cerr);

  ensure_out_dir(cfg.out_dir);
  {
    std::ofstream out(cfg.out_dir + "/ablation.tsv");
    out << "variant\tacc_mean\tacc_std\tmacro_f1_mean\tmacro_f1_std\t"
           "auc_mean\tauc_std\n";
    char line[256];
    for (const auto& v : bench.variants) {
      const auto acc = eval::mean_std(v.avg_acc);
      const auto f1 = eval::mean_std(v.avg_macro_f1);
      const auto auc = eval::mean_std(v.avg_auc);
      std::snprintf(line, sizeof(line),
                    "%s\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\n", v.name.c_str(),
                    acc.mean, acc.std, f1.mean, f1.std, auc.mean, auc.std);
      out << line;
    }
  }
  {
    std::ofstream out(cfg.out_dir + "/mc_sweep.tsv");
    out << "draws\tacc_mean\tacc_std\n";
    char line[128];
    for (size_t i = 0; i < bench.sweep_draws.size(); ++i) {
      const auto acc = eval::mean_std(bench.sweep_acc[i]);
      std::snprintf(line, sizeof(line), "%d\t%.6f\t%.6f\n",
                    bench.sweep_draws[i], acc.mean, acc.std);
      out << line;
    }
  }

  std::printf("%-10s %12s %18s %12s\n", "variant", "avg ACC", "avg macro-F1",
              "avg AUC");
  for (const auto& v : bench.variants) {
    const auto acc = eval::mean_std(v.avg_acc);
    const auto f1 = eval::mean_std(v.avg_macro_f1);
    const auto auc = eval::mean_std(v.avg_auc);
    std::printf("%-10s %6.4f (%.4f) %6.4f (%.4f)    %6.4f (%.4f)\n",
                v.name.c_str(), acc.mean, acc.std, f1.mean, f1.std, auc.mean,
                auc.std);
  }
  std::printf("\n%-6s %12s\n", "draws", "avg ACC");
  for (size_t i = 0; i < bench.sweep_draws.size(); ++i) {
    const auto acc = eval::mean_std(bench.sweep_acc[i]);
    std::printf("%-6d %6.4f (%.4f)\n", bench.sweep_draws[i], acc.mean, acc.std);
  }
  std::printf("tables: %s/ablation.tsv, %s/mc_sweep.tsv\n", cfg.out_dir.c_str(),
              cfg.out_dir.c_str());
  return 0;
}

}  // namespace missfuse::cli
