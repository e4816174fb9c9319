// missfuse command-line interface: synthetic cohort generation, training,
// subset-enumerating evaluation, ablation sweeps, and self-verification.

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "missfuse/commands.hpp"
#include "missfuse/config.hpp"
#include "missfuse/errors.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_given = false;
};

// defaults < config file < --set/flags < MISSFUSE_SEED
missfuse::RunConfig build_config(const CommonArgs& args) {
  missfuse::RunConfig cfg;
  if (!args.config_path.empty()) {
    cfg = missfuse::load_run_config(args.config_path);
  }
  for (const auto& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw missfuse::ConfigError("--set expects key=value, got '" + kv + "'");
    }
    cfg.apply_kv(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed_given) cfg.seed = args.seed;
  if (const char* env_seed = std::getenv("MISSFUSE_SEED")) {
    cfg.apply_kv("seed", env_seed);
  }
  cfg.finalize_seeds();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"incomplete-multimodal classification workbench"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, ablate_args, verify_args;

  auto* gen_cmd = app.add_subcommand("generate", "write a synthetic cohort");
  gen_cmd->add_option("--config", gen_args.config_path, "config file");
  gen_cmd->add_option("--set", gen_args.sets, "key=value overrides")->take_all();
  gen_cmd->add_option("--out", gen_args.out_dir, "output directory");
  gen_cmd->add_option("--seed", gen_args.seed, "root seed")
      ->each([&gen_args](const std::string&) { gen_args.seed_given = true; });

  auto* train_cmd = app.add_subcommand("train", "train on a cohort");
  std::string train_cohort;
  train_cmd->add_option("--cohort", train_cohort,
                        "cohort base path (without .manifest/.tsv)")
      ->required();
  train_cmd->add_option("--config", train_args.config_path, "config file");
  train_cmd->add_option("--set", train_args.sets, "key=value overrides")
      ->take_all();
  train_cmd->add_option("--out", train_args.out_dir, "output directory");
  train_cmd->add_option("--seed", train_args.seed, "root seed")
      ->each([&train_args](const std::string&) {
        train_args.seed_given = true;
      });
  double train_beta = -1.0;
  int train_epochs = -1;
  bool f_disable_pra = false, f_disable_uapoe = false, f_no_mc = false;
  bool f_literal_attention = false, f_vector_gate = false;
  train_cmd->add_option("--beta", train_beta, "KL weight");
  train_cmd->add_option("--epochs", train_epochs, "maximum epochs");
  train_cmd->add_flag("--disable_pra", f_disable_pra,
                      "skip alignment (ablation)");
  train_cmd->add_flag("--disable_uapoe_variance", f_disable_uapoe,
                      "fix expert variances to one (ablation)");
  train_cmd->add_flag("--deterministic_inference", f_no_mc,
                      "classify at the posterior mean (ablation)");
  train_cmd->add_flag("--literal_attention", f_literal_attention,
                      "attention without learned projections");
  train_cmd->add_flag("--vector_gate", f_vector_gate,
                      "per-dimension calibration gate");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate over all subsets");
  std::string eval_checkpoint, eval_cohort;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")
      ->required();
  eval_cmd->add_option("--cohort", eval_cohort, "cohort base path")->required();
  eval_cmd->add_option("--config", eval_args.config_path, "config file");
  eval_cmd->add_option("--set", eval_args.sets, "key=value overrides")
      ->take_all();
  eval_cmd->add_option("--out", eval_args.out_dir, "output directory");
  eval_cmd->add_option("--seed", eval_args.seed, "root seed")
      ->each([&eval_args](const std::string&) { eval_args.seed_given = true; });
  int eval_draws = -1;
  eval_cmd->add_option("--mc_samples", eval_draws,
                       "posterior draws per prediction");

  auto* ablate_cmd = app.add_subcommand(
      "ablate", "train and compare the full model and ablation variants");
  ablate_cmd->add_option("--config", ablate_args.config_path, "config file");
  ablate_cmd->add_option("--set", ablate_args.sets, "key=value overrides")
      ->take_all();
  ablate_cmd->add_option("--out", ablate_args.out_dir, "output directory");
  ablate_cmd->add_option("--seed", ablate_args.seed, "root seed")
      ->each([&ablate_args](const std::string&) {
        ablate_args.seed_given = true;
      });
  int ablate_seeds = 3;
  ablate_cmd->add_option("--seeds", ablate_seeds, "number of training seeds");

  auto* verify_cmd =
      app.add_subcommand("verify", "run the built-in verification checks");
  verify_cmd->add_option("--seed", verify_args.seed, "root seed")
      ->each([&verify_args](const std::string&) {
        verify_args.seed_given = true;
      });
  bool inject_fault = false;
  verify_cmd->add_flag("--inject-fault", inject_fault,
                       "test hook: corrupt the fusion to prove checks fire");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) {
      return missfuse::cli::cmd_generate(build_config(gen_args));
    }
    if (train_cmd->parsed()) {
      auto cfg = build_config(train_args);
      if (train_beta >= 0.0) cfg.train.beta = train_beta;
      if (train_epochs > 0) cfg.train.max_epochs = train_epochs;
      cfg.disable_pra = cfg.disable_pra || f_disable_pra;
      cfg.disable_uapoe_variance =
          cfg.disable_uapoe_variance || f_disable_uapoe;
      cfg.deterministic_inference = cfg.deterministic_inference || f_no_mc;
      cfg.literal_attention = cfg.literal_attention || f_literal_attention;
      cfg.vector_gate = cfg.vector_gate || f_vector_gate;
      return missfuse::cli::cmd_train(cfg, train_cohort);
    }
    if (eval_cmd->parsed()) {
      auto cfg = build_config(eval_args);
      if (eval_draws > 0) cfg.eval.mc_samples = eval_draws;
      return missfuse::cli::cmd_eval(cfg, eval_checkpoint, eval_cohort);
    }
    if (ablate_cmd->parsed()) {
      return missfuse::cli::cmd_ablate(build_config(ablate_args), ablate_seeds);
    }
    if (verify_cmd->parsed()) {
      return missfuse::cli::cmd_verify(build_config(verify_args), inject_fault);
    }
  } catch (const missfuse::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
