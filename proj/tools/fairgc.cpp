#include <cstddef>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fairgc/pipeline.hpp"

namespace {

using fairgc::pipeline::PipelineConfig;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  bool disable_fairness = false;
  bool random_coreset = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value config file");
    cmd->add_option("--set", overrides,
                    "override one config key, e.g. --set rho=0.1 (repeatable)");
    cmd->add_flag("--disable-fairness", disable_fairness,
                  "plain MLP ablation: no spectral term, no curriculum");
    cmd->add_flag("--random-coreset", random_coreset,
                  "skip condensation optimization, sample training nodes");
  }

  PipelineConfig resolve() const {
    PipelineConfig cfg;
    if (!config_path.empty()) cfg = fairgc::pipeline::load_config(config_path);
    for (const std::string& kv : overrides) {
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw fairgc::ConfigError("--set expects key=value, got: " + kv);
      fairgc::pipeline::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (disable_fairness) cfg.disable_fairness = true;
    if (random_coreset) cfg.random_coreset = true;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairgc: fairness-aware graph condensation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fairgc::pipeline::kToolVersion);

  CommonArgs condense_args, train_args, eval_args, audit_args;
  std::string condense_out, train_condensed, train_out;
  std::string eval_checkpoint, eval_condensed, eval_out;
  std::string audit_condensed, audit_out;

  CLI::App* c_condense =
      app.add_subcommand("condense", "distill the dataset into a condensed graph");
  condense_args.attach(c_condense);
  c_condense->add_option("--out", condense_out, "output directory")->required();

  CLI::App* c_train = app.add_subcommand(
      "train", "spectral encodings + classifier training on a condensed graph");
  train_args.attach(c_train);
  c_train->add_option("--condensed", train_condensed, "condensed artifact directory")
      ->required();
  c_train->add_option("--out", train_out, "checkpoint output directory")->required();

  CLI::App* c_eval = app.add_subcommand(
      "evaluate",
      "fairness report on the original test split; without --checkpoint, "
      "reruns the pipeline over eval_seeds seeds and reports mean +/- std");
  eval_args.attach(c_eval);
  c_eval->add_option("--checkpoint", eval_checkpoint, "checkpoint directory");
  c_eval->add_option("--condensed", eval_condensed,
                     "condensed artifact directory (required with --checkpoint)");
  c_eval->add_option("--out", eval_out, "report output directory");

  CLI::App* c_audit =
      app.add_subcommand("audit", "distribution drift of a condensed graph");
  audit_args.attach(c_audit);
  c_audit->add_option("--condensed", audit_condensed, "condensed artifact directory")
      ->required();
  c_audit->add_option("--out", audit_out, "audit output directory");

  CLI::App* c_make =
      app.add_subcommand("make-synthetic", "generate a block-model benchmark");
  fairgc::pipeline::SyntheticSpec spec;
  std::string make_out;
  c_make->add_option("--n", spec.n, "node count (>= 50)")->required();
  c_make->add_option("--gamma", spec.gamma, "label/sensitive correlation in [0,1]")
      ->required();
  c_make->add_option("--homophily", spec.homophily, "intra-block edge share in [0,1]")
      ->required();
  c_make->add_option("--seed", spec.seed, "generator seed");
  c_make->add_option("--dim", spec.feature_dim, "feature dimension");
  c_make->add_option("--degree", spec.mean_degree, "target mean degree");
  c_make->add_option("--out", make_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (c_condense->parsed()) {
      fairgc::pipeline::run_condense(condense_args.resolve(), condense_out);
      std::cout << "condensed graph written to " << condense_out << '\n';
    } else if (c_train->parsed()) {
      fairgc::pipeline::run_train(train_args.resolve(), train_condensed, train_out);
      std::cout << "checkpoint written to " << train_out << '\n';
    } else if (c_eval->parsed()) {
      const PipelineConfig cfg = eval_args.resolve();
      fairgc::pipeline::EvalOutcome outcome;
      if (!eval_checkpoint.empty()) {
        if (eval_condensed.empty())
          throw fairgc::ConfigError("--checkpoint requires --condensed");
        outcome = fairgc::pipeline::run_evaluate(cfg, eval_checkpoint,
                                                 eval_condensed, eval_out);
      } else {
        outcome = fairgc::pipeline::run_evaluate_seeds(cfg, eval_out);
      }
      std::cout << outcome.table;
    } else if (c_audit->parsed()) {
      const fairgc::pipeline::AuditOutcome outcome =
          fairgc::pipeline::run_audit(audit_args.resolve(), audit_condensed,
                                      audit_out);
      std::cout << outcome.table;
    } else if (c_make->parsed()) {
      fairgc::pipeline::make_synthetic(spec, make_out);
      std::cout << "synthetic dataset written to " << make_out << '\n';
    }
  } catch (const fairgc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const fairgc::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const fairgc::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
