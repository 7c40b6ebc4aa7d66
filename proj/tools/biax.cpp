#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "biax/cli.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"biax: two-branch attention outcome classifier for multichannel recordings"};
  app.require_subcommand(1);

  std::string config_path, stack_path, arm;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    return sub;
  };

  auto* synth = with_config(app.add_subcommand("synth", "write a synthetic cohort and its manifest"));
  auto* prep = with_config(app.add_subcommand("preprocess", "run the preprocessing chain over the cohort"));
  auto* train = with_config(app.add_subcommand("train", "train one model per held-out group and evaluate it"));
  auto* eval = with_config(app.add_subcommand("eval", "evaluate saved checkpoints"));
  auto* ablate = with_config(app.add_subcommand("ablate", "run one ablation arm"));
  ablate->add_option("arm", arm, "temporal_only | spatial_only | condition_swap | window_size | segment_count | receptive_field")
      ->required()
      ->check(CLI::IsMember(biax::ablation_arms()));
  auto* rfcalc = app.add_subcommand("rf-calc", "tokens, jump and receptive field of a conv stack");
  rfcalc->add_option("stack", stack_path, "stack file (JSON)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (rfcalc->parsed()) {
      std::ifstream in(stack_path);
      const auto j = biax::json::parse(in, nullptr, false);
      if (j.is_discarded()) throw biax::ConfigError(stack_path + ": not valid JSON");
      return biax::cli::cmd_rf_calc(biax::cli::parse_stack(j), std::cout);
    }
    biax::RunConfig cfg = biax::load_run_config(config_path);
    if (seed) cfg.set_seed(*seed);
    if (out_dir) cfg.output_dir = *out_dir;
    if (synth->parsed()) return biax::cli::cmd_synth(cfg, std::cout);
    if (prep->parsed()) return biax::cli::cmd_preprocess(cfg, std::cout);
    if (train->parsed()) return biax::cli::cmd_train(cfg, std::cout, &std::cerr);
    if (eval->parsed()) return biax::cli::cmd_eval(cfg, std::cout, &std::cerr);
    if (ablate->parsed()) return biax::cli::cmd_ablate(cfg, arm, std::cout, &std::cerr);
  } catch (const biax::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
