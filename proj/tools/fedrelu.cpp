// fedrelu: run, sweep or validate an experiment configuration.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedrelu/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

using fedrelu::experiment::ConfigError;

void print_config_error(const ConfigError& e) {
  std::cerr << "config error:\n";
  for (const auto& p : e.problems()) std::cerr << "  " << p << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  namespace ex = fedrelu::experiment;

  CLI::App app{"Deterministic federated Local GD/SGD simulator for deep ReLU networks"};
  app.set_version_flag("--version", ex::version());
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;

  auto* run = app.add_subcommand("run", "Run a single experiment");
  run->add_option("--config", config_path, "Experiment JSON")->required();
  run->add_option("--seed", seed, "Override fed.seed");
  run->add_option("--out", out_dir, "Override out_dir");

  auto* sweep = app.add_subcommand("sweep", "Run every cell of the sweep block");
  sweep->add_option("--config", config_path, "Experiment JSON")->required();

  auto* validate = app.add_subcommand("validate", "Check a configuration and print it resolved");
  validate->add_option("--config", config_path, "Experiment JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    ex::ExperimentConfig cfg = ex::load_config(config_path);
    if (*validate) {
      std::cout << ex::to_json(cfg).dump(2) << "\n";
      return 0;
    }
    if (*run) {
      if (seed) cfg.fed.seed = *seed;
      if (out_dir) cfg.out_dir = *out_dir;
      const ex::RunOutcome out = ex::run_experiment(cfg);
      const auto& last = out.log.records.back();
      std::cout << "wrote " << out.dir.string() << "\n"
                << "final step " << last.t << " global loss " << last.global_loss << "\n";
      return 0;
    }
    if (!cfg.sweep) throw ConfigError({"sweep: block is required for the sweep command"});
    const ex::SweepOutcome out = ex::sweep(cfg);
    std::cout << "wrote " << out.cell_dirs.size() << " cells and "
              << (ex::resolve_out_dir(cfg.out_dir) / ex::kSweepSummaryFile).string() << "\n";
    for (const auto& row : out.rows) {
      std::cout << cfg.sweep->param << "=" << row.value << " mean final loss "
                << row.final_loss_mean << "\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    print_config_error(e);
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
