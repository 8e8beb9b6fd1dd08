// Command-line entry point: sombrl [--preset NAME] [--config FILE] [--mode LIST]
// [--seeds N|LIST] [--out DIR] [--plan]

#include "sombrl/config.hpp"
#include "sombrl/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Optimistic model-based RL experiments with GP dynamics models."};
  app.footer(
      "Precedence: flags > config file > preset > built-in defaults.\n"
      "Output: <out>/<env>/<mode>/summary.csv and results.json. SOMBRL_OUT sets the\n"
      "output directory when neither --out nor experiment.output_dir is given.\n"
      "Exit codes: 0 success, 1 configuration error, 2 run failure(s).");

  sombrl::CliOverrides cli;
  std::string config, preset, modes, seeds, out;
  app.add_option("--config", config, "Config file (TOML-style sections [env] [run] [planner] [model] [experiment])");
  app.add_option("--preset", preset, "Named preset: paper-gp, smoke");
  app.add_option("--mode", modes, "Comma-separated modes: optimistic, mean, pets, hallucinated (experiment.modes)");
  app.add_option("--seeds", seeds, "Seed count n (seeds 0..n-1) or comma-separated list (experiment.seeds)");
  app.add_option("--out", out, "Output directory (experiment.output_dir)");
  app.add_flag("--plan", cli.plan_only, "Print the run expansion without executing or writing files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  std::vector<sombrl::ExperimentConfig> configs;
  try {
    if (!config.empty()) cli.config_path = config;
    if (!preset.empty()) cli.preset = preset;
    if (!modes.empty()) cli.modes = sombrl::split_list(modes);
    if (!seeds.empty()) cli.seeds = sombrl::parse_seeds(seeds);
    if (!out.empty()) cli.out = out;
    const char* env_out = std::getenv("SOMBRL_OUT");
    configs = sombrl::build_configs(cli, env_out ? std::optional<std::string>(env_out) : std::nullopt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  if (cli.plan_only) {
    sombrl::print_plan(configs, std::cout);
    return 0;
  }
  try {
    return sombrl::run_matrix(configs, std::cout).exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
