#pragma once

// Experiment configuration: a TOML-style document with the sections
// [env] [run] [planner] [model] [experiment], named presets, and the
// command-line override layer.
//
// Precedence, lowest first: built-in defaults, preset, config file, flags.

#include "sombrl/envs.hpp"
#include "sombrl/errors.hpp"
#include "sombrl/runner.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sombrl {

/// Raised for malformed documents (as opposed to well-formed documents with
/// invalid values, which raise plain ConfigError).
class ParseError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct ExperimentConfig {
  EnvSpec env;
  RunConfig run;

  /// Objective modes to compare: optimistic, mean, pets, hallucinated.
  std::vector<std::string> modes{"optimistic"};
  std::vector<std::uint64_t> seeds{0};
  std::uint64_t master_seed = 0;
  /// Empty: SOMBRL_OUT, else "results".
  std::string output_dir;
  int workers = 0;  // 0: one per hardware thread
  /// Function draws per candidate in the pets mode.
  int pets_particles = 5;

  int oracle_population = 200;
  int oracle_iterations = 5;
  int oracle_horizon = 0;  // 0: the planner horizon
  /// Frozen oracle value; skips estimation when set.
  std::optional<double> oracle_value;

  /// Fills family defaults and derived settings; call after all overrides.
  void resolve();
  /// Throws ConfigError naming the offending key.
  void validate() const;
  bool operator==(const ExperimentConfig& other) const = default;
};

/// Parses `text` on top of `base`. `origin` labels error messages.
ExperimentConfig parse_config_text(const std::string& text, const ExperimentConfig& base = {},
                                   const std::string& origin = "<config>");

/// Reads, parses, resolves and validates a config file. Missing files raise
/// IoError, syntax problems ParseError, bad values ConfigError.
ExperimentConfig parse_config(const std::filesystem::path& path);
/// Same, layered on top of `base` and without resolving.
ExperimentConfig parse_config_layer(const std::filesystem::path& path, const ExperimentConfig& base);

/// Every key written explicitly; parse_config_text(serialize_config(c)) == c
/// for resolved configs.
std::string serialize_config(const ExperimentConfig& config);

/// Mode name to planner objective: optimistic, mean, pets, hallucinated.
ObjectiveKind objective_for_mode(const std::string& mode);
const std::vector<std::string>& known_modes();

/// Unresolved configs, one per environment.
std::vector<ExperimentConfig> preset(const std::string& name);
std::vector<std::string> preset_names();

/// Seeds flag syntax: a single count n means 0..n-1, a comma list is taken
/// literally.
std::vector<std::uint64_t> parse_seeds(const std::string& text);
std::vector<std::string> split_list(const std::string& text);

/// Values given on the command line. Each maps to one config key:
/// --mode experiment.modes, --seeds experiment.seeds, --out
/// experiment.output_dir.
struct CliOverrides {
  std::optional<std::string> config_path;
  std::optional<std::string> preset;
  std::optional<std::vector<std::string>> modes;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::string> out;
  bool plan_only = false;
};

/// Builds the final, resolved and validated configs for a command line.
/// `env_out` is the SOMBRL_OUT value, if any.
std::vector<ExperimentConfig> build_configs(const CliOverrides& cli, const std::optional<std::string>& env_out);

}  // namespace sombrl
