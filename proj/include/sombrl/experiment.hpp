#pragma once

// Fan-out of (environment, mode, seed) cells over a worker pool, followed by
// per-(environment, mode) aggregation and export.

#include "sombrl/config.hpp"
#include "sombrl/metrics_io.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace sombrl {

struct MatrixCell {
  std::size_t config_index = 0;
  std::string env;
  std::string mode;
  std::uint64_t seed = 0;       // as listed in the config
  std::uint64_t run_seed = 0;   // derived substream actually used
  std::filesystem::path output_dir;  // <out>/<env>/<mode>
};

/// Cells in a fixed order. A cell's run seed depends only on the master
/// seed, environment, mode and listed seed, never on its position.
std::vector<MatrixCell> plan_matrix(const std::vector<ExperimentConfig>& configs);

std::uint64_t cell_seed(std::uint64_t master_seed, const std::string& env, const std::string& mode,
                        std::uint64_t seed);

/// RunConfig for one cell: objective, particles and seed filled in.
RunConfig cell_run_config(const ExperimentConfig& config, const MatrixCell& cell);

/// Oracle estimate for a config (frozen value when configured).
double config_oracle(const ExperimentConfig& config);

struct MatrixResult {
  int exit_code = 0;
  int failed_cells = 0;
  std::vector<std::filesystem::path> written;
};

/// Runs every cell and writes <out>/<env>/<mode>/summary.csv and
/// results.json. Failed cells are counted and do not stop the others.
/// Exit code 0 on success, 2 when any cell or export failed.
MatrixResult run_matrix(const std::vector<ExperimentConfig>& configs, std::ostream& console);

/// Console description of the expansion, without running anything.
void print_plan(const std::vector<ExperimentConfig>& configs, std::ostream& console);

}  // namespace sombrl
