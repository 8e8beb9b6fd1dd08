#include "sombrl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <functional>
#include <thread>

namespace sombrl {

namespace {

std::string env_name(const ExperimentConfig& c) { return to_string(c.env.family); }

int worker_count(const std::vector<ExperimentConfig>& configs, std::size_t tasks) {
  int w = 0;
  for (const auto& c : configs) w = std::max(w, c.workers);
  if (w == 0) w = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(w), std::max<std::size_t>(tasks, 1)));
}

/// Runs tasks on `workers` threads; task i writes only its own slot.
void run_pool(const std::vector<std::function<void()>>& tasks, int workers) {
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) tasks[i]();
  };
  if (workers <= 1) {
    loop();
    return;
  }
  std::vector<std::thread> pool;
  for (int i = 0; i < workers; ++i) pool.emplace_back(loop);
  for (auto& t : pool) t.join();
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

std::uint64_t cell_seed(std::uint64_t master_seed, const std::string& env, const std::string& mode,
                        std::uint64_t seed) {
  return mix_seed(mix_seed(master_seed, hash_string(env + "/" + mode)), seed);
}

std::vector<MatrixCell> plan_matrix(const std::vector<ExperimentConfig>& configs) {
  std::vector<MatrixCell> cells;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const ExperimentConfig& c = configs[i];
    const std::string env = env_name(c);
    for (const std::string& mode : c.modes) {
      for (std::uint64_t seed : c.seeds) {
        MatrixCell cell;
        cell.config_index = i;
        cell.env = env;
        cell.mode = mode;
        cell.seed = seed;
        cell.run_seed = cell_seed(c.master_seed, env, mode, seed);
        cell.output_dir = std::filesystem::path(c.output_dir) / env / mode;
        cells.push_back(cell);
      }
    }
  }
  return cells;
}

RunConfig cell_run_config(const ExperimentConfig& config, const MatrixCell& cell) {
  RunConfig rc = config.run;
  rc.planner.rollout.kind = objective_for_mode(cell.mode);
  if (cell.mode == "pets") rc.planner.rollout.particles = config.pets_particles;
  rc.seed = cell.run_seed;
  return rc;
}

double config_oracle(const ExperimentConfig& config) {
  if (config.oracle_value) return *config.oracle_value;
  const auto env = make_env(config.env);
  ICemConfig ic;
  ic.population = config.oracle_population;
  ic.elites = std::max(1, config.oracle_population / 10);
  ic.iterations = config.oracle_iterations;
  ic.horizon = config.oracle_horizon > 0 ? config.oracle_horizon : config.run.planner.icem.horizon;
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s : config.seeds) seeds.push_back(cell_seed(config.master_seed, env->name(), "oracle", s));
  if (config.run.regime == Regime::Discounted) {
    return estimate_oracle(*env, ic, seeds, discount_truncation(config.run.gamma, env->reward_max()),
                           config.run.gamma);
  }
  return estimate_oracle(*env, ic, seeds);
}

void print_plan(const std::vector<ExperimentConfig>& configs, std::ostream& out) {
  const auto cells = plan_matrix(configs);
  out << "plan: " << cells.size() << " runs\n";
  for (const ExperimentConfig& c : configs) {
    out << "  " << env_name(c) << ": regime " << to_string(c.run.regime) << ", " << c.run.episodes
        << " episodes, modes";
    for (const auto& m : c.modes) out << ' ' << m;
    out << ", seeds";
    for (auto s : c.seeds) out << ' ' << s;
    out << '\n';
  }
  for (const MatrixCell& cell : cells) {
    out << "  run " << cell.env << '/' << cell.mode << " seed " << cell.seed << " -> "
        << (cell.output_dir / "summary.csv").string() << '\n';
  }
}

MatrixResult run_matrix(const std::vector<ExperimentConfig>& configs, std::ostream& console) {
  MatrixResult result;
  const auto cells = plan_matrix(configs);
  std::vector<std::unique_ptr<Environment>> envs;
  for (const auto& c : configs) envs.push_back(make_env(c.env));

  // Oracles first, then cells, on the same pool.
  std::vector<double> oracles(configs.size(), 0.0);
  std::vector<std::string> oracle_errors(configs.size());
  std::vector<std::function<void()>> tasks;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    tasks.push_back([&, i] {
      try {
        oracles[i] = config_oracle(configs[i]);
      } catch (const std::exception& e) {
        oracle_errors[i] = e.what();
      }
    });
  }
  run_pool(tasks, worker_count(configs, tasks.size()));
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (!oracle_errors[i].empty()) {
      console << "oracle estimate failed for " << env_name(configs[i]) << ": " << oracle_errors[i] << '\n';
      result.exit_code = 2;
    }
  }

  std::vector<ExperimentLog> logs(cells.size());
  tasks.clear();
  for (std::size_t k = 0; k < cells.size(); ++k) {
    tasks.push_back([&, k] {
      const MatrixCell& cell = cells[k];
      try {
        logs[k] = run_experiment(*envs[cell.config_index], cell_run_config(configs[cell.config_index], cell));
      } catch (const std::exception& e) {
        logs[k].failed = true;
        logs[k].error = e.what();
      }
      logs[k].seed = cell.seed;
    });
  }
  run_pool(tasks, worker_count(configs, tasks.size()));

  console << pad("env", 13) << pad("mode", 14) << pad("regime", 18) << pad("seeds", 7) << pad("final median", 14)
          << pad("oracle estimate", 17) << "failed\n";
  std::size_t k = 0;
  while (k < cells.size()) {
    const MatrixCell& head = cells[k];
    const ExperimentConfig& cfg = configs[head.config_index];
    std::vector<ExperimentLog> group;
    int failed = 0;
    for (; k < cells.size() && cells[k].config_index == head.config_index && cells[k].mode == head.mode; ++k) {
      if (logs[k].failed) {
        ++failed;
        console << "  failed: " << head.env << '/' << head.mode << " seed " << cells[k].seed << ": " << logs[k].error
                << '\n';
      }
      group.push_back(logs[k]);
    }
    result.failed_cells += failed;
    const double oracle = oracles[head.config_index];
    const SeedSummary summary = summarize_seeds(group, oracle);
    ResultsMeta meta{head.env, head.mode, to_string(cfg.run.regime), oracle, cfg.seeds};
    try {
      export_csv(summary, head.output_dir / "summary.csv");
      export_json(summary, meta, group, head.output_dir / "results.json");
      result.written.push_back(head.output_dir / "summary.csv");
      result.written.push_back(head.output_dir / "results.json");
    } catch (const std::exception& e) {
      console << "export failed: " << e.what() << '\n';
      result.exit_code = 2;
    }
    const std::string final_median = summary.size() ? num(summary.median_return.back()) : "n/a";
    console << pad(head.env, 13) << pad(head.mode, 14) << pad(to_string(cfg.run.regime), 18)
            << pad(std::to_string(group.size()), 7) << pad(final_median, 14) << pad(num(oracle), 17) << failed
            << '\n';
  }
  if (result.failed_cells > 0) {
    console << result.failed_cells << " failed cell(s)\n";
    result.exit_code = 2;
  }
  return result;
}

}  // namespace sombrl
