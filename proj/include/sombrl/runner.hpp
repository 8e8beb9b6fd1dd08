#pragma once

// Interaction loops: episodic, discounted with growing horizons, nonepisodic
// with information-triggered updates, and pure exploration.

#include "sombrl/calibrated_model.hpp"
#include "sombrl/envs.hpp"
#include "sombrl/planner.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

namespace sombrl {

enum class Regime { Episodic, Discounted, Nonepisodic, PureExploration };

std::string to_string(Regime regime);
Regime regime_from_string(std::string_view name);

struct RunConfig {
  Regime regime = Regime::Episodic;
  int episodes = 20;
  double gamma = 0.99;                           // Discounted
  double trigger_threshold = 0.6931471805599453;  // Nonepisodic: log 2
  int min_horizon = 1;
  int hard_cap = 500;
  int random_episodes = 1;  // leading episodes with uniform random actions
  int autotune_states = 5;  // replayed states per AutoTune step

  PlannerConfig planner;
  LambdaSchedule lambda;
  ModelConfig model;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const RunConfig& other) const = default;
};

struct EpisodeRecord {
  int episode = 0;
  double episode_return = 0.0;
  double intrinsic_return = 0.0;  // sum of ||sigma|| along the executed trajectory
  int length = 0;
  double lambda = 0.0;
  double info_gain = 0.0;  // accumulated Gamma after this episode's update
  double beta = 0.0;
  int model_points = 0;
  double wall_time = 0.0;  // seconds; excluded from exports
};

/// Nonepisodic trace entry.
struct StepRecord {
  long step = 0;
  double reward = 0.0;
  Eigen::VectorXd variance;  // sigma^2_j(z_k) under the model in force
  double info_sum = 0.0;     // accumulated log-sum since the last update, this step included
  bool trigger = false;      // an update followed this step
  int update_index = 0;      // model updates performed before this step
};

struct ExperimentLog {
  std::string env;
  std::string mode;
  Regime regime = Regime::Episodic;
  std::uint64_t seed = 0;
  std::vector<EpisodeRecord> episodes;
  std::vector<StepRecord> steps;
  std::vector<long> trigger_steps;
  int resets = 0;
  int model_updates = 0;
  bool failed = false;
  std::string error;
};

struct RunHooks {
  /// After every model update; `episode` is the index of the episode whose
  /// data was just added (or the update count in the nonepisodic regime).
  std::function<void(int episode, const CalibratedModel& model)> on_update;
  /// After every environment step.
  std::function<void(const Transition& transition)> on_step;
};

/// Deterministic given cfg.seed. Model-fit failures stop the loop and are
/// reported in `failed` / `error` with the episodes completed so far.
ExperimentLog run_experiment(const Environment& env, const RunConfig& cfg, const RunHooks* hooks = nullptr);

/// max(1, ceil(-ln n / ln gamma)).
int horizon_schedule(int n, double gamma);

/// First step t with gamma^t * r_max < 1e-4; later rewards are dropped from
/// reported discounted returns.
int discount_truncation(double gamma, double r_max);

/// sum_k sum_j log(1 + variance_kj / noise_variance).
double information_sum(const std::vector<Eigen::VectorXd>& accumulated, double noise_variance);

/// True iff the information sum strictly exceeds `threshold`, or
/// steps_since_update has reached a positive `hard_cap`. An infinite
/// threshold disables triggering altogether.
bool update_trigger(const std::vector<Eigen::VectorXd>& accumulated, double noise_variance, double threshold,
                    int steps_since_update = 0, int hard_cap = 0);

/// Batched rollouts on the noise-free dynamics, for oracle planning.
BatchObjective true_dynamics_objective(const Environment& env, const Eigen::VectorXd& x0, int horizon,
                                       double discount);

/// Median over seeds of the return of iCEM planning on the true dynamics
/// (lambda = 0), executed in the noisy environment for `horizon` steps.
double estimate_oracle(const Environment& env, const ICemConfig& icem, const std::vector<std::uint64_t>& seeds,
                       int horizon = 0, double discount = 1.0);

/// Return of uniformly random actions, median over seeds.
double random_policy_return(const Environment& env, const std::vector<std::uint64_t>& seeds, int horizon = 0);

/// Stable 64-bit mix used to derive independent substreams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_string(std::string_view s);

}  // namespace sombrl
