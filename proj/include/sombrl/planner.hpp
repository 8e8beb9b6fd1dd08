#pragma once

// iCEM trajectory optimisation against model rollouts, used receding-horizon.

#include "sombrl/calibrated_model.hpp"
#include "sombrl/envs.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace sombrl {

struct ICemConfig {
  int population = 200;
  int elites = 20;
  int iterations = 5;
  int horizon = 30;
  double noise_color_exponent = 2.0;
  double population_decay = 1.25;
  double elite_fraction_kept = 0.3;
  /// Sampling std per decision column; empty means a quarter of the box width.
  Eigen::VectorXd init_std;

  void validate() const;
  /// Samples drawn in iteration `i`: population * decay^-i, floored at 2 * elites.
  int population_at(int iteration) const;
  bool operator==(const ICemConfig& other) const;
};

/// H x dims sequences whose power spectrum falls off as 1 / f^exponent,
/// normalised to unit variance per column.
Eigen::MatrixXd colored_noise(double exponent, int horizon, int dims, Rng& rng);

/// Scores every candidate (H x D matrices) into `values`. -inf discards a
/// candidate.
using BatchObjective = std::function<void(const std::vector<Eigen::MatrixXd>& candidates, Eigen::VectorXd& values)>;

struct IcemResult {
  Eigen::MatrixXd actions;  // H x D
  double value = 0.0;
  bool injected = false;  // the shifted previous solution was evaluated
  bool warning = false;   // every candidate scored -inf; actions are zero
  std::vector<double> best_per_iteration;
  std::vector<Eigen::MatrixXd> elites;  // final elite set, best first
};

struct IcemWarmStart {
  Eigen::MatrixXd solution;             // previous best, unshifted
  std::vector<Eigen::MatrixXd> elites;  // previous elites, unshifted
};

/// Drops the first row and repeats the last.
Eigen::MatrixXd shift_sequence(const Eigen::MatrixXd& m);

IcemResult icem_plan(const BatchObjective& objective, const ICemConfig& config, const Eigen::VectorXd& low,
                     const Eigen::VectorXd& high, const IcemWarmStart* warm_start, Rng& rng);

// ---------------------------------------------------------------------------

enum class ObjectiveKind { Optimistic, Mean, PosteriorSample, Hallucinated };

std::string to_string(ObjectiveKind kind);

struct RolloutSettings {
  ObjectiveKind kind = ObjectiveKind::Optimistic;
  double lambda = 10.0;
  double discount = 1.0;
  /// PosteriorSample: function draws averaged per candidate. Optimistic and
  /// Mean: >1 adds fixed per-particle process noise to the mean rollout.
  int particles = 1;
  /// false replaces the task reward by zero (pure exploration).
  bool extrinsic_reward = true;
  std::uint64_t noise_seed = 0;
};

/// Batched certainty-equivalent rollouts of one start state through the model.
/// Candidates are H x d_u action sequences, or H x (d_u + d_x) with the
/// hallucinated controls eta in [-1, 1] appended.
class RolloutObjective {
 public:
  RolloutObjective(const CalibratedModel& model, const Environment& env, RolloutSettings settings,
                   Eigen::VectorXd x0, int horizon);

  int decision_dim() const;
  Eigen::VectorXd decision_low() const;
  Eigen::VectorXd decision_high() const;

  void operator()(const std::vector<Eigen::MatrixXd>& candidates, Eigen::VectorXd& values) const;
  double evaluate(const Eigen::MatrixXd& candidate) const;

  /// Model states visited by a single candidate, (H + 1) x d_x.
  Eigen::MatrixXd rollout_states(const Eigen::MatrixXd& candidate) const;

 private:
  bool needs_sigma() const;

  const CalibratedModel* model_;
  const Environment* env_;
  RolloutSettings settings_;
  Eigen::VectorXd x0_;
  int horizon_;
  std::vector<Eigen::MatrixXd> eps_;  // per particle, H x d_x
};

double evaluate_objective(const CalibratedModel& model, const Environment& env, const RolloutSettings& settings,
                          const Eigen::VectorXd& x0, const Eigen::MatrixXd& actions);

// ---------------------------------------------------------------------------

struct LambdaSchedule {
  enum class Mode { Constant, Theory, LinearDecay, AutoTune };

  Mode mode = Mode::Constant;
  double value = 10.0;  // Constant

  double c_max = 1.0;  // Theory: C_max T (1 + sqrt(d_x)) beta / sigma
  double theory_horizon = 1.0;
  double state_dim = 1.0;
  double sigma = 1.0;

  double lambda0 = 0.5;  // LinearDecay
  double lambda_final = 0.0;
  double n_final = 10.0;

  double step_size = 0.1;  // AutoTune
  double lambda_init = 1.0;
  double lambda_min = 0.0;
  double lambda_max = 1e3;
  int lag = 3;

  void validate() const;
  bool operator==(const LambdaSchedule& other) const;
};

std::string to_string(LambdaSchedule::Mode mode);

/// AutoTune returns lambda_init; later values come from lambda_autotune_step.
double lambda_value(const LambdaSchedule& schedule, int n, double beta);

/// lambda - step * mean(current - target) / lambda, clamped to [lo, hi].
double lambda_autotune_step(double lambda, const Eigen::VectorXd& sigma_current, const Eigen::VectorXd& sigma_target,
                            double step, double lo = 0.0, double hi = 1e300);

// ---------------------------------------------------------------------------

struct PlannerConfig {
  ICemConfig icem;
  RolloutSettings rollout;
  bool operator==(const PlannerConfig& other) const;
};

/// Receding-horizon controller: replans at every step, executes the first
/// action and keeps the shifted plan as the next warm start.
class MpcPlanner {
 public:
  MpcPlanner(const Environment& env, PlannerConfig config, std::uint64_t seed);

  /// Forgets the warm start (call at episode boundaries).
  void reset();
  /// Uniform random action when `model` is null or has no data.
  Eigen::VectorXd act(const CalibratedModel* model, const Eigen::VectorXd& x, double lambda);
  /// Same receding-horizon step against an arbitrary objective whose first
  /// d_u decision columns are the action.
  Eigen::VectorXd act(const BatchObjective& objective, const Eigen::VectorXd& low, const Eigen::VectorXd& high);
  /// Plan without touching the warm start or the random stream.
  IcemResult plan_once(const CalibratedModel& model, const Eigen::VectorXd& x, double lambda,
                       std::uint64_t seed) const;

  const IcemResult& last_result() const { return last_; }
  bool last_injected() const { return last_.injected; }
  const PlannerConfig& config() const { return config_; }

 private:
  const Environment* env_;
  PlannerConfig config_;
  Rng rng_;
  IcemWarmStart warm_;
  bool has_warm_ = false;
  IcemResult last_;
};

Eigen::VectorXd mpc_act(MpcPlanner& planner, const CalibratedModel& model, const Eigen::VectorXd& x, int episode,
                        double lambda);

}  // namespace sombrl
