#include "sombrl/runner.hpp"

#include "sombrl/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

namespace sombrl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
  if (v.empty()) throw InputError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Eigen::VectorXd random_action(const Environment& env, Rng& rng) {
  Eigen::VectorXd u(env.action_dim());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    std::uniform_real_distribution<double> d(env.action_low()(i), env.action_high()(i));
    u(i) = d(rng);
  }
  return u;
}

// Substream tags.
constexpr std::uint64_t kPlannerStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kRandomStream = 3;
constexpr std::uint64_t kResetStream = 4;
constexpr std::uint64_t kTuneStream = 5;

/// State shared by the episodic and nonepisodic loops.
class Agent {
 public:
  Agent(const Environment& env, const RunConfig& cfg, ExperimentLog& log, const RunHooks* hooks)
      : env_(env),
        cfg_(cfg),
        log_(log),
        hooks_(hooks),
        model_(env.model_input_dim(), env.state_dim(), cfg.model),
        planner_(env, planner_config(env, cfg), mix_seed(cfg.seed, kPlannerStream)),
        noise_rng_(mix_seed(cfg.seed, kNoiseStream)),
        random_rng_(mix_seed(cfg.seed, kRandomStream)),
        z_(env.model_input_dim()),
        batch_(env.model_input_dim(), env.state_dim(), model_.noise_variance()) {
    lambda_ = cfg.lambda.mode == LambdaSchedule::Mode::AutoTune ? cfg.lambda.lambda_init : 0.0;
  }

  static PlannerConfig planner_config(const Environment& env, const RunConfig& cfg) {
    PlannerConfig p = cfg.planner;
    p.rollout.extrinsic_reward = cfg.regime != Regime::PureExploration;
    if (cfg.regime == Regime::Discounted) p.rollout.discount = cfg.gamma;
    (void)env;
    return p;
  }

  CalibratedModel& model() { return model_; }
  MpcPlanner& planner() { return planner_; }
  Dataset& batch() { return batch_; }
  bool has_model() const { return model_.posterior().size() > 0; }

  /// Lambda for the next stretch of planning, `n` model updates in.
  double lambda_for(int n) {
    if (cfg_.regime == Regime::PureExploration) return 1.0;
    if (cfg_.planner.rollout.kind == ObjectiveKind::Mean) return 0.0;
    if (cfg_.lambda.mode == LambdaSchedule::Mode::AutoTune) return lambda_;
    return lambda_value(cfg_.lambda, n, model_.beta());
  }

  Eigen::VectorXd act(const Eigen::VectorXd& x, bool random, double lambda) {
    if (random || !has_model()) return random_action(env_, random_rng_);
    return planner_.act(&model_, x, lambda);
  }

  Transition step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Transition t = env_.step(x, u, noise_rng_);
    env_.model_input(t.state, t.action, z_);
    batch_.add(z_, env_.state_delta(t.state, t.next_state));
    if (hooks_ != nullptr && hooks_->on_step) hooks_->on_step(t);
    return t;
  }

  /// Posterior variance at the model input of the last transition.
  Eigen::VectorXd last_variance() const { return model_.posterior().variance(z_); }

  /// Folds the pending batch into the model. Returns false on failure.
  bool update(int index) {
    try {
      model_.update(batch_);
    } catch (const NumericalError& e) {
      log_.failed = true;
      log_.error = e.what();
      return false;
    }
    batch_ = Dataset(env_.model_input_dim(), env_.state_dim(), model_.noise_variance());
    ++log_.model_updates;
    if (hooks_ != nullptr && hooks_->on_update) hooks_->on_update(index, model_);
    return true;
  }

  /// One AutoTune step on states replayed from the latest stretch.
  void autotune(const std::vector<Eigen::VectorXd>& visited, int n) {
    const LambdaSchedule& s = cfg_.lambda;
    history_.push_back(lambda_);
    if (s.mode != LambdaSchedule::Mode::AutoTune || visited.empty() || !has_model()) return;
    const double target_lambda =
        history_.size() > static_cast<std::size_t>(s.lag) ? history_[history_.size() - 1 - s.lag] : s.lambda_init;
    const int k = std::min<int>(cfg_.autotune_states, static_cast<int>(visited.size()));
    Eigen::VectorXd cur(k), tgt(k);
    Eigen::VectorXd z(env_.model_input_dim());
    for (int i = 0; i < k; ++i) {
      const std::size_t idx = k == 1 ? 0 : static_cast<std::size_t>(i) * (visited.size() - 1) / (k - 1);
      const Eigen::VectorXd& x = visited[idx];
      const std::uint64_t seed = mix_seed(mix_seed(cfg_.seed, kTuneStream), static_cast<std::uint64_t>(n) * 1000 + i);
      for (int which = 0; which < 2; ++which) {
        const IcemResult r = planner_.plan_once(model_, x, which == 0 ? lambda_ : target_lambda, seed);
        env_.model_input(x, r.actions.row(0).head(env_.action_dim()).transpose(), z);
        (which == 0 ? cur : tgt)(i) = model_.posterior().variance(z).cwiseSqrt().norm();
      }
    }
    const double lo = std::max(s.lambda_min, 1e-6);
    lambda_ = lambda_autotune_step(std::max(lambda_, lo), cur, tgt, s.step_size, lo, s.lambda_max);
  }

 private:
  const Environment& env_;
  const RunConfig& cfg_;
  ExperimentLog& log_;
  const RunHooks* hooks_;
  CalibratedModel model_;
  MpcPlanner planner_;
  Rng noise_rng_;
  Rng random_rng_;
  Eigen::VectorXd z_;
  Dataset batch_;
  double lambda_ = 0.0;
  std::vector<double> history_;
};

void run_episodic(const Environment& env, const RunConfig& cfg, ExperimentLog& log, const RunHooks* hooks) {
  Agent agent(env, cfg, log, hooks);
  const bool discounted = cfg.regime == Regime::Discounted;
  const int truncation = discounted ? discount_truncation(cfg.gamma, env.reward_max()) : 0;

  for (int n = 0; n < cfg.episodes; ++n) {
    const auto start = Clock::now();
    const bool random = n < cfg.random_episodes;
    const double lambda = random ? 0.0 : agent.lambda_for(n);
    const int horizon = discounted ? horizon_schedule(n + 1, cfg.gamma) : env.horizon();

    EpisodeRecord rec;
    rec.episode = n;
    rec.lambda = lambda;
    rec.length = horizon;

    Eigen::VectorXd x = env.reset(mix_seed(mix_seed(cfg.seed, kResetStream), static_cast<std::uint64_t>(n)));
    ++log.resets;
    agent.planner().reset();
    std::vector<Eigen::VectorXd> visited;
    visited.reserve(static_cast<std::size_t>(horizon));
    double disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      visited.push_back(x);
      const Eigen::VectorXd u = agent.act(x, random, lambda);
      const Transition tr = agent.step(x, u);
      if (!discounted) {
        rec.episode_return += tr.reward;
      } else if (t < truncation) {
        rec.episode_return += disc * tr.reward;
        disc *= cfg.gamma;
      }
      rec.intrinsic_return += agent.last_variance().cwiseSqrt().norm();
      x = tr.next_state;
    }
    if (!agent.update(n)) return;
    if (!random) agent.autotune(visited, n);
    rec.info_gain = agent.model().information_gain();
    rec.beta = agent.model().beta();
    rec.model_points = agent.model().posterior().size();
    rec.wall_time = seconds_since(start);
    log.episodes.push_back(rec);
  }
}

void run_nonepisodic(const Environment& env, const RunConfig& cfg, ExperimentLog& log, const RunHooks* hooks) {
  Agent agent(env, cfg, log, hooks);
  const int block = env.horizon();
  const long total = static_cast<long>(cfg.episodes) * block;
  const long random_steps = static_cast<long>(cfg.random_episodes) * block;

  Eigen::VectorXd x = env.reset(mix_seed(mix_seed(cfg.seed, kResetStream), 0));
  ++log.resets;

  std::vector<Eigen::VectorXd> pending;  // variances since the last update
  std::vector<Eigen::VectorXd> visited;
  int updates = 0;
  double lambda = 0.0;
  EpisodeRecord rec;
  auto start = Clock::now();

  for (long t = 0; t < total; ++t) {
    const bool random = t < random_steps || updates == 0;
    if (t % block == 0) {
      rec = EpisodeRecord{};
      rec.episode = static_cast<int>(t / block);
      rec.lambda = random ? 0.0 : lambda;
      rec.length = block;
      start = Clock::now();
    }
    visited.push_back(x);
    const Eigen::VectorXd u = agent.act(x, random, lambda);
    const Transition tr = agent.step(x, u);
    const Eigen::VectorXd var = agent.last_variance();
    rec.episode_return += tr.reward;
    rec.intrinsic_return += var.cwiseSqrt().norm();
    x = tr.next_state;

    StepRecord sr;
    sr.step = t;
    sr.reward = tr.reward;
    sr.variance = var;
    sr.update_index = updates;

    bool fire = false;
    if (random) {
      fire = t + 1 == random_steps;
    } else {
      pending.push_back(var);
      sr.info_sum = information_sum(pending, agent.model().noise_variance());
      const int since = static_cast<int>(pending.size());
      fire = since >= cfg.min_horizon &&
             update_trigger(pending, agent.model().noise_variance(), cfg.trigger_threshold, since, cfg.hard_cap);
    }
    sr.trigger = fire;
    log.steps.push_back(std::move(sr));

    if (fire) {
      if (!agent.update(updates)) return;
      if (updates > 0) agent.autotune(visited, updates);
      ++updates;
      log.trigger_steps.push_back(t);
      pending.clear();
      visited.clear();
      lambda = agent.lambda_for(updates);
    }
    if ((t + 1) % block == 0) {
      rec.info_gain = agent.model().information_gain();
      rec.beta = agent.model().beta();
      rec.model_points = agent.model().posterior().size();
      rec.wall_time = seconds_since(start);
      log.episodes.push_back(rec);
    }
  }
}

}  // namespace

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::Episodic: return "episodic";
    case Regime::Discounted: return "discounted";
    case Regime::Nonepisodic: return "nonepisodic";
    case Regime::PureExploration: return "pure_exploration";
  }
  return "episodic";
}

Regime regime_from_string(std::string_view name) {
  for (Regime r : {Regime::Episodic, Regime::Discounted, Regime::Nonepisodic, Regime::PureExploration}) {
    if (name == to_string(r)) return r;
  }
  throw InputError("unknown regime '" + std::string(name) +
                   "' (expected episodic, discounted, nonepisodic or pure_exploration)");
}

void RunConfig::validate() const {
  if (episodes < 1) throw InputError("run.episodes must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InputError("run.gamma must be in (0, 1)");
  if (!(trigger_threshold > 0.0)) throw InputError("run.trigger_threshold must be > 0");
  if (min_horizon < 1) throw InputError("run.min_horizon must be >= 1");
  if (hard_cap < 0) throw InputError("run.hard_cap must be >= 0");
  if (random_episodes < 1) throw InputError("run.random_episodes must be >= 1");
  if (autotune_states < 1) throw InputError("run.autotune_states must be >= 1");
  planner.icem.validate();
  lambda.validate();
  model.validate();
}

ExperimentLog run_experiment(const Environment& env, const RunConfig& cfg, const RunHooks* hooks) {
  cfg.validate();
  ExperimentLog log;
  log.env = env.name();
  log.mode = to_string(cfg.planner.rollout.kind);
  log.regime = cfg.regime;
  log.seed = cfg.seed;
  if (cfg.regime == Regime::Nonepisodic) {
    run_nonepisodic(env, cfg, log, hooks);
  } else {
    run_episodic(env, cfg, log, hooks);
  }
  return log;
}

int horizon_schedule(int n, double gamma) {
  if (n < 1) throw InputError("horizon_schedule: n must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InputError("horizon_schedule: gamma must be in (0, 1)");
  const double r = -std::log(static_cast<double>(n)) / std::log(gamma);
  // Exact integers can land a few ulps above themselves.
  const double nearest = std::round(r);
  const double c = std::abs(r - nearest) <= 1e-9 * std::max(1.0, r) ? nearest : std::ceil(r);
  return std::max(1, static_cast<int>(c));
}

int discount_truncation(double gamma, double r_max) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw InputError("discount_truncation: gamma must be in (0, 1)");
  if (!(r_max > 0.0)) return 0;
  int t = 0;
  double w = r_max;
  while (!(w < 1e-4)) {
    w *= gamma;
    ++t;
  }
  return t;
}

double information_sum(const std::vector<Eigen::VectorXd>& accumulated, double noise_variance) {
  if (!(noise_variance > 0.0)) throw InputError("information_sum: noise variance must be > 0");
  double s = 0.0;
  for (const Eigen::VectorXd& v : accumulated) s += (v.array() / noise_variance).log1p().sum();
  return s;
}

bool update_trigger(const std::vector<Eigen::VectorXd>& accumulated, double noise_variance, double threshold,
                    int steps_since_update, int hard_cap) {
  if (std::isinf(threshold)) return false;
  if (hard_cap > 0 && steps_since_update >= hard_cap) return true;
  return information_sum(accumulated, noise_variance) > threshold;
}

BatchObjective true_dynamics_objective(const Environment& env, const Eigen::VectorXd& x0, int horizon,
                                       double discount) {
  return [&env, x0, horizon, discount](const std::vector<Eigen::MatrixXd>& cands, Eigen::VectorXd& values) {
    values.resize(static_cast<Eigen::Index>(cands.size()));
    const int du = env.action_dim();
    for (std::size_t c = 0; c < cands.size(); ++c) {
      Eigen::VectorXd x = x0;
      double total = 0.0, w = 1.0;
      for (int t = 0; t < horizon; ++t) {
        const Eigen::VectorXd u = cands[c].row(t).head(du).transpose();
        total += w * env.reward(x, env.clip_action(u));
        x = env.true_dynamics(x, u);
        w *= discount;
      }
      values(static_cast<Eigen::Index>(c)) = std::isfinite(total) ? total : -std::numeric_limits<double>::infinity();
    }
  };
}

double estimate_oracle(const Environment& env, const ICemConfig& icem, const std::vector<std::uint64_t>& seeds,
                       int horizon, double discount) {
  if (seeds.empty()) throw InputError("estimate_oracle: no seeds");
  const int steps = horizon > 0 ? horizon : env.horizon();
  std::vector<double> returns;
  for (std::uint64_t seed : seeds) {
    PlannerConfig pc;
    pc.icem = icem;
    MpcPlanner planner(env, pc, mix_seed(seed, kPlannerStream));
    Rng noise(mix_seed(seed, kNoiseStream));
    Eigen::VectorXd x = env.reset(mix_seed(mix_seed(seed, kResetStream), 0));
    double total = 0.0, w = 1.0;
    for (int t = 0; t < steps; ++t) {
      const BatchObjective obj = true_dynamics_objective(env, x, icem.horizon, discount);
      const Eigen::VectorXd u = planner.act(obj, env.action_low(), env.action_high());
      const Transition tr = env.step(x, u, noise);
      total += w * tr.reward;
      w *= discount;
      x = tr.next_state;
    }
    returns.push_back(total);
  }
  return median(returns);
}

double random_policy_return(const Environment& env, const std::vector<std::uint64_t>& seeds, int horizon) {
  if (seeds.empty()) throw InputError("random_policy_return: no seeds");
  const int steps = horizon > 0 ? horizon : env.horizon();
  std::vector<double> returns;
  for (std::uint64_t seed : seeds) {
    Rng noise(mix_seed(seed, kNoiseStream)), pick(mix_seed(seed, kRandomStream));
    Eigen::VectorXd x = env.reset(mix_seed(mix_seed(seed, kResetStream), 0));
    double total = 0.0;
    for (int t = 0; t < steps; ++t) {
      const Transition tr = env.step(x, random_action(env, pick), noise);
      total += tr.reward;
      x = tr.next_state;
    }
    returns.push_back(total);
  }
  return median(returns);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combination of both words.
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace sombrl
