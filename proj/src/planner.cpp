#include "sombrl/planner.hpp"

#include "sombrl/errors.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

namespace sombrl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::MatrixXd clip_rows(Eigen::MatrixXd m, const Eigen::VectorXd& low, const Eigen::VectorXd& high) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    m.row(r) = m.row(r).cwiseMax(low.transpose()).cwiseMin(high.transpose());
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// iCEM

void ICemConfig::validate() const {
  if (population < 2) throw InputError("planner.population must be >= 2");
  if (elites < 1 || elites > population) throw InputError("planner.elites must lie in [1, population]");
  if (iterations < 1) throw InputError("planner.iterations must be >= 1");
  if (horizon < 1) throw InputError("planner.horizon must be >= 1");
  if (!(noise_color_exponent >= 0.0)) throw InputError("planner.noise_color_exponent must be >= 0");
  if (!(population_decay >= 1.0)) throw InputError("planner.population_decay must be >= 1");
  if (!(elite_fraction_kept >= 0.0 && elite_fraction_kept <= 1.0)) {
    throw InputError("planner.elite_fraction_kept must lie in [0, 1]");
  }
  if (init_std.size() != 0 && !(init_std.array() > 0.0).all()) {
    throw InputError("planner.init_std entries must be > 0");
  }
}

int ICemConfig::population_at(int iteration) const {
  const double n = std::round(population * std::pow(population_decay, -iteration));
  return std::max(2 * elites, static_cast<int>(n));
}

bool ICemConfig::operator==(const ICemConfig& o) const {
  return population == o.population && elites == o.elites && iterations == o.iterations && horizon == o.horizon &&
         noise_color_exponent == o.noise_color_exponent && population_decay == o.population_decay &&
         elite_fraction_kept == o.elite_fraction_kept && init_std.size() == o.init_std.size() &&
         init_std == o.init_std;
}

Eigen::MatrixXd colored_noise(double exponent, int horizon, int dims, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(horizon, dims);
  if (horizon == 1) {
    for (int d = 0; d < dims; ++d) out(0, d) = normal(rng);
    return out;
  }
  const int nf = horizon / 2 + 1;
  const bool even = horizon % 2 == 0;
  std::vector<double> scale(static_cast<std::size_t>(nf));
  for (int k = 0; k < nf; ++k) {
    const double f = std::max(static_cast<double>(k), 1.0) / horizon;
    scale[static_cast<std::size_t>(k)] = std::pow(f, -0.5 * exponent);
  }
  // Exact standard deviation of the unnormalised inverse transform: the DC
  // and Nyquist bins are real with doubled variance, the others complex.
  double var = 2.0 * scale[0] * scale[0];
  for (int k = 1; k < nf; ++k) {
    const double s2 = scale[static_cast<std::size_t>(k)] * scale[static_cast<std::size_t>(k)];
    var += (even && k == nf - 1 ? 2.0 : 4.0) * s2;
  }
  const double sigma = std::sqrt(var) / horizon;

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(nf));
  std::vector<double> series;
  for (int d = 0; d < dims; ++d) {
    for (int k = 0; k < nf; ++k) {
      const double re = normal(rng);
      const double im = normal(rng);
      spectrum[static_cast<std::size_t>(k)] = {re * scale[static_cast<std::size_t>(k)],
                                               im * scale[static_cast<std::size_t>(k)]};
    }
    spectrum[0] = {spectrum[0].real() * std::sqrt(2.0), 0.0};
    if (even) spectrum.back() = {spectrum.back().real() * std::sqrt(2.0), 0.0};
    fft.inv(series, spectrum, horizon);
    for (int t = 0; t < horizon; ++t) out(t, d) = series[static_cast<std::size_t>(t)] / sigma;
  }
  return out;
}

Eigen::MatrixXd shift_sequence(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd s(m.rows(), m.cols());
  if (m.rows() == 0) return s;
  s.topRows(m.rows() - 1) = m.bottomRows(m.rows() - 1);
  s.row(m.rows() - 1) = m.row(m.rows() - 1);
  return s;
}

IcemResult icem_plan(const BatchObjective& objective, const ICemConfig& config, const Eigen::VectorXd& low,
                     const Eigen::VectorXd& high, const IcemWarmStart* warm_start, Rng& rng) {
  config.validate();
  const Eigen::Index dim = low.size();
  if (dim == 0 || high.size() != dim || !(high.array() >= low.array()).all()) {
    throw InputError("icem_plan: invalid decision bounds");
  }
  if (config.init_std.size() != 0 && config.init_std.size() != dim) {
    throw InputError("icem_plan: init_std must have one entry per decision column");
  }
  const int h = config.horizon;
  const Eigen::RowVectorXd std0 =
      config.init_std.size() != 0 ? Eigen::RowVectorXd(config.init_std.transpose())
                                  : Eigen::RowVectorXd(0.25 * (high - low).transpose());

  Eigen::MatrixXd mean = (0.5 * (low + high)).transpose().replicate(h, 1);
  Eigen::MatrixXd stdev = std0.replicate(h, 1);
  std::vector<Eigen::MatrixXd> kept;
  const int n_keep = static_cast<int>(std::ceil(config.elite_fraction_kept * config.elites));

  IcemResult result;
  result.value = kNegInf;
  result.actions = Eigen::MatrixXd::Zero(h, dim);

  Eigen::MatrixXd injected;
  if (warm_start && warm_start->solution.rows() == h && warm_start->solution.cols() == dim) {
    injected = clip_rows(shift_sequence(warm_start->solution), low, high);
    mean = injected;
    for (std::size_t e = 0; e < warm_start->elites.size() && static_cast<int>(kept.size()) < n_keep; ++e) {
      kept.push_back(clip_rows(shift_sequence(warm_start->elites[e]), low, high));
    }
  }

  std::vector<Eigen::MatrixXd> candidates;
  Eigen::VectorXd values;
  for (int it = 0; it < config.iterations; ++it) {
    const int n = config.population_at(it);
    candidates.clear();
    candidates.reserve(static_cast<std::size_t>(n) + kept.size() + 2);
    for (int s = 0; s < n; ++s) {
      const Eigen::MatrixXd noise = colored_noise(config.noise_color_exponent, h, static_cast<int>(dim), rng);
      candidates.push_back(clip_rows(mean + stdev.cwiseProduct(noise), low, high));
    }
    if (it == 0 && injected.size() != 0) {
      candidates.push_back(injected);
      result.injected = true;
    }
    for (const auto& k : kept) candidates.push_back(k);
    if (it == config.iterations - 1) candidates.push_back(clip_rows(mean, low, high));

    values.setConstant(static_cast<Eigen::Index>(candidates.size()), kNegInf);
    objective(candidates, values);
    if (values.size() != static_cast<Eigen::Index>(candidates.size())) {
      throw InputError("icem_plan: objective returned the wrong number of values");
    }
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      if (std::isnan(values(i))) values(i) = kNegInf;
    }

    std::vector<int> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values(a) > values(b); });
    std::vector<Eigen::MatrixXd> elites;
    for (int idx : order) {
      if (static_cast<int>(elites.size()) == config.elites || values(idx) == kNegInf) break;
      elites.push_back(candidates[static_cast<std::size_t>(idx)]);
    }
    if (!elites.empty()) {
      const int top = order.front();
      if (values(top) > result.value) {
        result.value = values(top);
        result.actions = candidates[static_cast<std::size_t>(top)];
      }
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(h, dim);
      for (const auto& e : elites) m += e;
      m /= static_cast<double>(elites.size());
      Eigen::MatrixXd v = Eigen::MatrixXd::Zero(h, dim);
      for (const auto& e : elites) v += (e - m).cwiseAbs2();
      mean = m;
      stdev = (v / static_cast<double>(elites.size())).cwiseSqrt();
      kept.assign(elites.begin(), elites.begin() + std::min<std::ptrdiff_t>(n_keep, std::ssize(elites)));
      result.elites = std::move(elites);
    }
    result.best_per_iteration.push_back(result.value);
  }
  if (!result.elites.empty()) {
    // The last distribution update is otherwise never scored.
    candidates.assign(1, clip_rows(mean, low, high));
    values.setConstant(1, kNegInf);
    objective(candidates, values);
    if (values(0) > result.value) {
      result.value = values(0);
      result.actions = candidates.front();
      result.best_per_iteration.back() = result.value;
    }
  }
  if (result.value == kNegInf) {
    result.warning = true;
    result.actions = Eigen::MatrixXd::Zero(h, dim);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Rollout objective

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::Optimistic: return "optimistic";
    case ObjectiveKind::Mean: return "mean";
    case ObjectiveKind::PosteriorSample: return "posterior_sample";
    case ObjectiveKind::Hallucinated: return "hallucinated";
  }
  return "unknown";
}

RolloutObjective::RolloutObjective(const CalibratedModel& model, const Environment& env, RolloutSettings settings,
                                   Eigen::VectorXd x0, int horizon)
    : model_(&model), env_(&env), settings_(settings), x0_(std::move(x0)), horizon_(horizon) {
  if (x0_.size() != env.state_dim()) throw InputError("rollout: start state has the wrong dimension");
  if (model.input_dim() != env.model_input_dim() || model.output_dim() != env.state_dim()) {
    throw InputError("rollout: model dimensions do not match the environment");
  }
  if (horizon < 1) throw InputError("rollout: horizon must be >= 1");
  if (settings_.particles < 1) throw InputError("rollout: particles must be >= 1");
  if (!(settings_.lambda >= 0.0)) throw InputError("rollout: lambda must be >= 0");
  if (!(settings_.discount > 0.0 && settings_.discount <= 1.0)) {
    throw InputError("rollout: discount must lie in (0, 1]");
  }
  if (settings_.kind == ObjectiveKind::Mean) settings_.lambda = 0.0;
  const bool noisy = settings_.kind == ObjectiveKind::PosteriorSample || settings_.particles > 1;
  if (noisy && settings_.kind != ObjectiveKind::Hallucinated) {
    Rng rng(settings_.noise_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int p = 0; p < settings_.particles; ++p) {
      Eigen::MatrixXd e(horizon_, env.state_dim());
      for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = normal(rng);
      eps_.push_back(std::move(e));
    }
  }
}

int RolloutObjective::decision_dim() const {
  return env_->action_dim() + (settings_.kind == ObjectiveKind::Hallucinated ? env_->state_dim() : 0);
}

Eigen::VectorXd RolloutObjective::decision_low() const {
  Eigen::VectorXd v = Eigen::VectorXd::Constant(decision_dim(), -1.0);
  v.head(env_->action_dim()) = env_->action_low();
  return v;
}

Eigen::VectorXd RolloutObjective::decision_high() const {
  Eigen::VectorXd v = Eigen::VectorXd::Constant(decision_dim(), 1.0);
  v.head(env_->action_dim()) = env_->action_high();
  return v;
}

bool RolloutObjective::needs_sigma() const {
  return settings_.kind == ObjectiveKind::PosteriorSample || settings_.kind == ObjectiveKind::Hallucinated ||
         (settings_.kind == ObjectiveKind::Optimistic && settings_.lambda != 0.0);
}

void RolloutObjective::operator()(const std::vector<Eigen::MatrixXd>& candidates, Eigen::VectorXd& values) const {
  const int n = static_cast<int>(candidates.size());
  const int particles = eps_.empty() ? 1 : static_cast<int>(eps_.size());
  const int rows = n * particles;
  const int dx = env_->state_dim();
  const int du = env_->action_dim();
  const int dd = decision_dim();
  for (const auto& c : candidates) {
    if (c.rows() < horizon_ || c.cols() != dd) throw InputError("rollout: candidate has the wrong shape");
  }

  const GPPosterior& post = model_->posterior();
  const bool sigma_needed = needs_sigma();
  const bool hallucinated = settings_.kind == ObjectiveKind::Hallucinated;
  const bool sample = settings_.kind == ObjectiveKind::PosteriorSample;
  const double beta = model_->beta();
  const Eigen::VectorXd& process_std = env_->noise_std();

  Eigen::MatrixXd x = x0_.transpose().replicate(rows, 1);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(rows);
  std::vector<char> dead(static_cast<std::size_t>(rows), 0);
  Eigen::MatrixXd z(rows, env_->model_input_dim());
  Eigen::VectorXd zi(env_->model_input_dim());
  Eigen::MatrixXd mean, sd;
  Eigen::VectorXd xi(dx), u(du), delta(dx);
  double disc = 1.0;

  for (int t = 0; t < horizon_; ++t) {
    for (int r = 0; r < rows; ++r) {
      const Eigen::MatrixXd& c = candidates[static_cast<std::size_t>(r / particles)];
      xi = x.row(r).transpose();
      u = c.row(t).head(du).transpose();
      env_->model_input(xi, u, zi);
      z.row(r) = zi.transpose();
    }
    post.predict_batch(z, mean, sigma_needed ? &sd : nullptr);
    for (int r = 0; r < rows; ++r) {
      if (dead[static_cast<std::size_t>(r)]) continue;
      const Eigen::MatrixXd& c = candidates[static_cast<std::size_t>(r / particles)];
      xi = x.row(r).transpose();
      u = c.row(t).head(du).transpose();
      const double reward = settings_.extrinsic_reward ? env_->reward(xi, u) : 0.0;
      if (settings_.kind == ObjectiveKind::Optimistic && settings_.lambda != 0.0) {
        total(r) += disc * (reward + settings_.lambda * sd.row(r).norm());
      } else {
        total(r) += disc * reward;
      }
      delta = mean.row(r).transpose();
      if (hallucinated) {
        delta += beta * sd.row(r).transpose().cwiseProduct(c.row(t).tail(dx).transpose());
      } else if (sample) {
        delta += sd.row(r).transpose().cwiseProduct(eps_[static_cast<std::size_t>(r % particles)].row(t).transpose());
      } else if (!eps_.empty()) {
        delta += process_std.cwiseProduct(eps_[static_cast<std::size_t>(r % particles)].row(t).transpose());
      }
      const Eigen::VectorXd next = env_->apply_delta(xi, delta);
      if (!next.allFinite() || !std::isfinite(total(r))) {
        dead[static_cast<std::size_t>(r)] = 1;
        continue;
      }
      x.row(r) = next.transpose();
    }
    disc *= settings_.discount;
  }

  values.resize(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    bool alive = true;
    for (int p = 0; p < particles; ++p) {
      const int r = i * particles + p;
      alive = alive && !dead[static_cast<std::size_t>(r)];
      acc += total(r);
    }
    values(i) = alive ? (particles == 1 ? acc : acc / particles) : kNegInf;
  }
}

double RolloutObjective::evaluate(const Eigen::MatrixXd& candidate) const {
  Eigen::VectorXd v;
  (*this)({candidate}, v);
  return v(0);
}

Eigen::MatrixXd RolloutObjective::rollout_states(const Eigen::MatrixXd& candidate) const {
  // Re-runs the rollout one step at a time with truncated candidates; each
  // prefix shares the trajectory of the full sequence.
  const int dx = env_->state_dim();
  const int du = env_->action_dim();
  Eigen::MatrixXd states(horizon_ + 1, dx);
  states.row(0) = x0_.transpose();
  Eigen::VectorXd x = x0_;
  const GPPosterior& post = model_->posterior();
  Eigen::VectorXd zi(env_->model_input_dim());
  Eigen::MatrixXd mean, sd;
  for (int t = 0; t < horizon_; ++t) {
    const Eigen::VectorXd u = candidate.row(t).head(du).transpose();
    env_->model_input(x, u, zi);
    post.predict_batch(zi.transpose(), mean, &sd);
    Eigen::VectorXd delta = mean.row(0).transpose();
    if (settings_.kind == ObjectiveKind::Hallucinated) {
      delta += model_->beta() * sd.row(0).transpose().cwiseProduct(candidate.row(t).tail(dx).transpose());
    } else if (settings_.kind == ObjectiveKind::PosteriorSample) {
      delta += sd.row(0).transpose().cwiseProduct(eps_.front().row(t).transpose());
    } else if (!eps_.empty()) {
      delta += env_->noise_std().cwiseProduct(eps_.front().row(t).transpose());
    }
    x = env_->apply_delta(x, delta);
    states.row(t + 1) = x.transpose();
  }
  return states;
}

double evaluate_objective(const CalibratedModel& model, const Environment& env, const RolloutSettings& settings,
                          const Eigen::VectorXd& x0, const Eigen::MatrixXd& actions) {
  const RolloutObjective objective(model, env, settings, x0, static_cast<int>(actions.rows()));
  return objective.evaluate(actions);
}

// ---------------------------------------------------------------------------
// Lambda schedules

std::string to_string(LambdaSchedule::Mode mode) {
  switch (mode) {
    case LambdaSchedule::Mode::Constant: return "constant";
    case LambdaSchedule::Mode::Theory: return "theory";
    case LambdaSchedule::Mode::LinearDecay: return "linear_decay";
    case LambdaSchedule::Mode::AutoTune: return "autotune";
  }
  return "unknown";
}

void LambdaSchedule::validate() const {
  switch (mode) {
    case Mode::Constant:
      if (!(value >= 0.0)) throw InputError("lambda.value must be >= 0");
      break;
    case Mode::Theory:
      if (!(c_max > 0.0) || !(theory_horizon > 0.0) || !(state_dim >= 1.0) || !(sigma > 0.0)) {
        throw InputError("lambda theory parameters must be positive");
      }
      break;
    case Mode::LinearDecay:
      if (!(lambda0 >= 0.0) || !(lambda_final >= 0.0) || !(n_final > 0.0)) {
        throw InputError("lambda decay parameters out of range");
      }
      break;
    case Mode::AutoTune:
      if (!(step_size > 0.0) || !(lambda_init > 0.0) || !(lambda_min >= 0.0) || !(lambda_max >= lambda_min) ||
          lag < 1) {
        throw InputError("lambda autotune parameters out of range");
      }
      break;
  }
}

bool LambdaSchedule::operator==(const LambdaSchedule& o) const {
  return mode == o.mode && value == o.value && c_max == o.c_max && theory_horizon == o.theory_horizon &&
         state_dim == o.state_dim && sigma == o.sigma && lambda0 == o.lambda0 && lambda_final == o.lambda_final &&
         n_final == o.n_final && step_size == o.step_size && lambda_init == o.lambda_init &&
         lambda_min == o.lambda_min && lambda_max == o.lambda_max && lag == o.lag;
}

double lambda_value(const LambdaSchedule& schedule, int n, double beta) {
  if (n < 0) throw InputError("lambda_value: n must be >= 0");
  switch (schedule.mode) {
    case LambdaSchedule::Mode::Constant: return schedule.value;
    case LambdaSchedule::Mode::Theory:
      return schedule.c_max * schedule.theory_horizon * (1.0 + std::sqrt(schedule.state_dim)) * beta /
             schedule.sigma;
    case LambdaSchedule::Mode::LinearDecay: {
      if (n >= schedule.n_final) return schedule.lambda_final;
      return schedule.lambda0 + (schedule.lambda_final - schedule.lambda0) * (n / schedule.n_final);
    }
    case LambdaSchedule::Mode::AutoTune: return schedule.lambda_init;
  }
  return 0.0;
}

double lambda_autotune_step(double lambda, const Eigen::VectorXd& sigma_current, const Eigen::VectorXd& sigma_target,
                            double step, double lo, double hi) {
  if (!(lambda > 0.0)) throw InputError("lambda_autotune_step: lambda must be > 0");
  if (sigma_current.size() == 0 || sigma_current.size() != sigma_target.size()) {
    throw InputError("lambda_autotune_step: batches must be nonempty and aligned");
  }
  const double grad = (sigma_current - sigma_target).mean() / lambda;
  return std::clamp(lambda - step * grad, lo, hi);
}

// ---------------------------------------------------------------------------
// MPC

bool PlannerConfig::operator==(const PlannerConfig& o) const {
  const RolloutSettings& a = rollout;
  const RolloutSettings& b = o.rollout;
  return icem == o.icem && a.kind == b.kind && a.lambda == b.lambda && a.discount == b.discount &&
         a.particles == b.particles && a.extrinsic_reward == b.extrinsic_reward && a.noise_seed == b.noise_seed;
}

MpcPlanner::MpcPlanner(const Environment& env, PlannerConfig config, std::uint64_t seed)
    : env_(&env), config_(std::move(config)), rng_(seed) {
  config_.icem.validate();
}

void MpcPlanner::reset() {
  has_warm_ = false;
  warm_ = {};
}

Eigen::VectorXd MpcPlanner::act(const CalibratedModel* model, const Eigen::VectorXd& x, double lambda) {
  if (model == nullptr || model->posterior().size() == 0) {
    Eigen::VectorXd u(env_->action_dim());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      std::uniform_real_distribution<double> d(env_->action_low()(i), env_->action_high()(i));
      u(i) = d(rng_);
    }
    last_ = {};
    return u;
  }
  RolloutSettings settings = config_.rollout;
  settings.lambda = lambda;
  settings.noise_seed = rng_();
  const RolloutObjective objective(*model, *env_, settings, x, config_.icem.horizon);
  return act(std::cref(objective), objective.decision_low(), objective.decision_high());
}

Eigen::VectorXd MpcPlanner::act(const BatchObjective& objective, const Eigen::VectorXd& low,
                                const Eigen::VectorXd& high) {
  last_ = icem_plan(objective, config_.icem, low, high, has_warm_ ? &warm_ : nullptr, rng_);
  warm_.solution = last_.actions;
  warm_.elites = last_.elites;
  has_warm_ = true;
  return last_.actions.row(0).head(env_->action_dim()).transpose();
}

IcemResult MpcPlanner::plan_once(const CalibratedModel& model, const Eigen::VectorXd& x, double lambda,
                                 std::uint64_t seed) const {
  Rng rng(seed);
  RolloutSettings settings = config_.rollout;
  settings.lambda = lambda;
  settings.noise_seed = rng();
  const RolloutObjective objective(model, *env_, settings, x, config_.icem.horizon);
  return icem_plan(std::cref(objective), config_.icem, objective.decision_low(), objective.decision_high(), nullptr,
                   rng);
}

Eigen::VectorXd mpc_act(MpcPlanner& planner, const CalibratedModel& model, const Eigen::VectorXd& x, int episode,
                        double lambda) {
  return planner.act(episode == 0 ? nullptr : &model, x, lambda);
}

}  // namespace sombrl
