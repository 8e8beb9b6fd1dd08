#include "sombrl/envs.hpp"

#include "sombrl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sombrl {

namespace {

void require_finite(const Eigen::Ref<const Eigen::VectorXd>& v, const char* what) {
  if (!v.allFinite()) throw InputError(std::string("non-finite ") + what);
}

}  // namespace

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  if (a >= -pi && a < pi) return a;
  double w = std::fmod(a + pi, 2.0 * pi);
  if (w < 0.0) w += 2.0 * pi;
  w -= pi;
  return w >= pi ? -pi : w;
}

// ---------------------------------------------------------------------------
// Environment

double Environment::reward_max() const {
  const double u_max = std::max(action_low().cwiseAbs().maxCoeff(), action_high().cwiseAbs().maxCoeff());
  return task_reward_max() + action_cost_weight_ * u_max * std::sqrt(static_cast<double>(action_dim()));
}

void Environment::set_action_cost_weight(double k) {
  if (!(k >= 0.0) || !std::isfinite(k)) throw InputError("action cost weight must be >= 0");
  action_cost_weight_ = k;
}

Eigen::VectorXd Environment::clip_action(const Eigen::Ref<const Eigen::VectorXd>& u) const {
  if (u.size() != action_dim()) throw InputError("action has the wrong dimension");
  return u.cwiseMax(action_low()).cwiseMin(action_high());
}

Eigen::VectorXd Environment::true_dynamics(const Eigen::Ref<const Eigen::VectorXd>& x,
                                           const Eigen::Ref<const Eigen::VectorXd>& u) const {
  if (x.size() != state_dim()) throw InputError("state has the wrong dimension");
  require_finite(x, "state");
  require_finite(u, "action");
  Eigen::VectorXd next = dynamics(x, clip_action(u));
  project_state(next);
  return next;
}

double Environment::reward(const Eigen::Ref<const Eigen::VectorXd>& x,
                           const Eigen::Ref<const Eigen::VectorXd>& u) const {
  const Eigen::VectorXd uc = clip_action(u);
  double r = task_reward(x, uc);
  if (action_cost_weight_ > 0.0) r += reward_max() - task_reward_max() - action_cost_weight_ * uc.norm();
  return std::clamp(r, 0.0, reward_max());
}

Transition Environment::step(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u,
                             Rng& rng) const {
  if (x.size() != state_dim()) throw InputError("state has the wrong dimension");
  require_finite(x, "state");
  require_finite(u, "action");
  Transition t;
  t.state = x;
  t.action = clip_action(u);
  t.next_state = dynamics(x, t.action);
  const Eigen::VectorXd& sigma = noise_std();
  if ((sigma.array() != 0.0).any()) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < t.next_state.size(); ++i) t.next_state(i) += sigma(i) * normal(rng);
  }
  project_state(t.next_state);
  t.reward = reward(x, t.action);
  return t;
}

void Environment::model_input(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u,
                              Eigen::Ref<Eigen::VectorXd> out) const {
  out.head(state_dim()) = x;
  out.tail(action_dim()) = u;
}

Eigen::VectorXd Environment::state_delta(const Eigen::Ref<const Eigen::VectorXd>& x,
                                         const Eigen::Ref<const Eigen::VectorXd>& next) const {
  return next - x;
}

Eigen::VectorXd Environment::apply_delta(const Eigen::Ref<const Eigen::VectorXd>& x,
                                         const Eigen::Ref<const Eigen::VectorXd>& delta) const {
  Eigen::VectorXd next = x + delta;
  project_state(next);
  return next;
}

// ---------------------------------------------------------------------------
// EnvSpec

std::string to_string(EnvFamily family) {
  return family == EnvFamily::Pendulum ? "pendulum" : "mountaincar";
}

EnvFamily env_family_from_string(std::string_view name) {
  if (name == "pendulum") return EnvFamily::Pendulum;
  if (name == "mountaincar") return EnvFamily::MountainCar;
  throw InputError("unknown environment family '" + std::string(name) + "' (expected pendulum or mountaincar)");
}

EnvSpec EnvSpec::resolved() const {
  EnvSpec s = *this;
  const bool pendulum = family == EnvFamily::Pendulum;
  if (s.noise_std.size() == 0) s.noise_std = Eigen::VectorXd::Constant(2, pendulum ? 0.01 : 1e-4);
  if (s.horizon == 0) s.horizon = pendulum ? 150 : 200;
  return s;
}

void EnvSpec::validate() const {
  if (!(dt > 0.0)) throw InputError("env.dt must be > 0");
  if (horizon < 0) throw InputError("env.horizon must be >= 1");
  if (noise_std.size() != 0 && (noise_std.size() != 2 || !(noise_std.array() >= 0.0).all())) {
    throw InputError("env.noise_std must have 2 nonnegative entries");
  }
  if (!(reset_jitter >= 0.0)) throw InputError("env.reset_jitter must be >= 0");
  if (!(action_cost_weight >= 0.0)) throw InputError("env.action_cost_weight must be >= 0");
  if (!(length > 0.0) || !(mass > 0.0) || !(damping >= 0.0) || !(max_torque > 0.0) || !(torque_penalty >= 0.0)) {
    throw InputError("env: pendulum parameters out of range");
  }
  if (!(power > 0.0)) throw InputError("env.power must be > 0");
}

bool EnvSpec::operator==(const EnvSpec& o) const {
  return family == o.family && dt == o.dt && noise_std.size() == o.noise_std.size() &&
         noise_std == o.noise_std && horizon == o.horizon && reset_jitter == o.reset_jitter &&
         action_cost_weight == o.action_cost_weight && gravity == o.gravity && length == o.length &&
         mass == o.mass && damping == o.damping && max_torque == o.max_torque &&
         torque_penalty == o.torque_penalty && power == o.power && goal_position == o.goal_position;
}

// ---------------------------------------------------------------------------
// Pendulum

Pendulum::Pendulum(EnvSpec spec) : spec_(spec.resolved()) {
  spec_.validate();
  low_ = Eigen::VectorXd::Constant(1, -spec_.max_torque);
  high_ = Eigen::VectorXd::Constant(1, spec_.max_torque);
  set_action_cost_weight(spec_.action_cost_weight);
}

Eigen::VectorXd Pendulum::reset(std::uint64_t seed) const {
  Rng rng(seed);
  std::uniform_real_distribution<double> jitter(-spec_.reset_jitter, spec_.reset_jitter);
  Eigen::VectorXd x(2);
  x(0) = std::numbers::pi;
  x(1) = 0.0;
  if (spec_.reset_jitter > 0.0) {
    x(0) += jitter(rng);
    x(1) += jitter(rng);
  }
  project_state(x);
  return x;
}

Eigen::VectorXd Pendulum::dynamics(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const Eigen::Ref<const Eigen::VectorXd>& u) const {
  const double acc = spec_.gravity / spec_.length * std::sin(x(0)) +
                     u(0) / (spec_.mass * spec_.length * spec_.length) - spec_.damping * x(1);
  Eigen::VectorXd next(2);
  next(1) = x(1) + spec_.dt * acc;
  next(0) = wrap_angle(x(0) + spec_.dt * next(1));
  return next;
}

double Pendulum::task_reward(const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Eigen::Ref<const Eigen::VectorXd>& u) const {
  return std::clamp(0.5 * (1.0 + std::cos(x(0))) - spec_.torque_penalty * u(0) * u(0), 0.0, 1.0);
}

void Pendulum::model_input(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u,
                           Eigen::Ref<Eigen::VectorXd> out) const {
  out(0) = std::cos(x(0));
  out(1) = std::sin(x(0));
  out(2) = x(1);
  out(3) = u(0);
}

Eigen::VectorXd Pendulum::state_delta(const Eigen::Ref<const Eigen::VectorXd>& x,
                                      const Eigen::Ref<const Eigen::VectorXd>& next) const {
  Eigen::VectorXd d = next - x;
  d(0) = wrap_angle(d(0));
  return d;
}

void Pendulum::project_state(Eigen::Ref<Eigen::VectorXd> x) const { x(0) = wrap_angle(x(0)); }

double Pendulum::energy(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const double ml = spec_.mass * spec_.length;
  return 0.5 * ml * spec_.length * x(1) * x(1) + ml * spec_.gravity * std::cos(x(0));
}

// ---------------------------------------------------------------------------
// MountainCar

MountainCar::MountainCar(EnvSpec spec) : spec_(spec.resolved()) {
  spec_.validate();
  low_ = Eigen::VectorXd::Constant(1, -1.0);
  high_ = Eigen::VectorXd::Constant(1, 1.0);
  set_action_cost_weight(spec_.action_cost_weight);
}

Eigen::VectorXd MountainCar::reset(std::uint64_t seed) const {
  Rng rng(seed);
  std::uniform_real_distribution<double> jitter(-spec_.reset_jitter, spec_.reset_jitter);
  Eigen::VectorXd x(2);
  x(0) = -0.5;
  x(1) = 0.0;
  // Position only: a velocity jitter of the same size would exceed the speed limit.
  if (spec_.reset_jitter > 0.0) x(0) += jitter(rng);
  project_state(x);
  return x;
}

Eigen::VectorXd MountainCar::dynamics(const Eigen::Ref<const Eigen::VectorXd>& x,
                                      const Eigen::Ref<const Eigen::VectorXd>& u) const {
  Eigen::VectorXd next(2);
  next(1) = std::clamp(x(1) + spec_.power * u(0) - 0.0025 * std::cos(3.0 * x(0)), -kMaxSpeed, kMaxSpeed);
  next(0) = x(0) + next(1);
  project_state(next);
  return next;
}

double MountainCar::task_reward(const Eigen::Ref<const Eigen::VectorXd>& x,
                                const Eigen::Ref<const Eigen::VectorXd>&) const {
  return x(0) >= spec_.goal_position ? 1.0 : 0.0;
}

void MountainCar::project_state(Eigen::Ref<Eigen::VectorXd> x) const {
  x(1) = std::clamp(x(1), -kMaxSpeed, kMaxSpeed);
  x(0) = std::clamp(x(0), kMinPosition, kMaxPosition);
  if (x(0) <= kMinPosition && x(1) < 0.0) x(1) = 0.0;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Environment> make_env(const EnvSpec& spec) {
  if (spec.family == EnvFamily::Pendulum) return std::make_unique<Pendulum>(spec);
  return std::make_unique<MountainCar>(spec);
}

Eigen::VectorXd env_reset(const EnvSpec& spec, std::uint64_t seed) { return make_env(spec)->reset(seed); }

Transition env_step(const EnvSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& state,
                    const Eigen::Ref<const Eigen::VectorXd>& action, Rng& rng) {
  return make_env(spec)->step(state, action, rng);
}

Eigen::VectorXd true_dynamics(const EnvSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& state,
                              const Eigen::Ref<const Eigen::VectorXd>& action) {
  return make_env(spec)->true_dynamics(state, action);
}

}  // namespace sombrl
