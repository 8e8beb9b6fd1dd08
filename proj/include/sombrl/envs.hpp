#pragma once

// Ground-truth systems x' = f*(x, u) + w with bounded rewards.

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>

namespace sombrl {

using Rng = std::mt19937_64;

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  Eigen::VectorXd next_state;
  double reward = 0.0;
};

/// Common interface for the benchmark systems and for synthetic systems
/// built in tests. Implementations are immutable after construction, so one
/// instance can serve many threads; all randomness comes from the caller.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int horizon() const = 0;
  virtual const Eigen::VectorXd& action_low() const = 0;
  virtual const Eigen::VectorXd& action_high() const = 0;
  virtual const Eigen::VectorXd& noise_std() const = 0;

  /// Upper bound of `reward`, including any action-cost shift.
  double reward_max() const;
  double action_cost_weight() const { return action_cost_weight_; }
  void set_action_cost_weight(double k);

  /// Start state; deterministic given `seed`.
  virtual Eigen::VectorXd reset(std::uint64_t seed) const = 0;
  /// Noise-free f*(x, u); `u` is clipped first.
  Eigen::VectorXd true_dynamics(const Eigen::Ref<const Eigen::VectorXd>& x,
                                const Eigen::Ref<const Eigen::VectorXd>& u) const;
  /// r(x, u) in [0, reward_max()], with the action cost applied.
  double reward(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u) const;
  /// One noisy step. Draws exactly state_dim() normals from `rng` (none when
  /// every noise_std entry is zero).
  Transition step(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u,
                  Rng& rng) const;

  Eigen::VectorXd clip_action(const Eigen::Ref<const Eigen::VectorXd>& u) const;

  // Model-facing coordinates. The learned model predicts the residual
  // state_delta(x, x') from model_input(x, u).
  virtual int model_input_dim() const { return state_dim() + action_dim(); }
  virtual void model_input(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u,
                           Eigen::Ref<Eigen::VectorXd> out) const;
  virtual Eigen::VectorXd state_delta(const Eigen::Ref<const Eigen::VectorXd>& x,
                                      const Eigen::Ref<const Eigen::VectorXd>& next) const;
  /// x + delta followed by project_state.
  Eigen::VectorXd apply_delta(const Eigen::Ref<const Eigen::VectorXd>& x,
                              const Eigen::Ref<const Eigen::VectorXd>& delta) const;
  /// Maps a state back onto the valid state set (angle wrap, position box).
  virtual void project_state(Eigen::Ref<Eigen::VectorXd> x) const { (void)x; }

 protected:
  virtual Eigen::VectorXd dynamics(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const Eigen::Ref<const Eigen::VectorXd>& u) const = 0;
  virtual double task_reward(const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Eigen::Ref<const Eigen::VectorXd>& u) const = 0;
  virtual double task_reward_max() const = 0;

 private:
  double action_cost_weight_ = 0.0;
};

enum class EnvFamily { Pendulum, MountainCar };

std::string to_string(EnvFamily family);
EnvFamily env_family_from_string(std::string_view name);

struct EnvSpec {
  EnvFamily family = EnvFamily::Pendulum;
  double dt = 0.05;
  Eigen::VectorXd noise_std;  // empty: family default
  int horizon = 0;            // 0: family default
  double reset_jitter = 0.05;
  double action_cost_weight = 0.0;

  // Pendulum
  double gravity = 9.81;
  double length = 1.0;
  double mass = 1.0;
  double damping = 0.05;
  double max_torque = 2.0;
  double torque_penalty = 0.001;

  // MountainCar
  double power = 0.0015;
  double goal_position = 0.45;

  void validate() const;
  /// Copy with every family default filled in.
  EnvSpec resolved() const;
  bool operator==(const EnvSpec& other) const;
};

/// Theta = 0 upright, theta reported in [-pi, pi); semi-implicit Euler.
class Pendulum final : public Environment {
 public:
  explicit Pendulum(EnvSpec spec);

  std::string name() const override { return "pendulum"; }
  int state_dim() const override { return 2; }
  int action_dim() const override { return 1; }
  int horizon() const override { return spec_.horizon; }
  const Eigen::VectorXd& action_low() const override { return low_; }
  const Eigen::VectorXd& action_high() const override { return high_; }
  const Eigen::VectorXd& noise_std() const override { return spec_.noise_std; }
  const EnvSpec& spec() const { return spec_; }

  Eigen::VectorXd reset(std::uint64_t seed) const override;
  /// (cos theta, sin theta, theta_dot, u): continuous across the wrap.
  int model_input_dim() const override { return 4; }
  void model_input(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& u,
                   Eigen::Ref<Eigen::VectorXd> out) const override;
  Eigen::VectorXd state_delta(const Eigen::Ref<const Eigen::VectorXd>& x,
                              const Eigen::Ref<const Eigen::VectorXd>& next) const override;
  void project_state(Eigen::Ref<Eigen::VectorXd> x) const override;

  /// m l^2 theta_dot^2 / 2 + m g l cos theta.
  double energy(const Eigen::Ref<const Eigen::VectorXd>& x) const;

 protected:
  Eigen::VectorXd dynamics(const Eigen::Ref<const Eigen::VectorXd>& x,
                           const Eigen::Ref<const Eigen::VectorXd>& u) const override;
  double task_reward(const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& u) const override;
  double task_reward_max() const override { return 1.0; }

 private:
  EnvSpec spec_;
  Eigen::VectorXd low_, high_;
};

/// Continuous MountainCar with a sparse goal indicator reward.
class MountainCar final : public Environment {
 public:
  static constexpr double kMinPosition = -1.2;
  static constexpr double kMaxPosition = 0.6;
  static constexpr double kMaxSpeed = 0.07;

  explicit MountainCar(EnvSpec spec);

  std::string name() const override { return "mountaincar"; }
  int state_dim() const override { return 2; }
  int action_dim() const override { return 1; }
  int horizon() const override { return spec_.horizon; }
  const Eigen::VectorXd& action_low() const override { return low_; }
  const Eigen::VectorXd& action_high() const override { return high_; }
  const Eigen::VectorXd& noise_std() const override { return spec_.noise_std; }
  const EnvSpec& spec() const { return spec_; }

  Eigen::VectorXd reset(std::uint64_t seed) const override;
  void project_state(Eigen::Ref<Eigen::VectorXd> x) const override;

 protected:
  Eigen::VectorXd dynamics(const Eigen::Ref<const Eigen::VectorXd>& x,
                           const Eigen::Ref<const Eigen::VectorXd>& u) const override;
  double task_reward(const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& u) const override;
  double task_reward_max() const override { return 1.0; }

 private:
  EnvSpec spec_;
  Eigen::VectorXd low_, high_;
};

std::unique_ptr<Environment> make_env(const EnvSpec& spec);

Eigen::VectorXd env_reset(const EnvSpec& spec, std::uint64_t seed);
Transition env_step(const EnvSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& state,
                    const Eigen::Ref<const Eigen::VectorXd>& action, Rng& rng);
Eigen::VectorXd true_dynamics(const EnvSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& state,
                              const Eigen::Ref<const Eigen::VectorXd>& action);

/// Angle wrapped to [-pi, pi).
double wrap_angle(double a);

}  // namespace sombrl
