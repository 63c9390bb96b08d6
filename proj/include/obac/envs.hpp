#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "obac/numerics.hpp"
#include "obac/rng.hpp"
#include "obac/tabular_mdp.hpp"

namespace obac {

enum class RewardKind { dense, sparse };

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  Vector action_low;
  Vector action_high;
  int max_episode_steps = 1;
  RewardKind reward_kind = RewardKind::dense;

  void validate() const;
};

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool terminated = false;  // environment-intrinsic end
  bool truncated = false;   // horizon cutoff
};

/// Episodic environment. Subclasses implement the dynamics; this base owns
/// the step counter, action clamping and horizon truncation.
class Env {
 public:
  virtual ~Env() = default;

  virtual const EnvSpec& spec() const = 0;

  /// Starts a new episode drawn from d0 using `seed`.
  virtual Vector reset(std::uint64_t seed);
  virtual StepResult step(const Vector& action);

  /// Re-seeds the stream used by reset()-independent stochastic dynamics.
  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }

  virtual int elapsed_steps() const { return steps_; }
  virtual bool active() const { return started_ && !done_; }

  /// Dynamic state (episode position, counters, RNG) for checkpointing.
  virtual void save_state(BinaryWriter& w) const;
  virtual void load_state(BinaryReader& r);

 protected:
  virtual Vector do_reset(Rng& rng) = 0;
  /// `action` is already clamped to the bounds.
  virtual StepResult do_step(const Vector& action, Rng& rng) = 0;
  virtual void save_dynamics(BinaryWriter& w) const = 0;
  virtual void load_dynamics(BinaryReader& r) = 0;

 private:
  Rng rng_;
  int steps_ = 0;
  bool started_ = false;
  bool done_ = false;
  bool warned_clamp_ = false;
};

/// Swing-up pendulum: state (cos th, sin th, thdot), torque in [-2, 2].
class PendulumEnv final : public Env {
 public:
  PendulumEnv();
  const EnvSpec& spec() const override { return spec_; }

  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kDt = 0.05;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kMaxTorque = 2.0;

  /// Puts the pendulum at angle `theta`, velocity `thdot` (test hook).
  void set_physical_state(double theta, double thdot);
  double theta() const { return theta_; }
  double theta_dot() const { return thdot_; }

 protected:
  Vector do_reset(Rng& rng) override;
  StepResult do_step(const Vector& action, Rng& rng) override;
  void save_dynamics(BinaryWriter& w) const override;
  void load_dynamics(BinaryReader& r) override;

 private:
  Vector observe() const;
  EnvSpec spec_;
  double theta_ = 0.0;
  double thdot_ = 0.0;
};

/// 2-D point mass in the arena [-1, 1]^2 with acceleration control.
/// position' = position + dt * velocity; velocity' = clip(velocity + dt * gain * a).
/// The sparse variant pays 1 and terminates inside the goal disc; the dense
/// variant pays minus the distance to the goal every step.
class PointMassEnv final : public Env {
 public:
  explicit PointMassEnv(RewardKind kind);
  const EnvSpec& spec() const override { return spec_; }

  static constexpr double kDt = 0.05;
  static constexpr double kAccelGain = 4.0;
  static constexpr double kMaxSpeed = 1.0;
  static constexpr double kGoalX = 0.5;
  static constexpr double kGoalY = 0.5;
  static constexpr double kGoalRadius = 0.15;

  void set_physical_state(double px, double py, double vx, double vy);

 protected:
  Vector do_reset(Rng& rng) override;
  StepResult do_step(const Vector& action, Rng& rng) override;
  void save_dynamics(BinaryWriter& w) const override;
  void load_dynamics(BinaryReader& r) override;

 private:
  Vector observe() const;
  EnvSpec spec_;
  double px_ = 0, py_ = 0, vx_ = 0, vy_ = 0;
};

/// Continuous-interface view of a TabularMdp: one-hot states, a single action
/// coordinate in [-1, 1] binned into the discrete action set.
class TabularEnv final : public Env {
 public:
  TabularEnv(std::string name, TabularMdp mdp, int horizon);
  const EnvSpec& spec() const override { return spec_; }
  const TabularMdp& mdp() const { return mdp_; }
  int current_state() const { return state_; }
  /// Discrete action index for a continuous action coordinate.
  int discretize(double a) const;

 protected:
  Vector do_reset(Rng& rng) override;
  StepResult do_step(const Vector& action, Rng& rng) override;
  void save_dynamics(BinaryWriter& w) const override;
  void load_dynamics(BinaryReader& r) override;

 private:
  Vector one_hot(int s) const;
  EnvSpec spec_;
  TabularMdp mdp_;
  int state_ = 0;
};

/// Executes clamp(requested + eps), eps ~ N(0, sigma^2 I), every step.
class ActionNoiseWrapper final : public Env {
 public:
  ActionNoiseWrapper(std::unique_ptr<Env> inner, double sigma, std::uint64_t seed);
  const EnvSpec& spec() const override { return inner_->spec(); }
  Vector reset(std::uint64_t seed) override;
  StepResult step(const Vector& action) override;
  double sigma() const { return sigma_; }
  const Vector& last_executed_action() const { return last_executed_; }
  Env& inner() { return *inner_; }
  int elapsed_steps() const override { return inner_->elapsed_steps(); }
  bool active() const override { return inner_->active(); }

  void save_state(BinaryWriter& w) const override;
  void load_state(BinaryReader& r) override;

 protected:
  Vector do_reset(Rng&) override;
  StepResult do_step(const Vector&, Rng&) override;
  void save_dynamics(BinaryWriter&) const override {}
  void load_dynamics(BinaryReader&) override {}

 private:
  std::unique_ptr<Env> inner_;
  double sigma_;
  Rng noise_;
  Vector last_executed_;
};

const std::vector<std::string>& env_names();
std::unique_ptr<Env> make_env(std::string_view name, std::uint64_t seed);
std::unique_ptr<Env> wrap_action_noise(std::unique_ptr<Env> env, double sigma, std::uint64_t seed);

/// The chain MDP behind the "chain-mdp" environment.
TabularMdp chain_env_mdp();

}  // namespace obac
