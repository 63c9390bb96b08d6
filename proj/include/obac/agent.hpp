#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "obac/actor.hpp"
#include "obac/critic.hpp"
#include "obac/envs.hpp"
#include "obac/policy.hpp"
#include "obac/replay.hpp"
#include "obac/rng.hpp"

namespace obac {

using RawConfig = std::map<std::string, std::string>;

struct AgentConfig {
  std::string env = "pendulum";
  double gamma = 0.99;
  double critic_lr = 3e-4;
  double actor_lr = 3e-4;
  double alpha_lr = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 512;
  long buffer_capacity = 1'000'000;
  double tau = 0.9;
  double lambda = 0.001;
  int hidden_width = 512;
  int hidden_layers = 2;
  Activation activation = Activation::elu;
  long warmup_steps = 5000;
  int updates_per_env_step = 1;
  long eval_interval = 1000;
  int eval_episodes = 10;
  std::uint64_t seed = 0;
  GateMode gate = GateMode::adaptive;
  PolicyVariant policy = PolicyVariant::stochastic;
  double polyak = 0.005;
  int v_pi_samples = 1;
  bool clip_q_pi = true;
  bool clip_q_mu = true;
  double alpha_init = 1.0;
  bool auto_alpha = true;
  /// NaN selects -action_dim.
  double target_entropy = std::numeric_limits<double>::quiet_NaN();
  /// Gaussian exploration std (squashed units) of the deterministic variant.
  double exploration_noise = 0.1;
  /// Execution noise of the action-noise wrapper; 0 disables it.
  double action_noise = 0.0;

  /// All keys with canonical values, sorted by key.
  RawConfig to_map() const;
  /// "key=value" lines of to_map().
  std::string canonical() const;
  std::uint64_t hash() const;
  std::vector<int> hidden() const { return std::vector<int>(static_cast<std::size_t>(hidden_layers), hidden_width); }
};

/// Keys accepted by config_validate.
const std::vector<std::string>& agent_config_keys();

/// Fills defaults, rejects unknown keys and out-of-range values.
AgentConfig config_validate(const RawConfig& raw);
/// Applies overrides on top of an existing config, then validates.
AgentConfig config_override(const AgentConfig& base, const RawConfig& overrides);

std::string format_double(double x);

struct EvalResult {
  std::vector<double> returns;
  std::vector<bool> successes;  // sparse-reward envs only
  double mean = 0.0;
  double std = 0.0;             // population std over episodes
  double success_rate = std::numeric_limits<double>::quiet_NaN();
};

/// Deterministic-mode rollouts on fresh environments; episode i resets with
/// derive_seed(seed, i). Success counts any step paying reward 1 on a sparse env.
EvalResult evaluate(const SquashedGaussianPolicy& policy, const std::string& env_name, double action_noise,
                    int episodes, std::uint64_t seed);

/// Statistics of one gradient tick.
struct TickStats {
  double loss_q_pi = 0.0;
  double loss_q_mu = 0.0;
  double loss_v_mu = 0.0;
  double loss_actor = 0.0;
  double alpha = 0.0;
  double gate_fraction = 0.0;
  double v_pi_mean = 0.0;
  double v_mu_mean = 0.0;
  double ungated_bc_grad_norm = 0.0;
};

/// One RunLog row (see harness for the CSV form).
struct RunLogRow {
  long env_step = 0;
  double wall_ms = 0.0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
  double success_rate = std::numeric_limits<double>::quiet_NaN();
  double loss_q_pi = std::numeric_limits<double>::quiet_NaN();
  double loss_q_mu = std::numeric_limits<double>::quiet_NaN();
  double loss_v_mu = std::numeric_limits<double>::quiet_NaN();
  double loss_actor = std::numeric_limits<double>::quiet_NaN();
  double alpha = std::numeric_limits<double>::quiet_NaN();
  double gate_fraction = std::numeric_limits<double>::quiet_NaN();
  double v_pi_mean = std::numeric_limits<double>::quiet_NaN();
  double v_mu_mean = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
  std::string run_id;
};

/// Seeds of the independent random streams of one agent.
struct AgentStreams {
  std::uint64_t init, act, env, noise, buffer, update, gate, eval;
  static AgentStreams from_seed(std::uint64_t seed);
};

/// Observer of the executed action; lets tests assert which actions reach the env.
using ActionObserver = std::function<void(const Vector& env_action)>;

class Agent {
 public:
  explicit Agent(AgentConfig config);

  const AgentConfig& config() const { return config_; }
  const EnvSpec& env_spec() const { return env_->spec(); }
  long env_steps() const { return env_steps_; }
  long gradient_steps() const { return grad_steps_; }
  long episodes() const { return episodes_; }

  /// Acts once, stores the transition, then runs updates_per_env_step ticks
  /// once the buffer holds warmup_steps transitions (and at least one).
  void env_step();
  /// One pass of the per-step schedule on a fresh batch.
  TickStats gradient_tick();

  /// Runs until `total_env_steps`, emitting a row every eval_interval steps
  /// and at the final step.
  void train(long total_env_steps, const std::function<void(const RunLogRow&)>& on_row);

  EvalResult evaluate_now(int episodes, std::uint64_t seed) const;

  /// Aggregates diagnostics since the previous row, evaluates, and resets the
  /// accumulators.
  RunLogRow make_row();

  void save_checkpoint(const std::string& path) const;
  /// Restores a checkpoint; refuses when its configuration differs from
  /// `expected` (listing the differing keys).
  static Agent load_checkpoint(const std::string& path, const AgentConfig& expected);
  static Agent load_checkpoint(const std::string& path);

  void set_run_id(std::string id) { run_id_ = std::move(id); }
  void set_action_observer(ActionObserver obs) { observer_ = std::move(obs); }
  /// Directory where a diagnostic checkpoint is written if a numeric step is rejected.
  void set_snapshot_dir(std::string dir) { snapshot_dir_ = std::move(dir); }
  /// Tracks the ungated behaviour-cloning gradient norm on every tick.
  void set_track_gate_soundness(bool on) { track_gate_ = on; }
  double max_ungated_bc_grad_norm() const { return max_ungated_norm_; }

  const SquashedGaussianPolicy& policy() const { return policy_; }
  const CriticPair& q_pi() const { return q_pi_; }
  const CriticPair& q_mu() const { return q_mu_; }
  const OfflineValueHead& v_mu() const { return v_mu_; }
  const TemperatureState& temperature() const { return temp_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const AdamState& actor_optimizer() const { return actor_opt_; }
  double alpha() const;

 private:
  struct Accumulator {
    double q_pi = 0, q_mu = 0, v_mu = 0, actor = 0, gate = 0, v_pi_mean = 0, v_mu_mean = 0;
    long ticks = 0;
  };

  Vector choose_action();
  void begin_episode();

  AgentConfig config_;
  AgentStreams streams_{};
  std::unique_ptr<Env> env_;
  SquashedGaussianPolicy policy_;
  AdamState actor_opt_;
  CriticPair q_pi_, q_mu_;
  OfflineValueHead v_mu_;
  TemperatureState temp_;
  ReplayBuffer buffer_{1, 1, 1};
  Rng act_rng_, env_rng_, update_rng_, gate_rng_;
  Vector obs_;
  long env_steps_ = 0;
  long grad_steps_ = 0;
  long episodes_ = 0;
  long rows_ = 0;
  Accumulator acc_;
  double max_ungated_norm_ = 0.0;

  std::string run_id_;
  ActionObserver observer_;
  std::string snapshot_dir_;
  bool track_gate_ = false;
};

}  // namespace obac
