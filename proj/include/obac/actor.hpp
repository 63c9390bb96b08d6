#pragma once

#include <string_view>

#include "obac/critic.hpp"
#include "obac/numerics.hpp"
#include "obac/policy.hpp"
#include "obac/replay.hpp"
#include "obac/rng.hpp"

namespace obac {

class BinaryWriter;
class BinaryReader;

enum class GateMode { adaptive, fixed_on, off };

GateMode parse_gate_mode(std::string_view name);
const char* to_string(GateMode m) noexcept;

struct GateConfig {
  double lambda = 0.001;
  GateMode mode = GateMode::adaptive;
  int v_pi_samples = 1;
};

/// 1 where v_mu >= v_pi (ties count as gated), else 0.
Vector gate_indicator(const Vector& v_mu, const Vector& v_pi);
/// Indicator for the adaptive mode, all ones for fixed_on, all zeros for off.
Vector gate_vector(GateMode mode, const Vector& v_mu, const Vector& v_pi);

/// Automatic entropy temperature. alpha = exp(log_alpha).
struct TemperatureState {
  double log_alpha = 0.0;
  double target_entropy = -1.0;
  ScalarAdam opt;

  double alpha() const;
  void serialize(BinaryWriter& w) const;
  static TemperatureState deserialize(BinaryReader& r);
  friend bool operator==(const TemperatureState&, const TemperatureState&) = default;
};

/// Minimises -log_alpha * mean(log_prob + target_entropy); returns the loss.
double update_temperature(TemperatureState& t, const Vector& log_probs);

/// Actor objective evaluated with fixed reparameterisation noise.
struct ActorObjective {
  double loss = 0.0;
  MlpGradients grads;
  Vector log_probs;
  /// Norm of the parameter gradient of the behaviour-cloning term restricted
  /// to ungated columns.
  double ungated_bc_grad_norm = 0.0;
};

/// Stochastic objective
///   mean_j [ alpha log pi(a~_j|s_j) - q_min(s_j, a~_j) - lambda g_j log pi(a_buf_j|s_j) ]
/// with a~ = tanh(mean + std * noise). `buffer_actions` are squashed.
/// The critic pair is read through its online copies and is not modified.
ActorObjective stochastic_actor_objective(const SquashedGaussianPolicy& policy, const CriticPair& q_pi,
                                          const Matrix& states, const Matrix& buffer_actions, const Matrix& noise,
                                          const Vector& gate, double alpha, double lambda,
                                          bool track_ungated = false);

/// Deterministic objective mean_j [ -q_min(s_j, tanh(mean_j)) + lambda g_j ||tanh(mean_j) - a_buf_j||^2 ].
ActorObjective deterministic_actor_objective(const SquashedGaussianPolicy& policy, const CriticPair& q_pi,
                                             const Matrix& states, const Matrix& buffer_actions, const Vector& gate,
                                             double lambda, bool track_ungated = false);

struct PolicyUpdate {
  double loss = 0.0;
  double gate_fraction = 0.0;
  Vector log_probs;
  double ungated_bc_grad_norm = 0.0;
};

/// One Adam step of the actor. `gate` comes from gate_vector; noise is drawn
/// from `rng` for the stochastic variant only.
PolicyUpdate update_policy(SquashedGaussianPolicy& policy, AdamState& opt, const CriticPair& q_pi, const Batch& batch,
                           const Vector& gate, double alpha, double lambda, PolicyVariant variant, Rng& rng,
                           bool track_ungated = false);

}  // namespace obac
