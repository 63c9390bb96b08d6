#pragma once

#include <vector>

#include "obac/numerics.hpp"
#include "obac/rng.hpp"

namespace obac {

enum class PolicyVariant { stochastic, deterministic };

/// State-conditioned diagonal Gaussian over pre-squash actions, squashed by
/// tanh into (-1, 1)^m and affinely mapped onto the environment bounds.
/// The network emits [mean; raw log_std]; the deterministic variant uses the
/// mean rows only.
class SquashedGaussianPolicy {
 public:
  SquashedGaussianPolicy() = default;
  SquashedGaussianPolicy(int state_dim, int action_dim, Vector action_low, Vector action_high,
                         const std::vector<int>& hidden, Activation activation, Rng& rng);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const Vector& action_low() const { return low_; }
  const Vector& action_high() const { return high_; }

  /// (-1, 1) -> [low, high], column-wise.
  Matrix scale(const Matrix& squashed) const;
  /// [low, high] -> (-1, 1), clamped to +-(1 - 1e-6).
  Matrix unscale(const Matrix& env_actions) const;

  struct Heads {
    Matrix mean;     // m x B
    Matrix log_std;  // m x B, clamped to [-20, 2]
  };
  Heads heads(const Matrix& states) const;
  static Heads split(const Matrix& net_output, int action_dim);

  struct Samples {
    Matrix squashed;  // m x B in (-1, 1)
    Matrix pre;       // pre-squash values
    Matrix noise;     // standard normal draws (zero in deterministic mode)
    Vector log_prob;  // B
  };
  /// Draws one action per column. Deterministic mode returns tanh(mean) and
  /// its log density, consuming no randomness.
  Samples sample(const Matrix& states, Rng& rng, bool deterministic) const;

  struct Action {
    Vector env_action;
    double log_prob;
  };
  Action sample_action(const Vector& state, Rng& rng, bool deterministic) const;

  /// log pi(a|s) for squashed actions (one column per state).
  Vector log_prob(const Matrix& states, const Matrix& squashed_actions) const;

  MlpParams net;

 private:
  int state_dim_ = 0;
  int action_dim_ = 0;
  Vector low_, high_;
};

/// Reparameterised sample and log-prob for given heads and noise.
SquashedGaussianPolicy::Samples squash_samples(const SquashedGaussianPolicy::Heads& heads, const Matrix& noise);

}  // namespace obac
