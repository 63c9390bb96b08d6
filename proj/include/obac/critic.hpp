#pragma once

#include <vector>

#include "obac/numerics.hpp"
#include "obac/policy.hpp"
#include "obac/replay.hpp"
#include "obac/rng.hpp"

namespace obac {

class BinaryWriter;
class BinaryReader;

/// Twin Q-networks over (state, squashed action) with polyak-averaged targets.
struct CriticPair {
  CriticPair() = default;
  CriticPair(int state_dim, int action_dim, const std::vector<int>& hidden, Activation activation, AdamConfig adam,
             Rng& rng);

  MlpParams q1, q2;
  MlpParams q1_target, q2_target;
  AdamState opt1, opt2;
  /// When false, targets and gating read head 1 only.
  bool clipped = true;

  /// min(Q1, Q2) per column of the selected copies.
  Vector q_min(const Matrix& states, const Matrix& actions, bool use_target) const;
  void update_targets(double rate);

  void serialize(BinaryWriter& w) const;
  static CriticPair deserialize(BinaryReader& r);
};

/// Expectile-regressed state value of the implicit offline optimal policy.
struct OfflineValueHead {
  OfflineValueHead() = default;
  OfflineValueHead(int state_dim, const std::vector<int>& hidden, Activation activation, AdamConfig adam,
                   ExpectileFactor tau, Rng& rng);

  MlpParams v;
  AdamState opt;
  ExpectileFactor tau;

  Vector value(const Matrix& states) const;

  void serialize(BinaryWriter& w) const;
  static OfflineValueHead deserialize(BinaryReader& r);
};

Matrix concat_rows(const Matrix& top, const Matrix& bottom);

struct LossAndGrad {
  double loss = 0.0;
  MlpGradients grads;
};

/// mean_i 1/2 (Q(x_i) - y_i)^2 and its parameter gradient.
LossAndGrad squared_residual_loss(const MlpParams& q, const Matrix& inputs, const Vector& targets);
/// mean_i L2^tau(q_i - V(s_i)) and its gradient with respect to V's parameters.
LossAndGrad expectile_value_loss(const MlpParams& v, const Matrix& states, const Vector& q_values,
                                 ExpectileFactor tau);

/// Soft Bellman target y = r + gamma (1 - done) [q_min_target(s', a') - alpha log pi(a'|s')],
/// a' drawn fresh from the policy (tanh(mean) for the deterministic variant).
Vector q_pi_targets(const CriticPair& pair, const Batch& batch, const SquashedGaussianPolicy& policy, double alpha,
                    double gamma, PolicyVariant variant, Rng& rng);
/// y = r + gamma (1 - done) V_mu(s')
Vector q_mu_targets(const OfflineValueHead& head, const Batch& batch, double gamma);

/// One Adam step for both heads toward `targets`; returns the mean loss.
double regress_pair(CriticPair& pair, const Batch& batch, const Vector& targets);

/// `batch.actions` must be squashed buffer actions.
double update_q_pi(CriticPair& pair, const Batch& batch, const SquashedGaussianPolicy& policy, double alpha,
                   double gamma, PolicyVariant variant, Rng& rng);

/// Monte-Carlo V^pi(s) = mean_i [q_min(s, a_i) - alpha log pi(a_i|s)] over `n_samples`
/// fresh actions per state; no gradients.
Vector compute_v_pi(const CriticPair& pair, const SquashedGaussianPolicy& policy, const Matrix& states, double alpha,
                    int n_samples, PolicyVariant variant, Rng& rng);

/// Expectile regression of V_mu onto q_min_target_mu(s, a_buffer).
double update_v_mu(OfflineValueHead& head, const CriticPair& q_mu, const Batch& batch);

double update_q_mu(CriticPair& q_mu, const OfflineValueHead& head, const Batch& batch, double gamma);

}  // namespace obac
