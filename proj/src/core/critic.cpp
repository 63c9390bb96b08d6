#include "obac/critic.hpp"

#include <cmath>

#include "obac/errors.hpp"
#include "obac/serialization.hpp"

namespace obac {

namespace {

std::vector<int> sizes_for(int in_dim, const std::vector<int>& hidden) {
  std::vector<int> s{in_dim};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(1);
  return s;
}

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NumericError(std::string(what) + ": non-finite target, step rejected");
}

}  // namespace

Matrix concat_rows(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) throw DimensionError("concat_rows: column count mismatch");
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

CriticPair::CriticPair(int state_dim, int action_dim, const std::vector<int>& hidden, Activation activation,
                       AdamConfig adam, Rng& rng)
    : q1(sizes_for(state_dim + action_dim, hidden), activation, rng),
      q2(sizes_for(state_dim + action_dim, hidden), activation, rng),
      q1_target(q1),
      q2_target(q2),
      opt1(q1, adam),
      opt2(q2, adam) {}

Vector CriticPair::q_min(const Matrix& states, const Matrix& actions, bool use_target) const {
  const Matrix x = concat_rows(states, actions);
  const MlpParams& a = use_target ? q1_target : q1;
  Vector v1 = mlp_predict(a, x).row(0).transpose();
  if (!clipped) return v1;
  const MlpParams& b = use_target ? q2_target : q2;
  const Vector v2 = mlp_predict(b, x).row(0).transpose();
  return v1.cwiseMin(v2);
}

void CriticPair::update_targets(double rate) {
  polyak_update(q1_target, q1, rate);
  polyak_update(q2_target, q2, rate);
}

void CriticPair::serialize(BinaryWriter& w) const {
  q1.serialize(w);
  q2.serialize(w);
  q1_target.serialize(w);
  q2_target.serialize(w);
  opt1.serialize(w);
  opt2.serialize(w);
  w.u8(clipped);
}

CriticPair CriticPair::deserialize(BinaryReader& r) {
  CriticPair p;
  p.q1 = MlpParams::deserialize(r);
  p.q2 = MlpParams::deserialize(r);
  p.q1_target = MlpParams::deserialize(r);
  p.q2_target = MlpParams::deserialize(r);
  p.opt1 = AdamState::deserialize(r);
  p.opt2 = AdamState::deserialize(r);
  p.clipped = r.u8() != 0;
  return p;
}

OfflineValueHead::OfflineValueHead(int state_dim, const std::vector<int>& hidden, Activation activation,
                                   AdamConfig adam, ExpectileFactor tau_, Rng& rng)
    : v(sizes_for(state_dim, hidden), activation, rng), opt(v, adam), tau(tau_) {}

Vector OfflineValueHead::value(const Matrix& states) const { return mlp_predict(v, states).row(0).transpose(); }

void OfflineValueHead::serialize(BinaryWriter& w) const {
  v.serialize(w);
  opt.serialize(w);
  w.f64(tau.value());
}

OfflineValueHead OfflineValueHead::deserialize(BinaryReader& r) {
  OfflineValueHead h;
  h.v = MlpParams::deserialize(r);
  h.opt = AdamState::deserialize(r);
  h.tau = ExpectileFactor(r.f64());
  return h;
}

LossAndGrad squared_residual_loss(const MlpParams& q, const Matrix& inputs, const Vector& targets) {
  auto fwd = mlp_forward(q, inputs);
  const Eigen::Index n = inputs.cols();
  const Vector resid = fwd.output.row(0).transpose() - targets;
  LossAndGrad out;
  out.loss = 0.5 * resid.squaredNorm() / static_cast<double>(n);
  Matrix g = (resid / static_cast<double>(n)).transpose();
  out.grads = backward(q, fwd.tape, g);
  return out;
}

LossAndGrad expectile_value_loss(const MlpParams& v, const Matrix& states, const Vector& q_values,
                                 ExpectileFactor tau) {
  auto fwd = mlp_forward(v, states);
  const Eigen::Index n = states.cols();
  Matrix g(1, n);
  LossAndGrad out;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double resid = q_values[j] - fwd.output(0, j);
    out.loss += expectile_loss(resid, tau);
    // d/dV L(q - V) = -L'(q - V)
    g(0, j) = -expectile_loss_grad(resid, tau) / static_cast<double>(n);
  }
  out.loss /= static_cast<double>(n);
  out.grads = backward(v, fwd.tape, g);
  return out;
}

Vector q_pi_targets(const CriticPair& pair, const Batch& batch, const SquashedGaussianPolicy& policy, double alpha,
                    double gamma, PolicyVariant variant, Rng& rng) {
  const bool det = variant == PolicyVariant::deterministic;
  const auto next = policy.sample(batch.next_states, rng, det);
  Vector soft = pair.q_min(batch.next_states, next.squashed, true);
  if (!det) soft -= alpha * next.log_prob;
  const Vector mask = Vector::Ones(batch.size()) - batch.terminated;
  Vector y = batch.rewards + gamma * mask.cwiseProduct(soft);
  require_finite(y, "update_q_pi");
  return y;
}

Vector q_mu_targets(const OfflineValueHead& head, const Batch& batch, double gamma) {
  const Vector mask = Vector::Ones(batch.size()) - batch.terminated;
  Vector y = batch.rewards + gamma * mask.cwiseProduct(head.value(batch.next_states));
  require_finite(y, "update_q_mu");
  return y;
}

double regress_pair(CriticPair& pair, const Batch& batch, const Vector& targets) {
  if (batch.size() == 0) throw StateError("critic update needs a nonempty batch");
  const Matrix x = concat_rows(batch.states, batch.actions);
  auto r1 = squared_residual_loss(pair.q1, x, targets);
  auto r2 = squared_residual_loss(pair.q2, x, targets);
  if (!std::isfinite(r1.loss) || !std::isfinite(r2.loss)) throw NumericError("critic loss is non-finite");
  adam_step(pair.opt1, pair.q1, r1.grads);
  adam_step(pair.opt2, pair.q2, r2.grads);
  return 0.5 * (r1.loss + r2.loss);
}

double update_q_pi(CriticPair& pair, const Batch& batch, const SquashedGaussianPolicy& policy, double alpha,
                   double gamma, PolicyVariant variant, Rng& rng) {
  if (batch.size() == 0) throw StateError("update_q_pi needs a nonempty batch");
  const Vector y = q_pi_targets(pair, batch, policy, alpha, gamma, variant, rng);
  return regress_pair(pair, batch, y);
}

Vector compute_v_pi(const CriticPair& pair, const SquashedGaussianPolicy& policy, const Matrix& states, double alpha,
                    int n_samples, PolicyVariant variant, Rng& rng) {
  if (n_samples < 1) throw ConfigError("compute_v_pi needs n_samples >= 1");
  const bool det = variant == PolicyVariant::deterministic;
  Vector acc = Vector::Zero(states.cols());
  for (int i = 0; i < n_samples; ++i) {
    const auto s = policy.sample(states, rng, det);
    Vector v = pair.q_min(states, s.squashed, false);
    if (!det) v -= alpha * s.log_prob;
    acc += v;
  }
  return acc / static_cast<double>(n_samples);
}

double update_v_mu(OfflineValueHead& head, const CriticPair& q_mu, const Batch& batch) {
  if (batch.size() == 0) throw StateError("update_v_mu needs a nonempty batch");
  // Only buffer actions are ever fed to the offline critics.
  const Vector q = q_mu.q_min(batch.states, batch.actions, true);
  if (!q.allFinite()) throw NumericError("update_v_mu: non-finite Q values");
  auto lg = expectile_value_loss(head.v, batch.states, q, head.tau);
  if (!std::isfinite(lg.loss)) throw NumericError("update_v_mu: non-finite loss");
  adam_step(head.opt, head.v, lg.grads);
  return lg.loss;
}

double update_q_mu(CriticPair& q_mu, const OfflineValueHead& head, const Batch& batch, double gamma) {
  if (batch.size() == 0) throw StateError("update_q_mu needs a nonempty batch");
  const Vector y = q_mu_targets(head, batch, gamma);
  return regress_pair(q_mu, batch, y);
}

}  // namespace obac
