#include "obac/actor.hpp"

#include <cmath>

#include "obac/errors.hpp"
#include "obac/serialization.hpp"

namespace obac {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

struct CriticReading {
  Vector q;        // B
  Matrix dq_da;    // m x B, gradient of the selected head
};

// min(Q1, Q2) on the online copies and its action gradient. The gradient
// follows whichever head attains the minimum (head 1 on ties).
CriticReading read_critic(const CriticPair& pair, const Matrix& states, const Matrix& actions) {
  const Matrix x = concat_rows(states, actions);
  const Eigen::Index n = x.cols();
  const Eigen::Index m = actions.rows();
  auto f1 = mlp_forward(pair.q1, x);
  CriticReading out;
  if (!pair.clipped) {
    out.q = f1.output.row(0).transpose();
    out.dq_da = backward(pair.q1, f1.tape, Matrix::Ones(1, n), false).input.bottomRows(m);
    return out;
  }
  auto f2 = mlp_forward(pair.q2, x);
  out.q.resize(n);
  Matrix sel1 = Matrix::Zero(1, n), sel2 = Matrix::Zero(1, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (f2.output(0, j) < f1.output(0, j)) {
      out.q[j] = f2.output(0, j);
      sel2(0, j) = 1.0;
    } else {
      out.q[j] = f1.output(0, j);
      sel1(0, j) = 1.0;
    }
  }
  out.dq_da = backward(pair.q1, f1.tape, sel1, false).input.bottomRows(m);
  out.dq_da += backward(pair.q2, f2.tape, sel2, false).input.bottomRows(m);
  return out;
}

double ungated_norm(const MlpParams& net, const Matrix& states, const Matrix& bc_grad, const Vector& gate) {
  Matrix g = bc_grad;
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    if (gate[j] != 0.0) g.col(j).setZero();
  auto fwd = mlp_forward(net, states);
  return std::sqrt(backward(net, fwd.tape, g).squared_norm());
}

void check_inputs(const SquashedGaussianPolicy& policy, const Matrix& states, const Matrix& buffer_actions,
                  const Vector& gate) {
  if (states.cols() == 0) throw StateError("actor update needs a nonempty batch");
  if (states.rows() != policy.state_dim()) throw DimensionError("actor: state dimension mismatch");
  if (buffer_actions.rows() != policy.action_dim() || buffer_actions.cols() != states.cols())
    throw DimensionError("actor: buffer action shape mismatch");
  if (gate.size() != states.cols()) throw DimensionError("actor: gate length mismatch");
}

}  // namespace

GateMode parse_gate_mode(std::string_view name) {
  if (name == "adaptive") return GateMode::adaptive;
  if (name == "fixed_on" || name == "fixed-on" || name == "on") return GateMode::fixed_on;
  if (name == "off") return GateMode::off;
  throw ConfigError("unknown gate mode '" + std::string(name) + "' (expected adaptive, fixed_on, off)");
}

const char* to_string(GateMode m) noexcept {
  switch (m) {
    case GateMode::adaptive: return "adaptive";
    case GateMode::fixed_on: return "fixed_on";
    case GateMode::off: return "off";
  }
  return "?";
}

Vector gate_indicator(const Vector& v_mu, const Vector& v_pi) {
  if (v_mu.size() != v_pi.size()) throw DimensionError("gate_indicator: length mismatch");
  Vector g(v_mu.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = v_mu[i] - v_pi[i] >= 0.0 ? 1.0 : 0.0;
  return g;
}

Vector gate_vector(GateMode mode, const Vector& v_mu, const Vector& v_pi) {
  switch (mode) {
    case GateMode::adaptive: return gate_indicator(v_mu, v_pi);
    case GateMode::fixed_on: return Vector::Ones(v_mu.size());
    case GateMode::off: return Vector::Zero(v_mu.size());
  }
  throw Error(ErrorKind::internal, "bad gate mode");
}

double TemperatureState::alpha() const { return std::exp(log_alpha); }

void TemperatureState::serialize(BinaryWriter& w) const {
  w.f64(log_alpha);
  w.f64(target_entropy);
  w.f64(opt.config.lr);
  w.f64(opt.config.beta1);
  w.f64(opt.config.beta2);
  w.f64(opt.config.eps);
  w.f64(opt.m);
  w.f64(opt.v);
  w.u64(static_cast<std::uint64_t>(opt.t));
}

TemperatureState TemperatureState::deserialize(BinaryReader& r) {
  TemperatureState t;
  t.log_alpha = r.f64();
  t.target_entropy = r.f64();
  t.opt.config.lr = r.f64();
  t.opt.config.beta1 = r.f64();
  t.opt.config.beta2 = r.f64();
  t.opt.config.eps = r.f64();
  t.opt.m = r.f64();
  t.opt.v = r.f64();
  t.opt.t = static_cast<long>(r.u64());
  return t;
}

double update_temperature(TemperatureState& t, const Vector& log_probs) {
  if (log_probs.size() == 0) throw StateError("update_temperature needs log-probabilities");
  const double shifted = log_probs.mean() + t.target_entropy;
  if (!std::isfinite(shifted)) throw NumericError("temperature update: non-finite log-probabilities");
  // loss = -log_alpha * shifted
  t.log_alpha = t.opt.step(t.log_alpha, -shifted);
  return -t.log_alpha * shifted;
}

ActorObjective stochastic_actor_objective(const SquashedGaussianPolicy& policy, const CriticPair& q_pi,
                                          const Matrix& states, const Matrix& buffer_actions, const Matrix& noise,
                                          const Vector& gate, double alpha, double lambda, bool track_ungated) {
  check_inputs(policy, states, buffer_actions, gate);
  const int m = policy.action_dim();
  const Eigen::Index n = states.cols();
  if (noise.rows() != m || noise.cols() != n) throw DimensionError("actor: noise shape mismatch");
  const double inv_n = 1.0 / static_cast<double>(n);

  auto fwd = mlp_forward(policy.net, states);
  const auto heads = SquashedGaussianPolicy::split(fwd.output, m);
  const auto smp = squash_samples(heads, noise);
  const CriticReading crit = read_critic(q_pi, states, smp.squashed);
  const bool use_bc = lambda != 0.0;

  ActorObjective out;
  out.log_probs = smp.log_prob;
  Matrix grad = Matrix::Zero(2 * m, n);
  Matrix bc_grad;
  if (use_bc) bc_grad = Matrix::Zero(2 * m, n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    double lj = alpha * smp.log_prob[j] - crit.q[j];
    double bc = 0.0;
    for (int i = 0; i < m; ++i) {
      const double a = smp.squashed(i, j);
      const double sd = std::exp(heads.log_std(i, j));
      const double raw = fwd.output(m + i, j);
      const double pass = (raw > kLogStdMin && raw < kLogStdMax) ? 1.0 : 0.0;
      const double d_pre = alpha * 2.0 * a - crit.dq_da(i, j) * (1.0 - a * a);
      grad(i, j) = d_pre * inv_n;
      grad(m + i, j) = (d_pre * sd * noise(i, j) - alpha) * inv_n * pass;
      if (use_bc) {
        const double ab = clamp_squashed_action(buffer_actions(i, j));
        const double z = (std::atanh(ab) - heads.mean(i, j)) / sd;
        bc += -0.5 * z * z - heads.log_std(i, j) - kHalfLog2Pi - std::log1p(-ab * ab);
        // gradient of -lambda g log pi(a_buf|s)
        bc_grad(i, j) = -lambda * gate[j] * (z / sd) * inv_n;
        bc_grad(m + i, j) = -lambda * gate[j] * (z * z - 1.0) * inv_n * pass;
      }
    }
    if (use_bc) lj -= lambda * gate[j] * bc;
    total += lj;
  }
  if (use_bc) grad += bc_grad;
  out.loss = total * inv_n;
  if (!std::isfinite(out.loss)) throw NumericError("actor loss is non-finite");
  out.grads = backward(policy.net, fwd.tape, grad);
  if (use_bc && track_ungated) out.ungated_bc_grad_norm = ungated_norm(policy.net, states, bc_grad, gate);
  return out;
}

ActorObjective deterministic_actor_objective(const SquashedGaussianPolicy& policy, const CriticPair& q_pi,
                                             const Matrix& states, const Matrix& buffer_actions, const Vector& gate,
                                             double lambda, bool track_ungated) {
  check_inputs(policy, states, buffer_actions, gate);
  const int m = policy.action_dim();
  const Eigen::Index n = states.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  auto fwd = mlp_forward(policy.net, states);
  const Matrix act = fwd.output.topRows(m).array().tanh();
  const CriticReading crit = read_critic(q_pi, states, act);
  const bool use_bc = lambda != 0.0;

  ActorObjective out;
  out.log_probs = Vector::Zero(n);
  Matrix grad = Matrix::Zero(2 * m, n);
  Matrix bc_grad;
  if (use_bc) bc_grad = Matrix::Zero(2 * m, n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    double lj = -crit.q[j];
    for (int i = 0; i < m; ++i) {
      const double a = act(i, j);
      const double dtanh = 1.0 - a * a;
      grad(i, j) = -crit.dq_da(i, j) * dtanh * inv_n;
      if (use_bc) {
        const double diff = a - buffer_actions(i, j);
        lj += lambda * gate[j] * diff * diff;
        bc_grad(i, j) = 2.0 * lambda * gate[j] * diff * dtanh * inv_n;
      }
    }
    total += lj;
  }
  if (use_bc) grad += bc_grad;
  out.loss = total * inv_n;
  if (!std::isfinite(out.loss)) throw NumericError("actor loss is non-finite");
  out.grads = backward(policy.net, fwd.tape, grad);
  if (use_bc && track_ungated) out.ungated_bc_grad_norm = ungated_norm(policy.net, states, bc_grad, gate);
  return out;
}

PolicyUpdate update_policy(SquashedGaussianPolicy& policy, AdamState& opt, const CriticPair& q_pi, const Batch& batch,
                           const Vector& gate, double alpha, double lambda, PolicyVariant variant, Rng& rng,
                           bool track_ungated) {
  if (batch.size() == 0) throw StateError("update_policy needs a nonempty batch");
  ActorObjective obj;
  if (variant == PolicyVariant::stochastic) {
    Matrix noise(policy.action_dim(), batch.size());
    for (Eigen::Index j = 0; j < noise.cols(); ++j)
      for (Eigen::Index i = 0; i < noise.rows(); ++i) noise(i, j) = rng.normal();
    obj = stochastic_actor_objective(policy, q_pi, batch.states, batch.actions, noise, gate, alpha, lambda,
                                     track_ungated);
  } else {
    obj = deterministic_actor_objective(policy, q_pi, batch.states, batch.actions, gate, lambda, track_ungated);
  }
  adam_step(opt, policy.net, obj.grads);
  PolicyUpdate u;
  u.loss = obj.loss;
  u.gate_fraction = gate.size() ? gate.mean() : 0.0;
  u.log_probs = std::move(obj.log_probs);
  u.ungated_bc_grad_norm = obj.ungated_bc_grad_norm;
  return u;
}

}  // namespace obac
