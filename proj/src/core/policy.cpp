#include "obac/policy.hpp"

#include <cmath>

#include "obac/errors.hpp"

namespace obac {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;

std::vector<int> policy_sizes(int state_dim, int out_dim, const std::vector<int>& hidden) {
  std::vector<int> sizes{state_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out_dim);
  return sizes;
}
}  // namespace

SquashedGaussianPolicy::SquashedGaussianPolicy(int state_dim, int action_dim, Vector action_low, Vector action_high,
                                               const std::vector<int>& hidden, Activation activation, Rng& rng)
    : net(policy_sizes(state_dim, 2 * action_dim, hidden), activation, rng),
      state_dim_(state_dim),
      action_dim_(action_dim),
      low_(std::move(action_low)),
      high_(std::move(action_high)) {
  if (low_.size() != action_dim || high_.size() != action_dim) throw DimensionError("policy bounds mismatch");
}

Matrix SquashedGaussianPolicy::scale(const Matrix& squashed) const {
  const Vector half = 0.5 * (high_ - low_);
  const Vector mid = 0.5 * (high_ + low_);
  Matrix out = squashed.array().colwise() * half.array();
  out.colwise() += mid;
  return out;
}

Matrix SquashedGaussianPolicy::unscale(const Matrix& env_actions) const {
  const Vector half = 0.5 * (high_ - low_);
  const Vector mid = 0.5 * (high_ + low_);
  Matrix out = env_actions.colwise() - mid;
  out = out.array().colwise() / half.array();
  return out.unaryExpr([](double a) { return clamp_squashed_action(a); });
}

SquashedGaussianPolicy::Heads SquashedGaussianPolicy::split(const Matrix& out, int m) {
  Heads h;
  h.mean = out.topRows(m);
  h.log_std = out.bottomRows(m).unaryExpr([](double x) { return clamp_log_std(x); });
  return h;
}

SquashedGaussianPolicy::Heads SquashedGaussianPolicy::heads(const Matrix& states) const {
  return split(mlp_predict(net, states), action_dim_);
}

SquashedGaussianPolicy::Samples squash_samples(const SquashedGaussianPolicy::Heads& h, const Matrix& noise) {
  SquashedGaussianPolicy::Samples s;
  s.noise = noise;
  s.pre = h.mean.array() + h.log_std.array().exp() * noise.array();
  s.squashed = s.pre.array().tanh();
  s.log_prob.resize(h.mean.cols());
  for (Eigen::Index j = 0; j < h.mean.cols(); ++j) {
    double lp = 0.0;
    for (Eigen::Index i = 0; i < h.mean.rows(); ++i) {
      const double e = noise(i, j);
      lp += -0.5 * e * e - h.log_std(i, j) - kHalfLog2Pi - log1m_tanh_sq(s.pre(i, j));
    }
    s.log_prob[j] = lp;
  }
  return s;
}

SquashedGaussianPolicy::Samples SquashedGaussianPolicy::sample(const Matrix& states, Rng& rng,
                                                               bool deterministic) const {
  const Heads h = heads(states);
  Matrix noise = Matrix::Zero(action_dim_, states.cols());
  if (!deterministic)
    for (Eigen::Index j = 0; j < noise.cols(); ++j)
      for (Eigen::Index i = 0; i < noise.rows(); ++i) noise(i, j) = rng.normal();
  auto s = squash_samples(h, noise);
  if (!s.log_prob.allFinite()) throw NumericError("policy produced a non-finite log-probability");
  return s;
}

SquashedGaussianPolicy::Action SquashedGaussianPolicy::sample_action(const Vector& state, Rng& rng,
                                                                     bool deterministic) const {
  if (state.size() != state_dim_) throw DimensionError("policy state dimension mismatch");
  const auto s = sample(Matrix(state), rng, deterministic);
  // tanh saturates to exactly +-1 in double precision for large pre-squash values.
  const Matrix inside = s.squashed.unaryExpr([](double a) { return clamp_squashed_action(a); });
  return Action{scale(inside).col(0), s.log_prob[0]};
}

Vector SquashedGaussianPolicy::log_prob(const Matrix& states, const Matrix& squashed_actions) const {
  const Heads h = heads(states);
  Vector lp(states.cols());
  for (Eigen::Index j = 0; j < states.cols(); ++j) {
    const Vector mean = h.mean.col(j), ls = h.log_std.col(j), a = squashed_actions.col(j);
    lp[j] = squashed_gaussian_logprob({mean.data(), static_cast<std::size_t>(mean.size())},
                                      {ls.data(), static_cast<std::size_t>(ls.size())},
                                      {a.data(), static_cast<std::size_t>(a.size())});
  }
  return lp;
}

}  // namespace obac
