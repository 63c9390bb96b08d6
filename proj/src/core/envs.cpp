#include "obac/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "obac/errors.hpp"
#include "obac/log.hpp"
#include "obac/serialization.hpp"

namespace obac {

void EnvSpec::validate() const {
  if (state_dim <= 0 || action_dim <= 0) throw ConfigError("env '" + name + "': dimensions must be positive");
  if (action_low.size() != action_dim || action_high.size() != action_dim)
    throw DimensionError("env '" + name + "': action bounds do not match action_dim");
  for (int i = 0; i < action_dim; ++i)
    if (!(action_low[i] < action_high[i])) throw ConfigError("env '" + name + "': action_low must be < action_high");
  if (max_episode_steps < 1) throw ConfigError("env '" + name + "': max_episode_steps must be >= 1");
}

Vector Env::reset(std::uint64_t seed) {
  rng_ = Rng(seed);
  steps_ = 0;
  started_ = true;
  done_ = false;
  return do_reset(rng_);
}

StepResult Env::step(const Vector& action) {
  const auto& s = spec();
  if (!started_) throw StateError("env '" + s.name + "': step before reset");
  if (done_) throw StateError("env '" + s.name + "': step after episode end without reset");
  if (action.size() != s.action_dim)
    throw DimensionError("env '" + s.name + "': action has " + std::to_string(action.size()) + " entries, expected " +
                         std::to_string(s.action_dim));
  if (!action.allFinite()) throw NumericError("env '" + s.name + "': non-finite action");
  Vector clamped = action.cwiseMax(s.action_low).cwiseMin(s.action_high);
  if (clamped != action && !warned_clamp_) {
    warned_clamp_ = true;
    log_warning("env '" + s.name + "': out-of-range action clamped to bounds (reported once)");
  }
  StepResult r = do_step(clamped, rng_);
  ++steps_;
  if (!r.terminated && steps_ >= s.max_episode_steps) r.truncated = true;
  done_ = r.terminated || r.truncated;
  return r;
}

void Env::save_state(BinaryWriter& w) const {
  w.str(rng_.state());
  w.u64(static_cast<std::uint64_t>(steps_));
  w.u8(started_);
  w.u8(done_);
  w.u8(warned_clamp_);
  save_dynamics(w);
}

void Env::load_state(BinaryReader& r) {
  rng_.restore(r.str());
  steps_ = static_cast<int>(r.u64());
  started_ = r.u8() != 0;
  done_ = r.u8() != 0;
  warned_clamp_ = r.u8() != 0;
  load_dynamics(r);
}

// ---------------------------------------------------------------- pendulum

namespace {
double angle_normalize(double x) {
  const double two_pi = 2.0 * std::numbers::pi;
  double y = std::fmod(x + std::numbers::pi, two_pi);
  if (y < 0) y += two_pi;
  return y - std::numbers::pi;
}
}  // namespace

PendulumEnv::PendulumEnv() {
  spec_.name = "pendulum";
  spec_.state_dim = 3;
  spec_.action_dim = 1;
  spec_.action_low = Vector::Constant(1, -kMaxTorque);
  spec_.action_high = Vector::Constant(1, kMaxTorque);
  spec_.max_episode_steps = 200;
  spec_.reward_kind = RewardKind::dense;
  spec_.validate();
}

void PendulumEnv::set_physical_state(double theta, double thdot) {
  theta_ = theta;
  thdot_ = thdot;
}

Vector PendulumEnv::observe() const {
  Vector s(3);
  s << std::cos(theta_), std::sin(theta_), thdot_;
  return s;
}

Vector PendulumEnv::do_reset(Rng& rng) {
  theta_ = rng.uniform(-std::numbers::pi, std::numbers::pi);
  thdot_ = rng.uniform(-1.0, 1.0);
  return observe();
}

StepResult PendulumEnv::do_step(const Vector& action, Rng&) {
  const double u = action[0];
  const double th = angle_normalize(theta_);
  const double cost = th * th + 0.1 * thdot_ * thdot_ + 0.001 * u * u;
  const double acc = 3.0 * kGravity / (2.0 * kLength) * std::sin(theta_) + 3.0 / (kMass * kLength * kLength) * u;
  thdot_ = std::clamp(thdot_ + acc * kDt, -kMaxSpeed, kMaxSpeed);
  theta_ = theta_ + thdot_ * kDt;
  return StepResult{observe(), -cost, false, false};
}

void PendulumEnv::save_dynamics(BinaryWriter& w) const {
  w.f64(theta_);
  w.f64(thdot_);
}

void PendulumEnv::load_dynamics(BinaryReader& r) {
  theta_ = r.f64();
  thdot_ = r.f64();
}

// -------------------------------------------------------------- point mass

PointMassEnv::PointMassEnv(RewardKind kind) {
  spec_.name = kind == RewardKind::sparse ? "pointmass-sparse" : "pointmass-dense";
  spec_.state_dim = 4;
  spec_.action_dim = 2;
  spec_.action_low = Vector::Constant(2, -1.0);
  spec_.action_high = Vector::Constant(2, 1.0);
  spec_.max_episode_steps = 100;
  spec_.reward_kind = kind;
  spec_.validate();
}

void PointMassEnv::set_physical_state(double px, double py, double vx, double vy) {
  px_ = px;
  py_ = py;
  vx_ = vx;
  vy_ = vy;
}

Vector PointMassEnv::observe() const {
  Vector s(4);
  s << px_, py_, vx_, vy_;
  return s;
}

Vector PointMassEnv::do_reset(Rng& rng) {
  // Start anywhere in the arena outside twice the goal radius.
  do {
    px_ = rng.uniform(-1.0, 1.0);
    py_ = rng.uniform(-1.0, 1.0);
  } while (std::hypot(px_ - kGoalX, py_ - kGoalY) <= 2.0 * kGoalRadius);
  vx_ = 0.0;
  vy_ = 0.0;
  return observe();
}

StepResult PointMassEnv::do_step(const Vector& action, Rng&) {
  double nx = px_ + kDt * vx_;
  double ny = py_ + kDt * vy_;
  double nvx = std::clamp(vx_ + kDt * kAccelGain * action[0], -kMaxSpeed, kMaxSpeed);
  double nvy = std::clamp(vy_ + kDt * kAccelGain * action[1], -kMaxSpeed, kMaxSpeed);
  if (nx < -1.0 || nx > 1.0) {
    nx = std::clamp(nx, -1.0, 1.0);
    nvx = 0.0;
  }
  if (ny < -1.0 || ny > 1.0) {
    ny = std::clamp(ny, -1.0, 1.0);
    nvy = 0.0;
  }
  px_ = nx;
  py_ = ny;
  vx_ = nvx;
  vy_ = nvy;
  const double dist = std::hypot(px_ - kGoalX, py_ - kGoalY);
  StepResult r{observe(), 0.0, false, false};
  if (spec_.reward_kind == RewardKind::sparse) {
    if (dist <= kGoalRadius) {
      r.reward = 1.0;
      r.terminated = true;
    }
  } else {
    r.reward = -dist;
  }
  return r;
}

void PointMassEnv::save_dynamics(BinaryWriter& w) const {
  w.f64(px_);
  w.f64(py_);
  w.f64(vx_);
  w.f64(vy_);
}

void PointMassEnv::load_dynamics(BinaryReader& r) {
  px_ = r.f64();
  py_ = r.f64();
  vx_ = r.f64();
  vy_ = r.f64();
}

// ----------------------------------------------------------------- tabular

TabularEnv::TabularEnv(std::string name, TabularMdp mdp, int horizon) : mdp_(std::move(mdp)) {
  mdp_.validate();
  spec_.name = std::move(name);
  spec_.state_dim = mdp_.n_states;
  spec_.action_dim = 1;
  spec_.action_low = Vector::Constant(1, -1.0);
  spec_.action_high = Vector::Constant(1, 1.0);
  spec_.max_episode_steps = horizon;
  spec_.reward_kind = RewardKind::dense;
  spec_.validate();
}

int TabularEnv::discretize(double a) const {
  const int n = mdp_.n_actions;
  const int idx = static_cast<int>(std::floor((a + 1.0) * 0.5 * n));
  return std::clamp(idx, 0, n - 1);
}

Vector TabularEnv::one_hot(int s) const {
  Vector v = Vector::Zero(mdp_.n_states);
  v[s] = 1.0;
  return v;
}

namespace {
int sample_categorical(const std::vector<double>& p, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding residue: fall back to the last state with positive mass.
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0) return static_cast<int>(i);
  return 0;
}
}  // namespace

Vector TabularEnv::do_reset(Rng& rng) {
  state_ = sample_categorical(mdp_.initial, rng);
  return one_hot(state_);
}

StepResult TabularEnv::do_step(const Vector& action, Rng& rng) {
  const int a = discretize(action[0]);
  const double r = mdp_.rewards[state_][a];
  state_ = sample_categorical(mdp_.transitions[state_][a], rng);
  return StepResult{one_hot(state_), r, false, false};
}

void TabularEnv::save_dynamics(BinaryWriter& w) const { w.u64(static_cast<std::uint64_t>(state_)); }

void TabularEnv::load_dynamics(BinaryReader& r) {
  state_ = static_cast<int>(r.u64());
  if (state_ < 0 || state_ >= mdp_.n_states) throw FormatError("tabular env state out of range");
}

// ------------------------------------------------------------ noise wrapper

ActionNoiseWrapper::ActionNoiseWrapper(std::unique_ptr<Env> inner, double sigma, std::uint64_t seed)
    : inner_(std::move(inner)), sigma_(sigma), noise_(seed) {
  if (!inner_) throw ConfigError("action noise wrapper needs an environment");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("action noise sigma must be finite and >= 0");
}

Vector ActionNoiseWrapper::reset(std::uint64_t seed) { return inner_->reset(seed); }

StepResult ActionNoiseWrapper::step(const Vector& action) {
  const auto& s = spec();
  if (action.size() != s.action_dim) throw DimensionError("noise wrapper: action dimension mismatch");
  if (sigma_ == 0.0) {
    last_executed_ = action;
    return inner_->step(action);
  }
  Vector executed(action.size());
  for (Eigen::Index i = 0; i < action.size(); ++i) executed[i] = action[i] + sigma_ * noise_.normal();
  executed = executed.cwiseMax(s.action_low).cwiseMin(s.action_high);
  last_executed_ = executed;
  return inner_->step(executed);
}

void ActionNoiseWrapper::save_state(BinaryWriter& w) const {
  w.str(noise_.state());
  inner_->save_state(w);
}

void ActionNoiseWrapper::load_state(BinaryReader& r) {
  noise_.restore(r.str());
  inner_->load_state(r);
}

Vector ActionNoiseWrapper::do_reset(Rng&) { throw StateError("noise wrapper delegates reset"); }
StepResult ActionNoiseWrapper::do_step(const Vector&, Rng&) { throw StateError("noise wrapper delegates step"); }

// ---------------------------------------------------------------- registry

const std::vector<std::string>& env_names() {
  static const std::vector<std::string> names{"pendulum", "pointmass-dense", "pointmass-sparse", "chain-mdp"};
  return names;
}

TabularMdp chain_env_mdp() { return make_chain_mdp(5, 0.9); }

std::unique_ptr<Env> make_env(std::string_view name, std::uint64_t seed) {
  std::unique_ptr<Env> env;
  if (name == "pendulum") {
    env = std::make_unique<PendulumEnv>();
  } else if (name == "pointmass-dense") {
    env = std::make_unique<PointMassEnv>(RewardKind::dense);
  } else if (name == "pointmass-sparse") {
    env = std::make_unique<PointMassEnv>(RewardKind::sparse);
  } else if (name == "chain-mdp") {
    env = std::make_unique<TabularEnv>("chain-mdp", chain_env_mdp(), 50);
  } else {
    std::string valid;
    for (const auto& n : env_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw LookupError("unknown environment '" + std::string(name) + "' (valid: " + valid + ")");
  }
  env->reseed(seed);
  return env;
}

std::unique_ptr<Env> wrap_action_noise(std::unique_ptr<Env> env, double sigma, std::uint64_t seed) {
  return std::make_unique<ActionNoiseWrapper>(std::move(env), sigma, seed);
}

}  // namespace obac
