#include "obac/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "obac/errors.hpp"
#include "obac/serialization.hpp"

namespace obac {

namespace {

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw DimensionError("an MLP needs at least input and output sizes");
  for (int s : sizes)
    if (s <= 0) throw DimensionError("layer sizes must be positive");
}

void apply_activation(Activation act, Matrix& z) {
  switch (act) {
    case Activation::elu:
      // max(x, 0) + exp(min(x, 0)) - 1, vectorised
      z = (z.array().max(0.0) + (z.array().min(0.0).exp() - 1.0)).matrix();
      break;
    case Activation::relu:
      z = z.cwiseMax(0.0);
      break;
    case Activation::tanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::identity:
      break;
  }
}

// Multiplies `grad` in place by the activation derivative at `pre`.
void apply_activation_grad(Activation act, const Matrix& pre, Matrix& grad) {
  switch (act) {
    case Activation::elu:
      grad = (grad.array() * pre.array().min(0.0).exp()).matrix();
      break;
    case Activation::relu:
      grad = (pre.array() > 0.0).select(grad, 0.0);
      break;
    case Activation::tanh:
      grad = grad.cwiseProduct(pre.unaryExpr([](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      }));
      break;
    case Activation::identity:
      break;
  }
}

// Flat Adam recurrence shared by network and scalar parameters.
void adam_update(double* param, const double* grad, double* m, double* v, std::size_t n, long t,
                 const AdamConfig& c) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  const auto len = static_cast<Eigen::Index>(n);
  Eigen::Map<Eigen::ArrayXd> p(param, len), mm(m, len), vv(v, len);
  const Eigen::Map<const Eigen::ArrayXd> g(grad, len);
  mm = c.beta1 * mm + (1.0 - c.beta1) * g;
  vv = c.beta2 * vv + (1.0 - c.beta2) * g.square();
  p -= c.lr * (mm / bc1) / ((vv / bc2).sqrt() + c.eps);
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "elu") return Activation::elu;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected elu, relu, tanh, identity)");
}

const char* to_string(Activation a) noexcept {
  switch (a) {
    case Activation::elu: return "elu";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

MlpParams::MlpParams(std::vector<int> layer_sizes, Activation activation, Rng& rng)
    : sizes_(std::move(layer_sizes)), activation_(activation) {
  check_sizes(sizes_);
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    const int in = sizes_[i], out = sizes_[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer{Matrix(out, in), Vector(out)};
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = rng.uniform(-bound, bound);
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = rng.uniform(-bound, bound);
    layers.push_back(std::move(layer));
  }
}

MlpParams MlpParams::zeros(std::vector<int> layer_sizes, Activation activation) {
  check_sizes(layer_sizes);
  MlpParams p;
  p.sizes_ = std::move(layer_sizes);
  p.activation_ = activation;
  for (std::size_t i = 0; i + 1 < p.sizes_.size(); ++i)
    p.layers.push_back({Matrix::Zero(p.sizes_[i + 1], p.sizes_[i]), Vector::Zero(p.sizes_[i + 1])});
  return p;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool MlpParams::all_finite() const {
  return std::all_of(layers.begin(), layers.end(),
                     [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

bool MlpParams::same_architecture(const MlpParams& other) const {
  return sizes_ == other.sizes_ && activation_ == other.activation_;
}

bool operator==(const MlpParams& a, const MlpParams& b) {
  if (!a.same_architecture(b)) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i)
    if (a.layers[i].weight != b.layers[i].weight || a.layers[i].bias != b.layers[i].bias) return false;
  return true;
}

void MlpParams::serialize(BinaryWriter& w) const {
  w.u32(static_cast<std::uint32_t>(activation_));
  w.u32(static_cast<std::uint32_t>(sizes_.size()));
  for (int s : sizes_) w.u32(static_cast<std::uint32_t>(s));
  for (const auto& l : layers) {
    w.matrix(l.weight);
    w.vector(l.bias);
  }
}

MlpParams MlpParams::deserialize(BinaryReader& r) {
  const auto act = r.u32();
  if (act > static_cast<std::uint32_t>(Activation::identity)) throw FormatError("bad activation tag");
  const auto n = r.u32();
  if (n < 2 || n > 64) throw FormatError("bad layer count");
  std::vector<int> sizes(n);
  for (auto& s : sizes) s = static_cast<int>(r.u32());
  MlpParams p;
  p.sizes_ = sizes;
  p.activation_ = static_cast<Activation>(act);
  for (std::uint32_t i = 0; i + 1 < n; ++i) {
    DenseLayer l{r.matrix(), r.vector()};
    if (l.weight.rows() != sizes[i + 1] || l.weight.cols() != sizes[i] || l.bias.size() != sizes[i + 1])
      throw FormatError("layer shape does not match declared sizes");
    p.layers.push_back(std::move(l));
  }
  return p;
}

MlpGradients MlpGradients::zeros_like(const MlpParams& params) {
  MlpGradients g;
  for (const auto& l : params.layers)
    g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  return g;
}

double MlpGradients::squared_norm() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
  return s;
}

bool MlpGradients::all_finite() const {
  return std::all_of(layers.begin(), layers.end(),
                     [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
  if (layers.size() != other.layers.size()) throw DimensionError("gradient layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
  }
  if (input.size() == other.input.size() && input.size() > 0) input += other.input;
  return *this;
}

ForwardResult mlp_forward(const MlpParams& params, const Matrix& input) {
  if (input.rows() != params.input_dim())
    throw DimensionError("mlp input has " + std::to_string(input.rows()) + " features, expected " +
                         std::to_string(params.input_dim()));
  ForwardResult res;
  auto& tape = res.tape;
  Matrix x = input;
  const std::size_t n = params.layers.size();
  tape.inputs_.reserve(n);
  tape.pre_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = params.layers[i];
    Matrix z = l.weight * x;
    z.colwise() += l.bias;
    tape.inputs_.push_back(std::move(x));
    tape.pre_.push_back(z);
    if (i + 1 < n) apply_activation(params.activation(), z);
    x = std::move(z);
  }
  res.output = std::move(x);
  return res;
}

Vector mlp_forward(const MlpParams& params, const Vector& input, GradTape* tape_out) {
  auto res = mlp_forward(params, Matrix(input));
  if (tape_out) *tape_out = std::move(res.tape);
  return res.output.col(0);
}

Matrix mlp_predict(const MlpParams& params, const Matrix& input) {
  if (input.rows() != params.input_dim())
    throw DimensionError("mlp input has " + std::to_string(input.rows()) + " features, expected " +
                         std::to_string(params.input_dim()));
  Matrix x = input;
  const std::size_t n = params.layers.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = params.layers[i];
    Matrix z = l.weight * x;
    z.colwise() += l.bias;
    if (i + 1 < n) apply_activation(params.activation(), z);
    x = std::move(z);
  }
  return x;
}

MlpGradients backward(const MlpParams& params, GradTape& tape, const Matrix& output_grad, bool parameter_grads) {
  if (tape.consumed_) throw StateError("gradient tape already consumed by a previous backward pass");
  if (tape.inputs_.empty()) throw StateError("gradient tape holds no forward pass");
  if (tape.inputs_.size() != params.layers.size()) throw DimensionError("tape does not match network depth");
  if (output_grad.rows() != params.output_dim() || output_grad.cols() != tape.batch_size())
    throw DimensionError("output gradient shape does not match forward output");
  tape.consumed_ = true;

  const std::size_t n = params.layers.size();
  MlpGradients g;
  if (parameter_grads) g.layers.resize(n);
  Matrix delta = output_grad;
  for (std::size_t k = n; k-- > 0;) {
    if (k + 1 < n) apply_activation_grad(params.activation(), tape.pre_[k], delta);
    if (parameter_grads) {
      g.layers[k].weight = delta * tape.inputs_[k].transpose();
      g.layers[k].bias = delta.rowwise().sum();
    }
    delta = params.layers[k].weight.transpose() * delta;
  }
  g.input = std::move(delta);
  return g;
}

AdamState::AdamState(const MlpParams& like, AdamConfig config)
    : config_(config), m_(MlpGradients::zeros_like(like)), v_(MlpGradients::zeros_like(like)) {}

void adam_step(AdamState& state, MlpParams& params, const MlpGradients& grads) {
  if (grads.layers.size() != params.layers.size() || state.m_.layers.size() != params.layers.size())
    throw DimensionError("adam: gradient/parameter layer count mismatch");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    if (grads.layers[i].weight.rows() != params.layers[i].weight.rows() ||
        grads.layers[i].weight.cols() != params.layers[i].weight.cols() ||
        grads.layers[i].bias.size() != params.layers[i].bias.size())
      throw DimensionError("adam: gradient shape mismatch at layer " + std::to_string(i));
  }
  if (!grads.all_finite()) throw NumericError("adam: non-finite gradient entries, step rejected");
  ++state.t_;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& p = params.layers[i];
    const auto& g = grads.layers[i];
    auto& m = state.m_.layers[i];
    auto& v = state.v_.layers[i];
    adam_update(p.weight.data(), g.weight.data(), m.weight.data(), v.weight.data(),
                static_cast<std::size_t>(p.weight.size()), state.t_, state.config_);
    adam_update(p.bias.data(), g.bias.data(), m.bias.data(), v.bias.data(), static_cast<std::size_t>(p.bias.size()),
                state.t_, state.config_);
  }
}

void AdamState::serialize(BinaryWriter& w) const {
  w.f64(config_.lr);
  w.f64(config_.beta1);
  w.f64(config_.beta2);
  w.f64(config_.eps);
  w.u64(static_cast<std::uint64_t>(t_));
  w.u32(static_cast<std::uint32_t>(m_.layers.size()));
  for (std::size_t i = 0; i < m_.layers.size(); ++i) {
    w.matrix(m_.layers[i].weight);
    w.vector(m_.layers[i].bias);
    w.matrix(v_.layers[i].weight);
    w.vector(v_.layers[i].bias);
  }
}

AdamState AdamState::deserialize(BinaryReader& r) {
  AdamState s;
  s.config_.lr = r.f64();
  s.config_.beta1 = r.f64();
  s.config_.beta2 = r.f64();
  s.config_.eps = r.f64();
  s.t_ = static_cast<long>(r.u64());
  const auto n = r.u32();
  if (n > 64) throw FormatError("bad adam layer count");
  s.m_.layers.resize(n);
  s.v_.layers.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    s.m_.layers[i].weight = r.matrix();
    s.m_.layers[i].bias = r.vector();
    s.v_.layers[i].weight = r.matrix();
    s.v_.layers[i].bias = r.vector();
  }
  return s;
}

bool operator==(const AdamState& a, const AdamState& b) {
  if (a.t_ != b.t_ || a.m_.layers.size() != b.m_.layers.size()) return false;
  for (std::size_t i = 0; i < a.m_.layers.size(); ++i) {
    if (a.m_.layers[i].weight != b.m_.layers[i].weight || a.m_.layers[i].bias != b.m_.layers[i].bias) return false;
    if (a.v_.layers[i].weight != b.v_.layers[i].weight || a.v_.layers[i].bias != b.v_.layers[i].bias) return false;
  }
  return true;
}

double ScalarAdam::step(double param, double grad) {
  if (!std::isfinite(grad)) throw NumericError("adam: non-finite scalar gradient, step rejected");
  ++t;
  adam_update(&param, &grad, &m, &v, 1, t, config);
  return param;
}

double clamp_log_std(double raw) { return std::clamp(raw, kLogStdMin, kLogStdMax); }

double clamp_squashed_action(double a) { return std::clamp(a, -kActionClamp, kActionClamp); }

double log1m_tanh_sq(double u) {
  // 1 - tanh(u)^2 = 4 / (e^u + e^-u)^2  =>  log = 2 (log 2 - |u| - log1p(e^{-2|u|}))
  const double au = std::abs(u);
  return 2.0 * (std::numbers::ln2 - au - std::log1p(std::exp(-2.0 * au)));
}

double squashed_gaussian_logprob(std::span<const double> mean, std::span<const double> log_std,
                                 std::span<const double> action) {
  if (mean.size() != log_std.size() || mean.size() != action.size())
    throw DimensionError("squashed_gaussian_logprob: mismatched dimensions");
  constexpr double half_log_2pi = 0.91893853320467274178;
  double lp = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (std::isnan(mean[i]) || std::isnan(log_std[i]) || std::isnan(action[i]))
      throw NumericError("squashed_gaussian_logprob: NaN input");
    const double ls = clamp_log_std(log_std[i]);
    const double a = clamp_squashed_action(action[i]);
    const double u = std::atanh(a);
    const double z = (u - mean[i]) * std::exp(-ls);
    lp += -0.5 * z * z - ls - half_log_2pi - std::log1p(-a * a);
  }
  return lp;
}

ExpectileFactor::ExpectileFactor(double tau) : tau_(tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("expectile factor tau must lie in (0, 1), got " + std::to_string(tau));
}

double expectile_loss(double residual, ExpectileFactor tau) {
  const double w = residual < 0.0 ? 1.0 - tau.value() : tau.value();
  return w * residual * residual;
}

double expectile_loss_grad(double residual, ExpectileFactor tau) {
  const double w = residual < 0.0 ? 1.0 - tau.value() : tau.value();
  return 2.0 * w * residual;
}

void polyak_update(MlpParams& target, const MlpParams& online, double rate) {
  if (!target.same_architecture(online)) throw DimensionError("polyak_update: architecture mismatch");
  if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("polyak rate must lie in (0, 1]");
  for (std::size_t i = 0; i < target.layers.size(); ++i) {
    if (rate == 1.0) {
      target.layers[i] = online.layers[i];
      continue;
    }
    target.layers[i].weight = rate * online.layers[i].weight + (1.0 - rate) * target.layers[i].weight;
    target.layers[i].bias = rate * online.layers[i].bias + (1.0 - rate) * target.layers[i].bias;
  }
}

}  // namespace obac
