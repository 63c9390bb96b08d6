#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "obac/rng.hpp"

namespace obac {

class BinaryWriter;
class BinaryReader;

// Batched values are stored feature-major: one column per sample.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { elu, relu, tanh, identity };

Activation parse_activation(std::string_view name);
const char* to_string(Activation a) noexcept;

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Dense feed-forward network. The activation applies to hidden layers only;
/// the output layer is affine.
class MlpParams {
 public:
  MlpParams() = default;
  /// Uniform(+-1/sqrt(fan_in)) initialisation for weights and biases.
  MlpParams(std::vector<int> layer_sizes, Activation activation, Rng& rng);
  static MlpParams zeros(std::vector<int> layer_sizes, Activation activation);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::size_t parameter_count() const;
  bool all_finite() const;
  bool same_architecture(const MlpParams& other) const;

  std::vector<DenseLayer> layers;

  void serialize(BinaryWriter& w) const;
  static MlpParams deserialize(BinaryReader& r);

  friend bool operator==(const MlpParams& a, const MlpParams& b);

 private:
  std::vector<int> sizes_;
  Activation activation_ = Activation::identity;
};

/// Gradients of a scalar objective, aligned layer-by-layer with MlpParams,
/// plus the gradient with respect to the network input.
struct MlpGradients {
  std::vector<DenseLayer> layers;
  Matrix input;

  static MlpGradients zeros_like(const MlpParams& params);
  double squared_norm() const;
  bool all_finite() const;
  MlpGradients& operator+=(const MlpGradients& other);
};

struct ForwardResult;

/// Record of one forward pass. A tape can be consumed by exactly one backward.
class GradTape {
 public:
  bool consumed() const { return consumed_; }
  int batch_size() const { return inputs_.empty() ? 0 : static_cast<int>(inputs_.front().cols()); }

 private:
  friend ForwardResult mlp_forward(const MlpParams&, const Matrix&);
  friend MlpGradients backward(const MlpParams&, GradTape&, const Matrix&, bool);
  std::vector<Matrix> inputs_;  // input to each layer
  std::vector<Matrix> pre_;     // pre-activation of each layer
  bool consumed_ = false;
};

struct ForwardResult {
  Matrix output;
  GradTape tape;
};

ForwardResult mlp_forward(const MlpParams& params, const Matrix& input);
Vector mlp_forward(const MlpParams& params, const Vector& input, GradTape* tape_out);
/// Forward pass without recording.
Matrix mlp_predict(const MlpParams& params, const Matrix& input);

/// Jacobian-transpose product of the recorded pass with `output_grad`.
/// With `parameter_grads` false only the input gradient is produced.
MlpGradients backward(const MlpParams& params, GradTape& tape, const Matrix& output_grad,
                      bool parameter_grads = true);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(const MlpParams& like, AdamConfig config);

  const AdamConfig& config() const { return config_; }
  long step_count() const { return t_; }
  const MlpGradients& first_moment() const { return m_; }
  const MlpGradients& second_moment() const { return v_; }

  void serialize(BinaryWriter& w) const;
  static AdamState deserialize(BinaryReader& r);
  friend bool operator==(const AdamState& a, const AdamState& b);

 private:
  friend void adam_step(AdamState&, MlpParams&, const MlpGradients&);
  AdamConfig config_;
  MlpGradients m_, v_;
  long t_ = 0;
};

/// Bias-corrected Adam update. Non-finite gradients raise NumericError and
/// leave both params and state untouched.
void adam_step(AdamState& state, MlpParams& params, const MlpGradients& grads);

/// Adam for a single scalar parameter (the entropy temperature).
struct ScalarAdam {
  AdamConfig config;
  double m = 0.0;
  double v = 0.0;
  long t = 0;
  double step(double param, double grad);
  friend bool operator==(const ScalarAdam&, const ScalarAdam&) = default;
};

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kActionClamp = 1.0 - 1e-6;

double clamp_log_std(double raw);
double clamp_squashed_action(double a);
/// log(1 - tanh(u)^2) evaluated without cancellation.
double log1m_tanh_sq(double u);

/// Log density of a tanh-squashed diagonal Gaussian at `action` in (-1,1)^m.
double squashed_gaussian_logprob(std::span<const double> mean, std::span<const double> log_std,
                                 std::span<const double> action);

class ExpectileFactor {
 public:
  explicit ExpectileFactor(double tau = 0.9);
  double value() const { return tau_; }

 private:
  double tau_;
};

/// L2^tau(x) = |tau - 1(x < 0)| x^2
double expectile_loss(double residual, ExpectileFactor tau);
double expectile_loss_grad(double residual, ExpectileFactor tau);

/// target <- rate * online + (1 - rate) * target
void polyak_update(MlpParams& target, const MlpParams& online, double rate);

}  // namespace obac
