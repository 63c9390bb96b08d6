#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "obac/numerics.hpp"
#include "obac/rng.hpp"

namespace obac::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  long checked = 0;
  long skipped = 0;
};

/// Central differences over every parameter of `params`; `loss` re-evaluates
/// the objective from the (temporarily perturbed) parameters.
inline GradCheck check_gradients(MlpParams& params, const MlpGradients& analytic, const std::function<double()>& loss,
                                 double h = 1e-5, double threshold = 1e-6) {
  GradCheck out;
  auto visit = [&](double& x, double g) {
    const double saved = x;
    x = saved + h;
    const double up = loss();
    x = saved - h;
    const double down = loss();
    x = saved;
    const double fd = (up - down) / (2.0 * h);
    const double scale = std::max(std::abs(g), std::abs(fd));
    if (scale <= threshold) {
      ++out.skipped;
      return;
    }
    ++out.checked;
    out.max_rel_error = std::max(out.max_rel_error, std::abs(g - fd) / scale);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    const auto& g = analytic.layers[l];
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) visit(layer.weight(i), g.weight(i));
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) visit(layer.bias(i), g.bias(i));
  }
  return out;
}

inline GradCheck merge(GradCheck a, const GradCheck& b) {
  a.max_rel_error = std::max(a.max_rel_error, b.max_rel_error);
  a.checked += b.checked;
  a.skipped += b.skipped;
  return a;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = scale * rng.normal();
  return m;
}

inline Vector random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

}  // namespace obac::testing
