#pragma once

#include <vector>

#include "obac/replay.hpp"

namespace obac::testing {

inline Batch make_batch(const Matrix& states, const Matrix& actions, const Vector& rewards, const Matrix& next_states,
                        const Vector& terminated) {
  Batch b;
  b.states = states;
  b.actions = actions;
  b.rewards = rewards;
  b.next_states = next_states;
  b.terminated = terminated;
  b.indices.resize(static_cast<std::size_t>(rewards.size()));
  for (std::size_t i = 0; i < b.indices.size(); ++i) b.indices[i] = i;
  return b;
}

inline Matrix one_hot_columns(int n, const std::vector<int>& ids) {
  Matrix m = Matrix::Zero(n, static_cast<Eigen::Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) m(ids[j], static_cast<Eigen::Index>(j)) = 1.0;
  return m;
}

/// Sets a single-layer network to out = bias.
inline void make_constant(MlpParams& p, double value) {
  for (auto& l : p.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  p.layers.back().bias.setConstant(value);
}

}  // namespace obac::testing
