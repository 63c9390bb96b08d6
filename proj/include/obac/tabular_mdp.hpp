#pragma once

#include <string>
#include <vector>

namespace obac {

/// Finite MDP <S, A, P, R, gamma, d0>.
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<std::vector<std::vector<double>>> transitions;  // [s][a][s']
  std::vector<std::vector<double>> rewards;                   // [s][a]
  double gamma = 0.9;
  std::vector<double> initial;  // d0 over states

  /// Throws ConfigError on malformed tensors; DimensionError on shape errors.
  void validate() const;
};

/// Deterministic chain: action 0 moves left (reward `stay_reward` when already
/// at state 0), action 1 moves right (reward 1 when taken at the last state).
/// d0 is a point mass on state 0.
TabularMdp make_chain_mdp(int n_states, double gamma, double stay_reward = 0.1);

}  // namespace obac
