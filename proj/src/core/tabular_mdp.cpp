#include "obac/tabular_mdp.hpp"

#include <cmath>

#include "obac/errors.hpp"

namespace obac {

void TabularMdp::validate() const {
  if (n_states <= 0 || n_actions <= 0) throw ConfigError("tabular MDP needs positive state and action counts");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("tabular MDP discount must lie in [0, 1)");
  if (static_cast<int>(transitions.size()) != n_states || static_cast<int>(rewards.size()) != n_states ||
      static_cast<int>(initial.size()) != n_states)
    throw DimensionError("tabular MDP tensors do not match n_states");
  for (int s = 0; s < n_states; ++s) {
    if (static_cast<int>(transitions[s].size()) != n_actions || static_cast<int>(rewards[s].size()) != n_actions)
      throw DimensionError("tabular MDP row " + std::to_string(s) + " does not match n_actions");
    for (int a = 0; a < n_actions; ++a) {
      const auto& row = transitions[s][a];
      if (static_cast<int>(row.size()) != n_states) throw DimensionError("transition row has wrong length");
      double sum = 0.0;
      for (double p : row) {
        if (!(p >= 0.0)) throw ConfigError("negative transition probability at state " + std::to_string(s));
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12)
        throw ConfigError("P[" + std::to_string(s) + "][" + std::to_string(a) + "] does not sum to 1");
      if (!std::isfinite(rewards[s][a])) throw ConfigError("non-finite reward");
    }
  }
  double sum = 0.0;
  for (double p : initial) {
    if (!(p >= 0.0)) throw ConfigError("negative initial probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("initial distribution does not sum to 1");
}

TabularMdp make_chain_mdp(int n_states, double gamma, double stay_reward) {
  if (n_states < 2) throw ConfigError("chain MDP needs at least 2 states");
  TabularMdp m;
  m.n_states = n_states;
  m.n_actions = 2;
  m.gamma = gamma;
  m.transitions.assign(n_states, std::vector<std::vector<double>>(2, std::vector<double>(n_states, 0.0)));
  m.rewards.assign(n_states, std::vector<double>(2, 0.0));
  m.initial.assign(n_states, 0.0);
  m.initial[0] = 1.0;
  for (int s = 0; s < n_states; ++s) {
    m.transitions[s][0][s > 0 ? s - 1 : 0] = 1.0;
    m.transitions[s][1][s + 1 < n_states ? s + 1 : s] = 1.0;
  }
  m.rewards[0][0] = stay_reward;
  m.rewards[n_states - 1][1] = 1.0;
  m.validate();
  return m;
}

}  // namespace obac
