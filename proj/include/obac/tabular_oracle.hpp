#pragma once

#include <optional>
#include <string>
#include <vector>

#include "obac/numerics.hpp"
#include "obac/rng.hpp"
#include "obac/tabular_mdp.hpp"

namespace obac {

/// Per-(s, a) visitation counts of a replay buffer over a finite MDP.
class TabularDataset {
 public:
  TabularDataset() = default;
  TabularDataset(int n_states, int n_actions);
  static TabularDataset full(int n_states, int n_actions);

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  void add(int s, int a, long count = 1);
  long count(int s, int a) const;
  bool contains(int s, int a) const { return count(s, a) > 0; }
  bool covered(int s) const;
  std::vector<int> support(int s) const;
  std::vector<int> uncovered_states() const;
  long visits(int s) const;
  /// Empirical action frequency at s (0 when s is uncovered).
  double frequency(int s, int a) const;
  /// Adds every pair of `other` (same shape).
  void merge(const TabularDataset& other);
  bool subset_of(const TabularDataset& other) const;

  friend bool operator==(const TabularDataset&, const TabularDataset&) = default;

 private:
  int n_states_ = 0;
  int n_actions_ = 0;
  std::vector<long> counts_;
};

/// Row-stochastic S x A matrix.
struct TabularPolicy {
  Matrix probs;

  static TabularPolicy uniform(int n_states, int n_actions);
  static TabularPolicy deterministic(int n_actions, const std::vector<int>& actions);
  int n_states() const { return static_cast<int>(probs.rows()); }
  int n_actions() const { return static_cast<int>(probs.cols()); }
  /// Rows sum to 1 within 1e-12 and entries are non-negative.
  void validate() const;
  /// Action of a deterministic row; -1 when the row is not one-hot.
  int deterministic_action(int s) const;
};

struct PolicyValues {
  Matrix q;  // S x A
  Vector v;  // S
};

/// Q^pi and V^pi by a direct linear solve, refined until the Bellman residual
/// is below 1e-10.
PolicyValues exact_policy_evaluation(const TabularMdp& mdp, const TabularPolicy& pi);
/// (T^pi Q)(s, a) = R(s, a) + gamma sum_s' P(s'|s, a) sum_a' pi(a'|s') Q(s', a')
Matrix bellman_operator(const TabularMdp& mdp, const TabularPolicy& pi, const Matrix& q);
/// Optimal Q by value iteration until successive iterates differ by < tol.
Matrix value_iteration(const TabularMdp& mdp, double tol = 1e-12, long max_iterations = 10'000'000);
/// Lowest-index argmax per row, optionally restricted to dataset support.
std::vector<int> greedy_actions(const Matrix& q, const TabularDataset* restrict_to = nullptr);
/// Discounted state occupancy (1 - gamma) d0^T (I - gamma P_pi)^-1.
Vector discounted_occupancy(const TabularMdp& mdp, const TabularPolicy& pi);

struct OfflineOptimal {
  TabularPolicy policy;
  PolicyValues values;
  /// Uncovered states (unreachable under the dataset) carry a placeholder
  /// action and are never gated.
  std::vector<bool> covered;
};

/// Best deterministic policy whose actions lie in the dataset, by policy
/// iteration restricted to dataset actions. Ties go to the lowest action
/// index. Throws CoverageError when an uncovered state is reachable from d0
/// through dataset actions.
OfflineOptimal offline_optimal_policy(const TabularMdp& mdp, const TabularDataset& dataset);

/// Gated states: pi'(a|s) = mu(a|s) exp(beta Q(s,a)) / Z(s) over supp(mu).
/// Ungated states: greedy argmax of Q (lowest index), or a softmax with
/// inverse temperature `ungated_softmax_beta` when it is positive.
TabularPolicy closed_form_improvement(const TabularPolicy& mu, const Matrix& q, double beta,
                                      const std::vector<bool>& gate, double ungated_softmax_beta = 0.0);

enum class TabularGate { adaptive, forced_on, forced_off };

struct BoostedIterationOptions {
  int iterations = 10;
  double beta = 1.0;
  TabularGate gate = TabularGate::adaptive;
  /// After each improvement, add the pairs visited by the new policy
  /// (positive occupancy from d0 and positive probability).
  bool grow_dataset = true;
  double ungated_softmax_beta = 0.0;
  /// Starting policy; uniform when absent.
  std::optional<TabularPolicy> initial_policy;
};

struct BoostedIteration {
  TabularPolicy pi;           // pi_k
  PolicyValues values;        // Q^{pi_k}, V^{pi_k}
  OfflineOptimal mu;          // mu*_k on dataset D_k
  std::vector<bool> gate;     // V^{mu*_k} >= V^{pi_k}
  TabularDataset dataset;     // D_k
  TabularPolicy next;         // pi_{k+1}
};

std::vector<BoostedIteration> offline_boosted_policy_iteration(const TabularMdp& mdp, const TabularDataset& initial,
                                                               const BoostedIterationOptions& options);

/// Unique m with tau sum_{x>m}(x - m) = (1 - tau) sum_{x<m}(m - x), by bisection
/// to 1e-10. Optional weights multiply each element.
double expectile_of_set(const std::vector<double>& values, double tau, const std::vector<double>& weights = {});

/// Numerical solution of max_pi E_pi[Q] s.t. KL(pi || mu) <= epsilon, sum pi = 1
/// by damped Newton on the KKT conditions, written independently of the
/// closed form. `mu` must have full support.
struct KktSolution {
  Vector pi;
  double multiplier = 0.0;  // on the divergence constraint
  double residual = 0.0;
  int iterations = 0;
};
KktSolution solve_constrained_improvement(const Vector& mu, const Vector& q, double epsilon);

double kl_divergence(const Vector& p, const Vector& q);
double total_variation(const Vector& p, const Vector& q);

/// Random MDP with dense transitions (cubed uniforms, renormalised), N(0,1)
/// rewards and d0 a point mass on state 0.
TabularMdp random_mdp(Rng& rng, int n_states, int n_actions, double gamma);

/// One logged transition of a tabular agent.
struct TabularTransition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int next = 0;
  bool terminated = false;
};

/// Sample-based analogue of the offline value pair: Q(s,a) is the mean logged
/// r + gamma V(s'), V(s) the tau-expectile of Q over the logged actions at s.
/// Iterated to a fixed point. States without data are NaN.
struct ExpectileFit {
  Matrix q;
  Vector v;
  int iterations = 0;
};
ExpectileFit fit_expectile_values(int n_states, int n_actions, double gamma,
                                  const std::vector<TabularTransition>& log, double tau, double tol = 1e-12);

struct MotivatingCheckpoint {
  long step = 0;
  std::vector<int> probes;    // probe states with data
  std::vector<int> skipped;   // probe states without data
  Vector v_pi;                // exact V of the online policy
  Vector v_mu_exact;          // exact V^{mu*} on the current dataset
  Vector v_mu_fit;            // expectile estimate
  Vector v_star;              // unrestricted optimum
  bool full_coverage = false;
  bool offline_dominates = false;  // v_mu_exact > v_pi at every probe
};

/// Exact and fitted values at one checkpoint of a concurrent offline learner
/// that only reads `log`.
MotivatingCheckpoint motivating_checkpoint(const TabularMdp& mdp, const TabularPolicy& online,
                                           const std::vector<TabularTransition>& log, double tau, long step);

/// Result line of the tabular property suite.
struct PropertyResult {
  std::string name;
  bool passed = false;
  int instances = 0;
  double worst = 0.0;  // property-specific margin
  std::string detail;
  /// Reported for information; does not affect the suite verdict.
  bool informational = false;
};

struct TabularSuiteOptions {
  std::uint64_t seed = 0;
  int contraction_instances = 100;
  int monotonicity_instances = 50;
  int convergence_instances = 50;
  int closed_form_instances = 20;
  int iterations = 15;
};

std::vector<PropertyResult> run_tabular_suite(const TabularSuiteOptions& options);

/// Fixture files: JSON objects with n_states, n_actions, gamma, initial,
/// transitions [s][a][s'], rewards [s][a] and optional dataset [[s, a, count], ...].
struct TabularFixture {
  TabularMdp mdp;
  std::optional<TabularDataset> dataset;
};
TabularFixture load_tabular_fixture(const std::string& path);
TabularFixture parse_tabular_fixture(const std::string& text);
std::string dump_tabular_fixture(const TabularFixture& fixture);

}  // namespace obac
