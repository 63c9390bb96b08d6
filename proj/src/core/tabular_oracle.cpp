#include "obac/tabular_oracle.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "obac/errors.hpp"

namespace obac {

namespace {

void check_policy_shape(const TabularMdp& mdp, const TabularPolicy& pi) {
  if (pi.n_states() != mdp.n_states || pi.n_actions() != mdp.n_actions)
    throw DimensionError("policy shape " + std::to_string(pi.n_states()) + "x" + std::to_string(pi.n_actions()) +
                         " does not match MDP " + std::to_string(mdp.n_states) + "x" +
                         std::to_string(mdp.n_actions));
}

// P_pi(s, s') and r_pi(s).
void policy_kernel(const TabularMdp& mdp, const TabularPolicy& pi, Matrix& p_pi, Vector& r_pi) {
  const int n = mdp.n_states;
  p_pi = Matrix::Zero(n, n);
  r_pi = Vector::Zero(n);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double w = pi.probs(s, a);
      if (w == 0.0) continue;
      r_pi[s] += w * mdp.rewards[s][a];
      for (int t = 0; t < n; ++t) p_pi(s, t) += w * mdp.transitions[s][a][t];
    }
}

// Q(s, a) = R(s, a) + gamma sum_s' P(s'|s, a) v(s')
Matrix backup(const TabularMdp& mdp, const Vector& v) {
  Matrix q(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      double acc = 0.0;
      const auto& row = mdp.transitions[s][a];
      for (int t = 0; t < mdp.n_states; ++t) acc += row[t] * v[t];
      q(s, a) = mdp.rewards[s][a] + mdp.gamma * acc;
    }
  return q;
}

// States reachable from supp(d0) using actions allowed by `allowed(s, a)`.
template <class Allowed>
std::vector<bool> reachable(const TabularMdp& mdp, Allowed allowed, bool stop_at_blocked = false) {
  std::vector<bool> seen(mdp.n_states, false);
  std::deque<int> frontier;
  for (int s = 0; s < mdp.n_states; ++s)
    if (mdp.initial[s] > 0.0) {
      seen[s] = true;
      frontier.push_back(s);
    }
  while (!frontier.empty()) {
    const int s = frontier.front();
    frontier.pop_front();
    if (stop_at_blocked) {
      bool any = false;
      for (int a = 0; a < mdp.n_actions; ++a) any = any || allowed(s, a);
      if (!any) continue;
    }
    for (int a = 0; a < mdp.n_actions; ++a) {
      if (!allowed(s, a)) continue;
      for (int t = 0; t < mdp.n_states; ++t)
        if (mdp.transitions[s][a][t] > 0.0 && !seen[t]) {
          seen[t] = true;
          frontier.push_back(t);
        }
    }
  }
  return seen;
}

double tie_tolerance(double best) { return 1e-12 * (1.0 + std::abs(best)); }

}  // namespace

// ---------------------------------------------------------------------------
// TabularDataset

TabularDataset::TabularDataset(int n_states, int n_actions)
    : n_states_(n_states), n_actions_(n_actions), counts_(static_cast<std::size_t>(n_states) * n_actions, 0) {
  if (n_states <= 0 || n_actions <= 0) throw ConfigError("dataset needs positive state and action counts");
}

TabularDataset TabularDataset::full(int n_states, int n_actions) {
  TabularDataset d(n_states, n_actions);
  std::fill(d.counts_.begin(), d.counts_.end(), 1);
  return d;
}

void TabularDataset::add(int s, int a, long count) {
  if (s < 0 || s >= n_states_ || a < 0 || a >= n_actions_)
    throw DimensionError("dataset pair (" + std::to_string(s) + ", " + std::to_string(a) + ") out of range");
  if (count < 0) throw ConfigError("dataset counts must be non-negative");
  counts_[static_cast<std::size_t>(s) * n_actions_ + a] += count;
}

long TabularDataset::count(int s, int a) const {
  if (s < 0 || s >= n_states_ || a < 0 || a >= n_actions_) throw DimensionError("dataset pair out of range");
  return counts_[static_cast<std::size_t>(s) * n_actions_ + a];
}

bool TabularDataset::covered(int s) const { return visits(s) > 0; }

std::vector<int> TabularDataset::support(int s) const {
  std::vector<int> out;
  for (int a = 0; a < n_actions_; ++a)
    if (contains(s, a)) out.push_back(a);
  return out;
}

std::vector<int> TabularDataset::uncovered_states() const {
  std::vector<int> out;
  for (int s = 0; s < n_states_; ++s)
    if (!covered(s)) out.push_back(s);
  return out;
}

long TabularDataset::visits(int s) const {
  long n = 0;
  for (int a = 0; a < n_actions_; ++a) n += count(s, a);
  return n;
}

double TabularDataset::frequency(int s, int a) const {
  const long n = visits(s);
  return n == 0 ? 0.0 : static_cast<double>(count(s, a)) / static_cast<double>(n);
}

void TabularDataset::merge(const TabularDataset& other) {
  if (other.n_states_ != n_states_ || other.n_actions_ != n_actions_) throw DimensionError("dataset shape mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

bool TabularDataset::subset_of(const TabularDataset& other) const {
  if (other.n_states_ != n_states_ || other.n_actions_ != n_actions_) return false;
  for (std::size_t i = 0; i < counts_.size(); ++i)
    if (counts_[i] > 0 && other.counts_[i] == 0) return false;
  return true;
}

// ---------------------------------------------------------------------------
// TabularPolicy

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions) {
  if (n_states <= 0 || n_actions <= 0) throw ConfigError("policy needs positive state and action counts");
  return TabularPolicy{Matrix::Constant(n_states, n_actions, 1.0 / n_actions)};
}

TabularPolicy TabularPolicy::deterministic(int n_actions, const std::vector<int>& actions) {
  TabularPolicy p{Matrix::Zero(static_cast<Eigen::Index>(actions.size()), n_actions)};
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] < 0 || actions[s] >= n_actions) throw DimensionError("deterministic action out of range");
    p.probs(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  }
  return p;
}

void TabularPolicy::validate() const {
  if (probs.rows() == 0 || probs.cols() == 0) throw ConfigError("empty policy");
  for (Eigen::Index s = 0; s < probs.rows(); ++s) {
    double sum = 0.0;
    for (Eigen::Index a = 0; a < probs.cols(); ++a) {
      if (!(probs(s, a) >= 0.0)) throw ConfigError("policy row " + std::to_string(s) + " has a negative entry");
      sum += probs(s, a);
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("policy row " + std::to_string(s) + " does not sum to 1");
  }
}

int TabularPolicy::deterministic_action(int s) const {
  int found = -1;
  for (Eigen::Index a = 0; a < probs.cols(); ++a) {
    if (probs(s, a) == 1.0 && found < 0)
      found = static_cast<int>(a);
    else if (probs(s, a) != 0.0)
      return -1;
  }
  return found;
}

// ---------------------------------------------------------------------------
// Exact dynamic programming

Matrix bellman_operator(const TabularMdp& mdp, const TabularPolicy& pi, const Matrix& q) {
  check_policy_shape(mdp, pi);
  if (q.rows() != mdp.n_states || q.cols() != mdp.n_actions) throw DimensionError("Q-table shape mismatch");
  const Vector v = (pi.probs.cwiseProduct(q)).rowwise().sum();
  return backup(mdp, v);
}

PolicyValues exact_policy_evaluation(const TabularMdp& mdp, const TabularPolicy& pi) {
  mdp.validate();
  check_policy_shape(mdp, pi);
  pi.validate();
  Matrix p_pi;
  Vector r_pi;
  policy_kernel(mdp, pi, p_pi, r_pi);
  const Matrix a = Matrix::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * p_pi;
  const Eigen::PartialPivLU<Matrix> lu(a);
  Vector v = lu.solve(r_pi);
  PolicyValues out;
  for (int refine = 0;; ++refine) {
    out.q = backup(mdp, v);
    out.v = pi.probs.cwiseProduct(out.q).rowwise().sum();
    const double resid = (bellman_operator(mdp, pi, out.q) - out.q).cwiseAbs().maxCoeff();
    if (resid < 1e-10) break;
    if (refine == 8) throw NumericError("policy evaluation residual " + std::to_string(resid) + " above 1e-10");
    v += lu.solve(r_pi - a * v);
  }
  return out;
}

Matrix value_iteration(const TabularMdp& mdp, double tol, long max_iterations) {
  mdp.validate();
  Vector v = Vector::Zero(mdp.n_states);
  Matrix q = backup(mdp, v);
  for (long it = 0; it < max_iterations; ++it) {
    const Vector nv = q.rowwise().maxCoeff();
    const double delta = (nv - v).cwiseAbs().maxCoeff();
    v = nv;
    q = backup(mdp, v);
    if (delta < tol) return q;
  }
  throw NumericError("value iteration did not converge");
}

std::vector<int> greedy_actions(const Matrix& q, const TabularDataset* restrict_to) {
  std::vector<int> out(static_cast<std::size_t>(q.rows()), -1);
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < q.cols(); ++a) {
      if (restrict_to && !restrict_to->contains(static_cast<int>(s), static_cast<int>(a))) continue;
      if (out[s] < 0 || q(s, a) > best) {
        best = q(s, a);
        out[s] = static_cast<int>(a);
      }
    }
  }
  return out;
}

Vector discounted_occupancy(const TabularMdp& mdp, const TabularPolicy& pi) {
  check_policy_shape(mdp, pi);
  Matrix p_pi;
  Vector r_pi;
  policy_kernel(mdp, pi, p_pi, r_pi);
  const Matrix a = Matrix::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * p_pi.transpose();
  Vector d0(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) d0[s] = mdp.initial[s];
  return (1.0 - mdp.gamma) * Eigen::PartialPivLU<Matrix>(a).solve(d0);
}

OfflineOptimal offline_optimal_policy(const TabularMdp& mdp, const TabularDataset& dataset) {
  mdp.validate();
  if (dataset.n_states() != mdp.n_states || dataset.n_actions() != mdp.n_actions)
    throw DimensionError("dataset shape does not match MDP");
  OfflineOptimal out;
  out.covered.resize(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) out.covered[s] = dataset.covered(s);

  const auto reach =
      reachable(mdp, [&](int s, int a) { return dataset.contains(s, a); }, /*stop_at_blocked=*/true);
  for (int s = 0; s < mdp.n_states; ++s)
    if (reach[s] && !out.covered[s])
      throw CoverageError("state " + std::to_string(s) + " is reachable but has no actions in the dataset");

  std::vector<int> pol(mdp.n_states, 0);
  for (int s = 0; s < mdp.n_states; ++s)
    if (out.covered[s]) pol[s] = dataset.support(s).front();

  const long max_rounds = 10'000;
  for (long round = 0;; ++round) {
    if (round == max_rounds) throw NumericError("restricted policy iteration did not terminate");
    out.values = exact_policy_evaluation(mdp, TabularPolicy::deterministic(mdp.n_actions, pol));
    const auto best = greedy_actions(out.values.q, &dataset);
    bool changed = false;
    for (int s = 0; s < mdp.n_states; ++s) {
      if (!out.covered[s]) continue;
      const double top = out.values.q(s, best[s]);
      // Keep the incumbent on ties so the iteration terminates.
      if (out.values.q(s, pol[s]) < top - tie_tolerance(top)) {
        pol[s] = best[s];
        changed = true;
      }
    }
    if (!changed) break;
  }
  // Final lowest-index tie-break against the converged values.
  bool moved = false;
  for (int s = 0; s < mdp.n_states; ++s) {
    if (!out.covered[s]) continue;
    double top = -std::numeric_limits<double>::infinity();
    for (int a : dataset.support(s)) top = std::max(top, out.values.q(s, a));
    for (int a : dataset.support(s))
      if (out.values.q(s, a) >= top - tie_tolerance(top)) {
        if (a != pol[s]) {
          pol[s] = a;
          moved = true;
        }
        break;
      }
  }
  out.policy = TabularPolicy::deterministic(mdp.n_actions, pol);
  if (moved) out.values = exact_policy_evaluation(mdp, out.policy);
  return out;
}

TabularPolicy closed_form_improvement(const TabularPolicy& mu, const Matrix& q, double beta,
                                      const std::vector<bool>& gate, double ungated_softmax_beta) {
  if (!(beta > 0.0)) throw ConfigError("closed-form improvement needs beta > 0");
  if (q.rows() != mu.probs.rows() || q.cols() != mu.probs.cols()) throw DimensionError("Q and mu shapes differ");
  if (static_cast<Eigen::Index>(gate.size()) != q.rows()) throw DimensionError("gate length mismatch");
  TabularPolicy out{Matrix::Zero(q.rows(), q.cols())};
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    if (gate[s]) {
      double top = -std::numeric_limits<double>::infinity();
      for (Eigen::Index a = 0; a < q.cols(); ++a)
        if (mu.probs(s, a) > 0.0) top = std::max(top, q(s, a));
      double z = 0.0;
      for (Eigen::Index a = 0; a < q.cols(); ++a)
        if (mu.probs(s, a) > 0.0) {
          out.probs(s, a) = mu.probs(s, a) * std::exp(beta * (q(s, a) - top));
          z += out.probs(s, a);
        }
      if (!(z > 0.0) || !std::isfinite(z))
        throw NumericError("closed-form normaliser vanished at state " + std::to_string(s));
      out.probs.row(s) /= z;
    } else if (ungated_softmax_beta > 0.0) {
      const double top = q.row(s).maxCoeff();
      double z = 0.0;
      for (Eigen::Index a = 0; a < q.cols(); ++a) {
        out.probs(s, a) = std::exp(ungated_softmax_beta * (q(s, a) - top));
        z += out.probs(s, a);
      }
      out.probs.row(s) /= z;
    } else {
      Eigen::Index best = 0;
      for (Eigen::Index a = 1; a < q.cols(); ++a)
        if (q(s, a) > q(s, best)) best = a;
      out.probs(s, best) = 1.0;
    }
  }
  return out;
}

std::vector<BoostedIteration> offline_boosted_policy_iteration(const TabularMdp& mdp, const TabularDataset& initial,
                                                               const BoostedIterationOptions& options) {
  if (options.iterations < 1) throw ConfigError("offline-boosted policy iteration needs iterations >= 1");
  TabularPolicy pi = options.initial_policy ? *options.initial_policy
                                            : TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
  check_policy_shape(mdp, pi);
  TabularDataset data = initial;
  std::vector<BoostedIteration> trace;
  trace.reserve(static_cast<std::size_t>(options.iterations));
  for (int k = 0; k < options.iterations; ++k) {
    BoostedIteration it;
    it.pi = pi;
    it.values = exact_policy_evaluation(mdp, pi);
    it.mu = offline_optimal_policy(mdp, data);
    it.gate.assign(mdp.n_states, false);
    for (int s = 0; s < mdp.n_states; ++s) {
      if (!it.mu.covered[s]) continue;
      switch (options.gate) {
        case TabularGate::adaptive: it.gate[s] = it.mu.values.v[s] - it.values.v[s] >= 0.0; break;
        case TabularGate::forced_on: it.gate[s] = true; break;
        case TabularGate::forced_off: it.gate[s] = false; break;
      }
    }
    it.next = closed_form_improvement(it.mu.policy, it.values.q, options.beta, it.gate,
                                      options.ungated_softmax_beta);
    it.dataset = data;
    pi = it.next;
    if (options.grow_dataset) {
      const auto visited = reachable(mdp, [&](int s, int a) { return pi.probs(s, a) > 0.0; });
      for (int s = 0; s < mdp.n_states; ++s)
        if (visited[s])
          for (int a = 0; a < mdp.n_actions; ++a)
            if (pi.probs(s, a) > 0.0) data.add(s, a);
    }
    trace.push_back(std::move(it));
  }
  return trace;
}

double expectile_of_set(const std::vector<double>& values, double tau, const std::vector<double>& weights) {
  if (values.empty()) throw ConfigError("expectile of an empty set");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("expectile factor must lie in (0, 1)");
  if (!weights.empty() && weights.size() != values.size()) throw DimensionError("expectile weights length mismatch");
  const auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
  // Decreasing in m; zero at the expectile.
  const auto excess = [&](double m) {
    double up = 0.0, down = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] > m) up += w(i) * (values[i] - m);
      if (values[i] < m) down += w(i) * (m - values[i]);
    }
    return tau * up - (1.0 - tau) * down;
  };
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  for (int i = 0; i < 400 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (excess(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double kl_divergence(const Vector& p, const Vector& q) {
  if (p.size() != q.size()) throw DimensionError("kl_divergence length mismatch");
  double d = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) d += p[i] * std::log(p[i] / q[i]);
  return d;
}

double total_variation(const Vector& p, const Vector& q) {
  if (p.size() != q.size()) throw DimensionError("total_variation length mismatch");
  return 0.5 * (p - q).cwiseAbs().sum();
}

KktSolution solve_constrained_improvement(const Vector& mu, const Vector& q, double epsilon) {
  const Eigen::Index n = mu.size();
  if (n < 2 || q.size() != n) throw DimensionError("constrained program needs matching vectors of length >= 2");
  if (!(epsilon > 0.0)) throw ConfigError("divergence budget must be positive");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(mu[i] > 0.0)) throw ConfigError("reference policy must have full support");
  const Vector log_mu = mu.array().log();

  // Unknowns: x = log pi (n), lambda, nu.
  const auto residual = [&](const Vector& z) {
    Vector f(n + 2);
    const auto x = z.head(n);
    const double lam = z[n], nu = z[n + 1];
    double mass = 0.0, div = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
      f[a] = q[a] - lam * (x[a] - log_mu[a] + 1.0) - nu;
      const double p = std::exp(x[a]);
      mass += p;
      div += p * (x[a] - log_mu[a]);
    }
    f[n] = mass - 1.0;
    f[n + 1] = div - epsilon;
    return f;
  };

  KktSolution best;
  best.residual = std::numeric_limits<double>::infinity();
  for (double lam0 : {1.0, 0.1, 10.0, 0.01}) {
    Vector z(n + 2);
    z.head(n) = log_mu;
    z[n] = lam0;
    z[n + 1] = q.dot(mu) - lam0;
    Vector f = residual(z);
    int it = 0;
    for (; it < 200 && f.norm() > 1e-14; ++it) {
      Matrix jac = Matrix::Zero(n + 2, n + 2);
      const double lam = z[n];
      for (Eigen::Index a = 0; a < n; ++a) {
        const double p = std::exp(z[a]);
        jac(a, a) = -lam;
        jac(a, n) = -(z[a] - log_mu[a] + 1.0);
        jac(a, n + 1) = -1.0;
        jac(n, a) = p;
        jac(n + 1, a) = p * (z[a] - log_mu[a] + 1.0);
      }
      const Vector step = jac.fullPivLu().solve(-f);
      if (!step.allFinite()) break;
      double t = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        Vector cand = z + t * step;
        if (cand[n] <= 0.0) continue;
        const Vector fc = residual(cand);
        if (fc.allFinite() && fc.norm() < (1.0 - 1e-4 * t) * f.norm()) {
          z = cand;
          f = fc;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
    if (f.norm() < best.residual) {
      best.pi = z.head(n).array().exp();
      best.multiplier = z[n];
      best.residual = f.norm();
      best.iterations = it;
    }
    if (best.residual < 1e-12) break;
  }
  if (!(best.residual < 1e-9))
    throw NumericError("KKT solve did not converge (residual " + std::to_string(best.residual) + ")");
  return best;
}

TabularMdp random_mdp(Rng& rng, int n_states, int n_actions, double gamma) {
  TabularMdp m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.transitions.assign(n_states, std::vector<std::vector<double>>(n_actions, std::vector<double>(n_states)));
  m.rewards.assign(n_states, std::vector<double>(n_actions));
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) {
      double sum = 0.0;
      for (auto& p : m.transitions[s][a]) {
        const double u = rng.uniform();
        p = u * u * u;
        sum += p;
      }
      if (sum <= 0.0) {
        m.transitions[s][a][s] = 1.0;
        sum = 1.0;
      }
      for (auto& p : m.transitions[s][a]) p /= sum;
      m.rewards[s][a] = rng.normal();
    }
  m.initial.assign(n_states, 0.0);
  m.initial[0] = 1.0;
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Concurrent offline learner on logged transitions

ExpectileFit fit_expectile_values(int n_states, int n_actions, double gamma,
                                  const std::vector<TabularTransition>& log, double tau, double tol) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("expectile factor must lie in (0, 1)");
  struct Outcome {
    double r;
    int next;
    bool terminated;
  };
  std::map<std::pair<int, int>, std::vector<Outcome>> by_pair;
  for (const auto& t : log) {
    if (t.s < 0 || t.s >= n_states || t.next < 0 || t.next >= n_states || t.a < 0 || t.a >= n_actions)
      throw DimensionError("logged transition out of range");
    by_pair[{t.s, t.a}].push_back({t.r, t.next, t.terminated});
  }
  std::vector<std::vector<std::pair<int, double>>> at_state(n_states);  // (action, count)
  for (const auto& [key, outs] : by_pair) at_state[key.first].push_back({key.second, static_cast<double>(outs.size())});

  ExpectileFit fit;
  fit.q = Matrix::Constant(n_states, n_actions, std::numeric_limits<double>::quiet_NaN());
  fit.v = Vector::Constant(n_states, std::numeric_limits<double>::quiet_NaN());
  Vector v = Vector::Zero(n_states);
  for (int s = 0; s < n_states; ++s)
    if (at_state[s].empty()) v[s] = 0.0;
  for (int it = 1; it <= 1'000'000; ++it) {
    for (const auto& [key, outs] : by_pair) {
      double acc = 0.0;
      for (const auto& o : outs) acc += o.r + (o.terminated ? 0.0 : gamma * v[o.next]);
      fit.q(key.first, key.second) = acc / static_cast<double>(outs.size());
    }
    double delta = 0.0;
    for (int s = 0; s < n_states; ++s) {
      if (at_state[s].empty()) continue;
      std::vector<double> vals, w;
      for (const auto& [a, c] : at_state[s]) {
        vals.push_back(fit.q(s, a));
        w.push_back(c);
      }
      const double nv = expectile_of_set(vals, tau, w);
      delta = std::max(delta, std::abs(nv - v[s]));
      v[s] = nv;
    }
    fit.iterations = it;
    if (delta < tol) break;
  }
  for (int s = 0; s < n_states; ++s)
    if (!at_state[s].empty()) fit.v[s] = v[s];
  return fit;
}

MotivatingCheckpoint motivating_checkpoint(const TabularMdp& mdp, const TabularPolicy& online,
                                           const std::vector<TabularTransition>& log, double tau, long step) {
  MotivatingCheckpoint cp;
  cp.step = step;
  TabularDataset data(mdp.n_states, mdp.n_actions);
  for (const auto& t : log) data.add(t.s, t.a);
  for (int s = 0; s < mdp.n_states; ++s) (data.covered(s) ? cp.probes : cp.skipped).push_back(s);
  cp.full_coverage = true;
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) cp.full_coverage = cp.full_coverage && data.contains(s, a);

  cp.v_pi = exact_policy_evaluation(mdp, online).v;
  cp.v_star = value_iteration(mdp).rowwise().maxCoeff();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  cp.v_mu_exact = Vector::Constant(mdp.n_states, nan);
  try {
    cp.v_mu_exact = offline_optimal_policy(mdp, data).values.v;
  } catch (const CoverageError&) {
    // Early checkpoints may leave reachable states uncovered.
  }
  cp.v_mu_fit = fit_expectile_values(mdp.n_states, mdp.n_actions, mdp.gamma, log, tau).v;
  cp.offline_dominates = !cp.probes.empty();
  for (int s : cp.probes)
    cp.offline_dominates = cp.offline_dominates && std::isfinite(cp.v_mu_exact[s]) && cp.v_mu_exact[s] > cp.v_pi[s];
  for (int s : cp.skipped) cp.v_mu_exact[s] = nan;
  return cp;
}

// ---------------------------------------------------------------------------
// Fixtures

TabularFixture parse_tabular_fixture(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("tabular fixture is not valid JSON: ") + e.what());
  }
  TabularFixture f;
  try {
    for (const auto& [key, _] : j.items())
      if (key != "n_states" && key != "n_actions" && key != "gamma" && key != "initial" && key != "transitions" &&
          key != "rewards" && key != "dataset")
        throw FormatError("unknown fixture key '" + key + "'");
    f.mdp.n_states = j.at("n_states").get<int>();
    f.mdp.n_actions = j.at("n_actions").get<int>();
    f.mdp.gamma = j.at("gamma").get<double>();
    f.mdp.transitions = j.at("transitions").get<std::vector<std::vector<std::vector<double>>>>();
    f.mdp.rewards = j.at("rewards").get<std::vector<std::vector<double>>>();
    if (j.contains("initial")) {
      f.mdp.initial = j.at("initial").get<std::vector<double>>();
    } else {
      f.mdp.initial.assign(f.mdp.n_states, 0.0);
      if (f.mdp.n_states > 0) f.mdp.initial[0] = 1.0;
    }
    f.mdp.validate();
    if (j.contains("dataset")) {
      TabularDataset d(f.mdp.n_states, f.mdp.n_actions);
      for (const auto& row : j.at("dataset")) {
        if (!row.is_array() || row.size() < 2 || row.size() > 3)
          throw FormatError("dataset entries are [state, action] or [state, action, count]");
        d.add(row[0].get<int>(), row[1].get<int>(), row.size() == 3 ? row[2].get<long>() : 1L);
      }
      f.dataset = d;
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed tabular fixture: ") + e.what());
  }
  return f;
}

TabularFixture load_tabular_fixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tabular fixture '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_tabular_fixture(ss.str());
}

std::string dump_tabular_fixture(const TabularFixture& f) {
  nlohmann::json j;
  j["n_states"] = f.mdp.n_states;
  j["n_actions"] = f.mdp.n_actions;
  j["gamma"] = f.mdp.gamma;
  j["initial"] = f.mdp.initial;
  j["transitions"] = f.mdp.transitions;
  j["rewards"] = f.mdp.rewards;
  if (f.dataset) {
    auto rows = nlohmann::json::array();
    for (int s = 0; s < f.dataset->n_states(); ++s)
      for (int a = 0; a < f.dataset->n_actions(); ++a)
        if (f.dataset->contains(s, a)) rows.push_back({s, a, f.dataset->count(s, a)});
    j["dataset"] = rows;
  }
  return j.dump(2);
}

}  // namespace obac
