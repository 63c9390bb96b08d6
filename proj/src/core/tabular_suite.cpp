#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "obac/errors.hpp"
#include "obac/tabular_oracle.hpp"

namespace obac {

namespace {

constexpr double kGammas[] = {0.5, 0.9, 0.99};

struct Instance {
  TabularMdp mdp;
  int n_states;
  int n_actions;
};

Instance draw_instance(Rng& rng) {
  const int s = 2 + static_cast<int>(rng.index(9));  // 2..10
  const int a = 2 + static_cast<int>(rng.index(4));  // 2..5
  const double g = kGammas[rng.index(3)];
  return {random_mdp(rng, s, a, g), s, a};
}

TabularPolicy random_stochastic_policy(Rng& rng, int s, int a) {
  TabularPolicy p{Matrix(s, a)};
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < a; ++j) p.probs(i, j) = rng.uniform() + 1e-3;
    p.probs.row(i) /= p.probs.row(i).sum();
  }
  return p;
}

std::vector<int> random_actions(Rng& rng, int s, int a) {
  std::vector<int> out(s);
  for (auto& x : out) x = static_cast<int>(rng.index(static_cast<std::uint64_t>(a)));
  return out;
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << x;
  return os.str();
}

// Worst (most negative) Q^{pi_{k+1}} - Q^{pi_k} over dataset pairs of D_k.
double monotone_margin(const std::vector<BoostedIteration>& trace) {
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < trace.size(); ++k) {
    const auto& d = trace[k].dataset;
    for (int s = 0; s < d.n_states(); ++s)
      for (int a = 0; a < d.n_actions(); ++a)
        if (d.contains(s, a))
          worst = std::min(worst, trace[k + 1].values.q(s, a) - trace[k].values.q(s, a));
  }
  return worst;
}

}  // namespace

std::vector<PropertyResult> run_tabular_suite(const TabularSuiteOptions& o) {
  std::vector<PropertyResult> out;

  {
    PropertyResult r{"contraction", true, o.contraction_instances, -std::numeric_limits<double>::infinity(), ""};
    Rng rng(derive_seed(o.seed, 1));
    for (int i = 0; i < o.contraction_instances; ++i) {
      const auto inst = draw_instance(rng);
      const auto pi = random_stochastic_policy(rng, inst.n_states, inst.n_actions);
      Matrix q1(inst.n_states, inst.n_actions), q2(inst.n_states, inst.n_actions);
      for (Eigen::Index k = 0; k < q1.size(); ++k) {
        q1(k) = 10.0 * rng.normal();
        q2(k) = 10.0 * rng.normal();
      }
      const double before = (q1 - q2).cwiseAbs().maxCoeff();
      const double after =
          (bellman_operator(inst.mdp, pi, q1) - bellman_operator(inst.mdp, pi, q2)).cwiseAbs().maxCoeff();
      const double excess = after / before - inst.mdp.gamma;
      r.worst = std::max(r.worst, excess);
      if (excess > 1e-12) r.passed = false;
    }
    r.detail = "max(ratio - gamma) = " + fmt(r.worst) + " (bound 1e-12)";
    out.push_back(r);
  }

  // Offline-boosted policy iteration with a growing dataset.
  {
    PropertyResult mono{"monotone_improvement", true, o.monotonicity_instances,
                        std::numeric_limits<double>::infinity(), ""};
    PropertyResult gate_sem{"gate_semantics", true, o.monotonicity_instances, 0.0, ""};
    PropertyResult bound{"gated_offline_bound", true, o.monotonicity_instances,
                         std::numeric_limits<double>::infinity(), ""};
    PropertyResult chain{"literal_chain_at_gated_states", true, o.monotonicity_instances, 0.0, ""};
    chain.informational = true;
    int chain_violations = 0;
    long gated_states = 0, ungated_states = 0;
    Rng rng(derive_seed(o.seed, 2));
    for (int i = 0; i < o.monotonicity_instances; ++i) {
      const auto inst = draw_instance(rng);
      TabularDataset d0(inst.n_states, inst.n_actions);
      for (int s = 0; s < inst.n_states; ++s) d0.add(s, static_cast<int>(rng.index(inst.n_actions)));
      BoostedIterationOptions opt;
      opt.iterations = o.iterations;
      opt.initial_policy = TabularPolicy::deterministic(inst.n_actions, random_actions(rng, inst.n_states, inst.n_actions));
      const auto trace = offline_boosted_policy_iteration(inst.mdp, d0, opt);
      const double m = monotone_margin(trace);
      mono.worst = std::min(mono.worst, m);
      if (m < -1e-10) mono.passed = false;

      bool violated = false;
      for (const auto& it : trace) {
        const auto greedy = greedy_actions(it.values.q);
        for (int s = 0; s < inst.n_states; ++s) {
          if (!it.gate[s]) {
            ++ungated_states;
            if (it.next.deterministic_action(s) != greedy[s]) gate_sem.passed = false;
            continue;
          }
          ++gated_states;
          const double on_mu = it.next.probs.row(s).dot(it.mu.values.q.row(s));
          const double on_pi = it.next.probs.row(s).dot(it.values.q.row(s));
          bound.worst = std::min(bound.worst, on_mu - it.values.v[s]);
          if (on_mu < it.values.v[s] - 1e-10) bound.passed = false;
          if (on_pi < it.values.v[s] - 1e-10) violated = true;
        }
      }
      if (violated) ++chain_violations;
    }
    mono.detail = "min(Q_{k+1} - Q_k) on dataset pairs = " + fmt(mono.worst) + " (bound -1e-10)";
    gate_sem.detail = std::to_string(ungated_states) + " ungated and " + std::to_string(gated_states) +
                      " gated state visits; ungated output equals the greedy branch";
    bound.detail = "min(E_{pi_{k+1}}[Q^{mu*}] - V^{pi_k}) at gated states = " + fmt(bound.worst);
    chain.worst = chain_violations;
    chain.passed = chain_violations == 0;
    chain.detail = std::to_string(chain_violations) + "/" + std::to_string(o.monotonicity_instances) +
                   " instances have a gated state with E_{pi_{k+1}}[Q^{pi_k}] < V^{pi_k}";
    out.push_back(mono);
    out.push_back(gate_sem);
    out.push_back(bound);
    out.push_back(chain);
  }

  {
    PropertyResult r{"convergence_full_coverage", true, o.convergence_instances, 0.0, ""};
    Rng rng(derive_seed(o.seed, 3));
    for (int i = 0; i < o.convergence_instances; ++i) {
      const auto inst = draw_instance(rng);
      BoostedIterationOptions opt;
      opt.iterations = o.iterations;
      opt.grow_dataset = false;
      const auto trace =
          offline_boosted_policy_iteration(inst.mdp, TabularDataset::full(inst.n_states, inst.n_actions), opt);
      const Matrix q_star = value_iteration(inst.mdp);
      const double err = (trace.back().values.q - q_star).cwiseAbs().maxCoeff();
      r.worst = std::max(r.worst, err);
      if (!(err < 1e-8)) r.passed = false;
    }
    r.detail = "max sup|Q_final - Q*| = " + fmt(r.worst) + " (bound 1e-8)";
    out.push_back(r);
  }

  {
    PropertyResult r{"closed_form_vs_kkt", true, o.closed_form_instances, 0.0, ""};
    Rng rng(derive_seed(o.seed, 4));
    for (int i = 0; i < o.closed_form_instances; ++i) {
      const int n = 2 + static_cast<int>(rng.index(5));
      Vector mu(n), q(n);
      for (int a = 0; a < n; ++a) {
        mu[a] = rng.uniform() + 0.05;
        q[a] = rng.normal();
      }
      mu /= mu.sum();
      const double beta = rng.uniform(0.2, 5.0);
      TabularPolicy mu_t{mu.transpose()};
      const Vector closed = closed_form_improvement(mu_t, q.transpose(), beta, {true}).probs.row(0).transpose();
      const double eps = kl_divergence(closed, mu);
      const auto kkt = solve_constrained_improvement(mu, q, eps);
      const double tv = total_variation(closed, kkt.pi);
      r.worst = std::max(r.worst, tv);
      if (!(tv < 1e-6)) r.passed = false;
    }
    r.detail = "max TV(closed form, KKT solve) = " + fmt(r.worst) + " (bound 1e-6)";
    out.push_back(r);
  }

  {
    PropertyResult r{"forced_off_is_policy_iteration", true, o.monotonicity_instances, 0.0, ""};
    Rng rng(derive_seed(o.seed, 5));
    for (int i = 0; i < o.monotonicity_instances; ++i) {
      const auto inst = draw_instance(rng);
      BoostedIterationOptions opt;
      opt.iterations = 5;
      opt.gate = TabularGate::forced_off;
      const auto trace =
          offline_boosted_policy_iteration(inst.mdp, TabularDataset::full(inst.n_states, inst.n_actions), opt);
      TabularPolicy pi = TabularPolicy::uniform(inst.n_states, inst.n_actions);
      for (const auto& it : trace) {
        if (it.pi.probs != pi.probs) r.passed = false;
        pi = TabularPolicy::deterministic(inst.n_actions, greedy_actions(exact_policy_evaluation(inst.mdp, pi).q));
      }
    }
    r.detail = r.passed ? "traces identical" : "trace differs from greedy policy iteration";
    out.push_back(r);
  }
  return out;
}

}  // namespace obac
