#include <cmath>
#include <vector>

#include "doctest.h"
#include "obac/critic.hpp"
#include "obac/errors.hpp"
#include "obac/tabular_oracle.hpp"
#include "support/batches.hpp"
#include "support/gradcheck.hpp"

using namespace obac;
using obac::testing::make_batch;
using obac::testing::make_constant;
using obac::testing::one_hot_columns;
using obac::testing::random_matrix;

namespace {

SquashedGaussianPolicy small_policy(int sd, int ad, Rng& rng) {
  return SquashedGaussianPolicy(sd, ad, Vector::Constant(ad, -1.0), Vector::Constant(ad, 1.0), {8}, Activation::elu,
                                rng);
}

Batch random_batch(Rng& rng, int sd, int ad, int n) {
  Matrix a = random_matrix(rng, ad, n).array().tanh().matrix();
  Vector term(n);
  for (int j = 0; j < n; ++j) term[j] = rng.uniform() < 0.3 ? 1.0 : 0.0;
  return make_batch(random_matrix(rng, sd, n), a, random_matrix(rng, n, 1), random_matrix(rng, sd, n), term);
}

// Q(s, a) = a for a linear pair over [state; action].
CriticPair action_valued_pair(int sd) {
  Rng rng(0);
  CriticPair p(sd, 1, {}, Activation::identity, AdamConfig{}, rng);
  for (MlpParams* q : {&p.q1, &p.q2}) {
    make_constant(*q, 0.0);
    q->layers[0].weight(0, sd) = 1.0;
  }
  p.update_targets(1.0);
  return p;
}

}  // namespace

TEST_SUITE("critic") {

TEST_CASE("q_min of identical twins equals either head") {
  Rng rng(1);
  CriticPair p(3, 2, {16, 16}, Activation::elu, AdamConfig{}, rng);
  p.q2 = p.q1;
  const Matrix s = random_matrix(rng, 3, 10), a = random_matrix(rng, 2, 10);
  const Vector head = mlp_predict(p.q1, concat_rows(s, a)).row(0).transpose();
  CHECK(p.q_min(s, a, false) == head);
}

TEST_CASE("q_min takes the smaller head") {
  Rng rng(1);
  CriticPair p(2, 1, {4}, Activation::elu, AdamConfig{}, rng);
  make_constant(p.q1, 3.0);
  make_constant(p.q2, 5.0);
  const Matrix s = random_matrix(rng, 2, 4), a = random_matrix(rng, 1, 4);
  CHECK((p.q_min(s, a, false).array() == 3.0).all());
  p.clipped = false;
  make_constant(p.q1, 7.0);
  CHECK((p.q_min(s, a, false).array() == 7.0).all());
}

TEST_CASE("clipped value never exceeds either head") {
  Rng rng(2);
  CriticPair p(3, 2, {16}, Activation::elu, AdamConfig{}, rng);
  const Matrix s = random_matrix(rng, 3, 200), a = random_matrix(rng, 2, 200);
  const Matrix x = concat_rows(s, a);
  for (bool target : {false, true}) {
    const Vector m = p.q_min(s, a, target);
    const Vector h1 = mlp_predict(target ? p.q1_target : p.q1, x).row(0).transpose();
    const Vector h2 = mlp_predict(target ? p.q2_target : p.q2, x).row(0).transpose();
    CHECK((m.array() <= h1.array()).all());
    CHECK((m.array() <= h2.array()).all());
  }
}

TEST_CASE("hard target copy matches the online pair") {
  Rng rng(3);
  CriticPair p(3, 1, {8}, Activation::elu, AdamConfig{}, rng);
  const Batch b = random_batch(rng, 3, 1, 16);
  regress_pair(p, b, Vector::Ones(16));
  const Matrix s = random_matrix(rng, 3, 5), a = random_matrix(rng, 1, 5);
  CHECK(p.q_min(s, a, true) != p.q_min(s, a, false));
  p.update_targets(1.0);
  CHECK(p.q_min(s, a, true) == p.q_min(s, a, false));
}

TEST_CASE("bootstrap mask and myopic targets") {
  Rng rng(4);
  CriticPair pair(3, 1, {8}, Activation::elu, AdamConfig{}, rng);
  const auto pol = small_policy(3, 1, rng);
  Batch b = random_batch(rng, 3, 1, 32);
  const Vector y = q_pi_targets(pair, b, pol, 0.2, 0.99, PolicyVariant::stochastic, rng);
  for (int j = 0; j < 32; ++j) {
    if (b.terminated[j] == 1.0) CHECK(y[j] == b.rewards[j]);
    else CHECK(y[j] != b.rewards[j]);
  }
  CHECK(q_pi_targets(pair, b, pol, 0.2, 0.0, PolicyVariant::stochastic, rng) == b.rewards);
  OfflineValueHead head(3, {8}, Activation::elu, AdamConfig{}, ExpectileFactor(0.9), rng);
  const Vector ym = q_mu_targets(head, b, 0.9);
  for (int j = 0; j < 32; ++j)
    if (b.terminated[j] == 1.0) CHECK(ym[j] == b.rewards[j]);
  make_constant(head.v, 0.0);
  CHECK(q_mu_targets(head, b, 0.9) == b.rewards);
}

TEST_CASE("non-finite targets are rejected before any step") {
  Rng rng(5);
  CriticPair pair(2, 1, {8}, Activation::elu, AdamConfig{}, rng);
  const auto pol = small_policy(2, 1, rng);
  Batch b = random_batch(rng, 2, 1, 4);
  b.rewards[2] = std::nan("");
  const CriticPair before = pair;
  CHECK_THROWS_AS(update_q_pi(pair, b, pol, 0.1, 0.9, PolicyVariant::stochastic, rng), NumericError);
  CHECK(pair.q1 == before.q1);
  CHECK(pair.opt1 == before.opt1);
}

TEST_CASE("two-state chain with unit reward converges to the geometric sum") {
  // One-hot states, single action coordinate, alpha = 0.
  Rng rng(6);
  CriticPair pair(2, 1, {}, Activation::identity, AdamConfig{0.05, 0.9, 0.999, 1e-8}, rng);
  const auto pol = small_policy(2, 1, rng);
  const Matrix s = one_hot_columns(2, {0, 1, 0, 1});
  Matrix a(1, 4);
  a << -0.5, -0.5, 0.5, 0.5;
  const Batch b = make_batch(s, a, Vector::Ones(4), one_hot_columns(2, {1, 0, 1, 0}), Vector::Zero(4));
  for (int it = 0; it < 20000; ++it) {
    update_q_pi(pair, b, pol, 0.0, 0.99, PolicyVariant::stochastic, rng);
    pair.update_targets(0.05);
  }
  const Vector q = pair.q_min(s, a, false);
  for (int j = 0; j < 4; ++j) CHECK(q[j] == doctest::Approx(100.0).epsilon(0.01));
}

TEST_CASE("v_pi estimates") {
  Rng rng(7);
  CriticPair pair(3, 2, {16}, Activation::elu, AdamConfig{}, rng);
  auto pol = small_policy(3, 2, rng);
  const Matrix s = random_matrix(rng, 3, 6);

  SUBCASE("collapsed distribution") {
    Rng r1(1), r2(1);
    const Vector v = compute_v_pi(pair, pol, s, 0.3, 1, PolicyVariant::deterministic, r1);
    const Matrix mean = pol.heads(s).mean.array().tanh().matrix();
    CHECK(v == pair.q_min(s, mean, false));
    CHECK(r1 == r2);  // deterministic mode draws nothing

    // Log std pinned at the floor: a stochastic draw is tanh(mean) up to 1e-9.
    pol.net.layers.back().weight.bottomRows(2).setZero();
    pol.net.layers.back().bias.tail(2).setConstant(-40.0);
    const auto samp = pol.sample(s, r1, false);
    const Vector expected = pair.q_min(s, samp.squashed, false) - 0.3 * samp.log_prob;
    CHECK(compute_v_pi(pair, pol, s, 0.3, 1, PolicyVariant::stochastic, r2) == expected);
    CHECK((samp.squashed - mean).cwiseAbs().maxCoeff() < 1e-6);
  }

  SUBCASE("constant critic") {
    make_constant(pair.q1, 2.5);
    make_constant(pair.q2, 2.5);
    for (int n : {1, 7, 64}) {
      const Vector v = compute_v_pi(pair, pol, s, 0.0, n, PolicyVariant::stochastic, rng);
      CHECK((v.array() == 2.5).all());
    }
  }

  SUBCASE("single sample is unbiased") {
    const Vector oracle = compute_v_pi(pair, pol, s, 0.2, 200000, PolicyVariant::stochastic, rng);
    const int reps = 10000;
    Vector sum = Vector::Zero(6), sum2 = Vector::Zero(6);
    for (int i = 0; i < reps; ++i) {
      const Vector v = compute_v_pi(pair, pol, s, 0.2, 1, PolicyVariant::stochastic, rng);
      sum += v;
      sum2 += v.cwiseProduct(v);
    }
    for (int j = 0; j < 6; ++j) {
      const double m = sum[j] / reps;
      const double sd = std::sqrt(std::max(0.0, sum2[j] / reps - m * m));
      CHECK(std::abs(m - oracle[j]) < 4.0 * sd / std::sqrt(reps) + 1e-9);
    }
  }

  CHECK_THROWS_AS(compute_v_pi(pair, pol, s, 0.2, 0, PolicyVariant::stochastic, rng), ConfigError);
}

TEST_CASE("symmetric expectile is plain regression") {
  Rng rng(8);
  MlpParams v({3, 8, 1}, Activation::elu, rng);
  const Matrix s = random_matrix(rng, 3, 12);
  const Vector q = random_matrix(rng, 12, 1);
  const auto e = expectile_value_loss(v, s, q, ExpectileFactor(0.5));
  const auto r = squared_residual_loss(v, s, q);
  CHECK(e.loss == doctest::Approx(r.loss).epsilon(1e-14));
  for (std::size_t l = 0; l < v.layers.size(); ++l) {
    CHECK((e.grads.layers[l].weight - r.grads.layers[l].weight).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((e.grads.layers[l].bias - r.grads.layers[l].bias).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("value losses match finite differences") {
  Rng rng(9);
  for (int inst = 0; inst < 20; ++inst) {
    MlpParams net({3, 8, 1}, Activation::elu, rng);
    const Matrix x = random_matrix(rng, 3, 9);
    const Vector y = random_matrix(rng, 9, 1);
    const ExpectileFactor tau(rng.uniform(0.1, 0.95));
    auto ev = expectile_value_loss(net, x, y, tau);
    CHECK(obac::testing::check_gradients(net, ev.grads, [&] { return expectile_value_loss(net, x, y, tau).loss; })
              .max_rel_error < 1e-4);
    auto sq = squared_residual_loss(net, x, y);
    CHECK(obac::testing::check_gradients(net, sq.grads, [&] { return squared_residual_loss(net, x, y).loss; })
              .max_rel_error < 1e-4);
  }
}

TEST_CASE("expectile head converges to set expectiles") {
  auto fit = [](std::vector<double> qs, double tau) {
    Rng rng(10);
    CriticPair q = action_valued_pair(1);
    OfflineValueHead head(1, {}, Activation::identity, AdamConfig{1e-2, 0.9, 0.999, 1e-8}, ExpectileFactor(tau), rng);
    const int n = static_cast<int>(qs.size());
    Matrix a(1, n);
    for (int j = 0; j < n; ++j) a(0, j) = qs[j];
    const Batch b = make_batch(Matrix::Ones(1, n), a, Vector::Zero(n), Matrix::Ones(1, n), Vector::Ones(n));
    for (int it = 0; it < 30000; ++it) update_v_mu(head, q, b);
    return head.value(Matrix::Ones(1, 1))[0];
  };
  CHECK(fit({0.0, 1.0}, 0.9) == doctest::Approx(0.9).epsilon(0.01));
  const double v = fit({0.0, 1.0, 5.0}, 0.99);
  CHECK(v >= 4.5);
  CHECK(v <= 5.0 + 1e-3);
  CHECK(v == doctest::Approx(expectile_of_set({0.0, 1.0, 5.0}, 0.99)).epsilon(0.01));
}

TEST_CASE("higher expectile factor gives a higher value") {
  Rng rng(11);
  const int n_states = 5, per_state = 10;
  std::vector<int> ids;
  Matrix a(1, n_states * per_state);
  for (int s = 0; s < n_states; ++s)
    for (int k = 0; k < per_state; ++k) {
      a(0, static_cast<Eigen::Index>(ids.size())) = rng.normal() + s;
      ids.push_back(s);
    }
  const Matrix states = one_hot_columns(n_states, ids);
  const int n = static_cast<int>(ids.size());
  const Batch b = make_batch(states, a, Vector::Zero(n), states, Vector::Ones(n));
  const CriticPair q = action_valued_pair(n_states);
  auto train = [&](double tau) {
    Rng init(12);
    OfflineValueHead head(n_states, {}, Activation::identity, AdamConfig{1e-2, 0.9, 0.999, 1e-8},
                          ExpectileFactor(tau), init);
    for (int it = 0; it < 20000; ++it) update_v_mu(head, q, b);
    return head.value(Matrix::Identity(n_states, n_states));
  };
  const Vector hi = train(0.9), lo = train(0.5);
  const double scale = a.cwiseAbs().maxCoeff();
  for (int s = 0; s < n_states; ++s) CHECK(hi[s] >= lo[s] - 1e-2 * scale);
}

TEST_CASE("offline updates touch only buffer actions") {
  // A Q_mu pair whose value depends on the action: any substituted action
  // would change the loss.
  Rng rng(13);
  CriticPair q(2, 1, {8}, Activation::elu, AdamConfig{}, rng);
  OfflineValueHead h1(2, {8}, Activation::elu, AdamConfig{}, ExpectileFactor(0.9), rng);
  OfflineValueHead h2 = h1;
  Batch b = random_batch(rng, 2, 1, 16);
  const double l1 = update_v_mu(h1, q, b);
  const Vector q_buf = q.q_min(b.states, b.actions, true);
  CHECK(l1 == expectile_value_loss(h2.v, b.states, q_buf, h2.tau).loss);
  CriticPair q2 = q;
  const double lq = update_q_mu(q2, h2, b, 0.9);
  const Vector y = q_mu_targets(h2, b, 0.9);
  const Matrix x = concat_rows(b.states, b.actions);
  CHECK(lq == doctest::Approx(0.5 * (squared_residual_loss(q.q1, x, y).loss + squared_residual_loss(q.q2, x, y).loss)));
}

TEST_CASE("offline pair on a fully covered chain recovers optimal values") {
  const TabularMdp mdp = make_chain_mdp(5, 0.9);
  const Matrix q_star = value_iteration(mdp);
  std::vector<int> s_ids, next_ids;
  std::vector<double> acts, rews;
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < 2; ++a) {
      s_ids.push_back(s);
      acts.push_back(a == 0 ? -0.5 : 0.5);
      rews.push_back(mdp.rewards[s][a]);
      for (int t = 0; t < mdp.n_states; ++t)
        if (mdp.transitions[s][a][t] == 1.0) next_ids.push_back(t);
    }
  const int n = static_cast<int>(s_ids.size());
  Matrix a(1, n);
  Vector r(n);
  for (int j = 0; j < n; ++j) a(0, j) = acts[j], r[j] = rews[j];
  const Batch b = make_batch(one_hot_columns(5, s_ids), a, r, one_hot_columns(5, next_ids), Vector::Zero(n));

  Rng rng(14);
  const AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
  CriticPair q(5, 1, {32}, Activation::elu, adam, rng);
  OfflineValueHead v(5, {32}, Activation::elu, adam, ExpectileFactor(0.99), rng);
  for (int it = 0; it < 30000; ++it) {
    update_v_mu(v, q, b);
    update_q_mu(q, v, b, mdp.gamma);
    q.update_targets(0.005);
  }
  const Vector fitted = q.q_min(b.states, b.actions, false);
  for (int j = 0; j < n; ++j) {
    const double want = q_star(s_ids[j], acts[j] > 0 ? 1 : 0);
    CAPTURE(j);
    CHECK(std::abs(fitted[j] - want) <= 0.05 * std::abs(want));
  }
}

}  // TEST_SUITE
