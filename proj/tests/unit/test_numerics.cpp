#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "obac/errors.hpp"
#include "obac/numerics.hpp"
#include "obac/serialization.hpp"
#include "obac/tabular_oracle.hpp"
#include "support/gradcheck.hpp"

using namespace obac;
using obac::testing::check_gradients;
using obac::testing::random_matrix;

TEST_SUITE("numerics") {

TEST_CASE("identity layer passes the input through") {
  auto p = MlpParams::zeros({2, 2}, Activation::identity);
  p.layers[0].weight = Matrix::Identity(2, 2);
  Vector x(2);
  x << 1, 2;
  const Vector y = mlp_forward(p, x, nullptr);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("affine single layer") {
  auto p = MlpParams::zeros({1, 1}, Activation::identity);
  p.layers[0].weight(0, 0) = 2.0;
  p.layers[0].bias[0] = 0.5;
  Vector x(1);
  x << 3.0;
  CHECK(mlp_forward(p, x, nullptr)[0] == 6.5);
}

TEST_CASE("repeated forward passes are bitwise identical") {
  Rng rng(7);
  MlpParams p({3, 512, 512, 1}, Activation::elu, rng);
  const Matrix x = random_matrix(rng, 3, 4);
  const Matrix a = mlp_predict(p, x);
  const Matrix b = mlp_forward(p, x).output;
  CHECK(a == b);
  CHECK(mlp_predict(p, x) == a);
}

TEST_CASE("batched forward equals per-column forward") {
  Rng rng(3);
  MlpParams p({4, 16, 2}, Activation::elu, rng);
  const Matrix x = random_matrix(rng, 4, 5);
  const Matrix y = mlp_predict(p, x);
  for (int j = 0; j < 5; ++j) {
    const Vector yj = mlp_forward(p, Vector(x.col(j)), nullptr);
    CHECK((yj - y.col(j)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("product rule on a scalar linear map") {
  auto p = MlpParams::zeros({1, 1}, Activation::identity);
  p.layers[0].weight(0, 0) = 2.0;
  Matrix x(1, 1);
  x << 3.0;
  auto f = mlp_forward(p, x);
  const auto g = backward(p, f.tape, Matrix::Ones(1, 1));
  CHECK(g.layers[0].weight(0, 0) == 3.0);
  CHECK(g.input(0, 0) == 2.0);
  CHECK(g.layers[0].bias[0] == 1.0);
}

TEST_CASE("zero output gradient gives zero gradients") {
  Rng rng(1);
  MlpParams p({3, 8, 8, 2}, Activation::elu, rng);
  auto f = mlp_forward(p, random_matrix(rng, 3, 6));
  const auto g = backward(p, f.tape, Matrix::Zero(2, 6));
  CHECK(g.squared_norm() == 0.0);
  CHECK(g.input.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a tape is consumed by one backward pass") {
  Rng rng(1);
  MlpParams p({2, 4, 1}, Activation::elu, rng);
  auto f = mlp_forward(p, random_matrix(rng, 2, 3));
  backward(p, f.tape, Matrix::Ones(1, 3));
  CHECK(f.tape.consumed());
  CHECK_THROWS_AS(backward(p, f.tape, Matrix::Ones(1, 3)), StateError);
}

TEST_CASE("input-only backward matches the full pass") {
  Rng rng(5);
  MlpParams p({3, 8, 2}, Activation::tanh, rng);
  const Matrix x = random_matrix(rng, 3, 4);
  const Matrix og = random_matrix(rng, 2, 4);
  auto f1 = mlp_forward(p, x);
  auto f2 = mlp_forward(p, x);
  const auto full = backward(p, f1.tape, og);
  const auto in_only = backward(p, f2.tape, og, false);
  CHECK(in_only.layers.empty());
  CHECK(in_only.input == full.input);
}

TEST_CASE("random networks match central finite differences") {
  Rng rng(11);
  const Activation acts[] = {Activation::elu, Activation::tanh, Activation::identity, Activation::relu};
  for (int inst = 0; inst < 100; ++inst) {
    const int depth = 1 + static_cast<int>(rng.index(3));
    std::vector<int> sizes{1 + static_cast<int>(rng.index(5))};
    for (int d = 0; d < depth; ++d) sizes.push_back(1 + static_cast<int>(rng.index(32)));
    sizes.push_back(1 + static_cast<int>(rng.index(3)));
    MlpParams p(sizes, acts[inst % 4], rng);
    const int batch = 1 + static_cast<int>(rng.index(4));
    const Matrix x = random_matrix(rng, sizes.front(), batch);
    const Matrix c = random_matrix(rng, sizes.back(), batch);
    // Scalar loss sum(c .* y) + 0.5 sum(y^2).
    auto loss = [&] {
      const Matrix y = mlp_predict(p, x);
      return (c.array() * y.array()).sum() + 0.5 * y.squaredNorm();
    };
    auto f = mlp_forward(p, x);
    const auto g = backward(p, f.tape, c + f.output);
    const auto r = check_gradients(p, g, loss);
    CAPTURE(inst);
    // ReLU kinks can sit inside the stencil; only smooth activations are held to the bound.
    if (acts[inst % 4] != Activation::relu) CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("input gradient matches finite differences") {
  Rng rng(2);
  MlpParams p({4, 16, 1}, Activation::elu, rng);
  Matrix x = random_matrix(rng, 4, 1);
  auto f = mlp_forward(p, x);
  const auto g = backward(p, f.tape, Matrix::Ones(1, 1));
  for (int i = 0; i < 4; ++i) {
    const double h = 1e-5, saved = x(i, 0);
    x(i, 0) = saved + h;
    const double up = mlp_predict(p, x)(0, 0);
    x(i, 0) = saved - h;
    const double down = mlp_predict(p, x)(0, 0);
    x(i, 0) = saved;
    CHECK(g.input(i, 0) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("adam with zero gradients keeps params and decays moments") {
  Rng rng(1);
  MlpParams p({2, 3, 1}, Activation::elu, rng);
  AdamState s(p, AdamConfig{});
  auto g = MlpGradients::zeros_like(p);
  g.layers[0].weight.setConstant(1.0);
  adam_step(s, p, g);
  const MlpParams before = p;
  const double m_before = s.first_moment().layers[0].weight(0, 0);
  adam_step(s, p, MlpGradients::zeros_like(p));
  CHECK(s.first_moment().layers[0].weight(0, 0) == doctest::Approx(0.9 * m_before));
  // Zero gradient still moves params through the bias-corrected momentum,
  // but a fresh optimiser with only zero gradients does not.
  AdamState fresh(before, AdamConfig{});
  MlpParams q = before;
  adam_step(fresh, q, MlpGradients::zeros_like(q));
  CHECK(q == before);
}

TEST_CASE("first adam step moves by about lr") {
  ScalarAdam a;
  a.config.lr = 0.1;
  const double x = a.step(0.0, 1.0);
  CHECK(x == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam minimises a convex scalar problem") {
  ScalarAdam a;
  a.config.lr = 3e-4;
  double theta = 1.0, prev = theta;
  for (int i = 0; i < 1000; ++i) {
    theta = a.step(theta, 2.0 * theta);
    CHECK(theta < prev);
    prev = theta;
  }
  // Each step moves by at most about lr, so 1000 steps cannot get below 0.7.
  CHECK(theta >= 1.0 - 1000 * 3e-4 * (1 + 1e-6));
  CHECK(theta < 0.75);
  for (int i = 0; i < 5000 && std::abs(theta) >= 0.05; ++i) theta = a.step(theta, 2.0 * theta);
  CHECK(std::abs(theta) < 0.05);
}

TEST_CASE("adam rejects non-finite gradients without touching state") {
  Rng rng(1);
  MlpParams p({2, 3, 1}, Activation::elu, rng);
  AdamState s(p, AdamConfig{});
  const MlpParams before = p;
  const AdamState s_before = s;
  auto g = MlpGradients::zeros_like(p);
  g.layers[1].bias[0] = std::nan("");
  CHECK_THROWS_AS(adam_step(s, p, g), NumericError);
  CHECK(p == before);
  CHECK(s == s_before);
}

TEST_CASE("squashed gaussian log density") {
  const double m[] = {0.0}, ls[] = {0.0}, a0[] = {0.0};
  CHECK(squashed_gaussian_logprob(m, ls, a0) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));

  SUBCASE("diagonal density is a sum of 1-D densities") {
    const double mm[] = {0.3, -0.2}, ll[] = {-0.5, 0.4}, aa[] = {0.1, -0.7};
    double sum = 0.0;
    for (int i = 0; i < 2; ++i) sum += squashed_gaussian_logprob({&mm[i], 1}, {&ll[i], 1}, {&aa[i], 1});
    CHECK(squashed_gaussian_logprob(mm, ll, aa) == doctest::Approx(sum).epsilon(1e-14));
  }

  SUBCASE("pushforward of N(0,1) at tanh(1)") {
    const double a[] = {std::tanh(1.0)};
    const double normal = std::exp(-0.5) / std::sqrt(2 * std::numbers::pi);
    const double expected = normal / (1.0 - a[0] * a[0]);
    CHECK(std::abs(std::exp(squashed_gaussian_logprob(m, ls, a)) - expected) < 1e-6);
  }

  SUBCASE("density integrates to one over (-1, 1)") {
    // Substitute a = tanh(u) so the integrand is smooth: p(a) da = p(tanh u) (1 - tanh^2 u) du.
    const double mm[] = {0.4}, ll[] = {-0.3};
    double total = 0.0;
    const double du = 1e-3;
    for (double u = -12.0; u < 12.0; u += du) {
      const double a[] = {std::tanh(u + 0.5 * du)};
      if (std::abs(a[0]) >= kActionClamp) continue;
      total += std::exp(squashed_gaussian_logprob(mm, ll, a)) * (1.0 - a[0] * a[0]) * du;
    }
    CHECK(std::abs(total - 1.0) < 1e-4);
  }
}

TEST_CASE("log(1 - tanh^2) is stable") {
  for (double u : {0.0, 0.5, -3.0, 10.0}) CHECK(log1m_tanh_sq(u) == doctest::Approx(std::log(1 - std::tanh(u) * std::tanh(u))));
  CHECK(std::isfinite(log1m_tanh_sq(400.0)));
  CHECK(log1m_tanh_sq(400.0) == doctest::Approx(2 * (std::numbers::ln2 - 400.0)));
}

TEST_CASE("expectile loss values") {
  CHECK(expectile_loss(2.0, ExpectileFactor(0.5)) == doctest::Approx(0.5 * 4.0));
  CHECK(expectile_loss(-3.0, ExpectileFactor(0.5)) == doctest::Approx(0.5 * 9.0));
  CHECK(expectile_loss(1.0, ExpectileFactor(0.9)) == doctest::Approx(0.9));
  CHECK(expectile_loss(-1.0, ExpectileFactor(0.9)) == doctest::Approx(0.1));
  CHECK_THROWS_AS(ExpectileFactor(1.0), ConfigError);
  CHECK_THROWS_AS(ExpectileFactor(0.0), ConfigError);
}

TEST_CASE("expectile loss is convex and its sample minimiser is the expectile") {
  Rng rng(4);
  for (int inst = 0; inst < 20; ++inst) {
    const ExpectileFactor tau(rng.uniform(0.05, 0.95));
    std::vector<double> xs(2 + rng.index(8));
    for (auto& x : xs) x = rng.normal();
    auto total = [&](double m) {
      double s = 0.0;
      for (double x : xs) s += expectile_loss(x - m, tau);
      return s;
    };
    // Midpoint convexity along a grid.
    for (double a = -3.0; a < 3.0; a += 0.37)
      for (double b = a + 0.1; b < 3.0; b += 0.53)
        CHECK(total(0.5 * (a + b)) <= 0.5 * (total(a) + total(b)) + 1e-12);
    double best = 0.0, best_val = 1e300;
    for (double m = -4.0; m <= 4.0; m += 1e-4)
      if (total(m) < best_val) best_val = total(m), best = m;
    CHECK(std::abs(best - expectile_of_set(xs, tau.value())) < 2e-4);
  }
  // The two-point expectile of {0, 1} is tau.
  CHECK(expectile_of_set({0.0, 1.0}, 0.9) == doctest::Approx(0.9).epsilon(1e-9));
}

TEST_CASE("expectile loss gradient") {
  const ExpectileFactor tau(0.8);
  for (double r : {-2.0, -0.3, 0.4, 1.5}) {
    const double h = 1e-6;
    CHECK(expectile_loss_grad(r, tau) ==
          doctest::Approx((expectile_loss(r + h, tau) - expectile_loss(r - h, tau)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("polyak averaging") {
  auto target = MlpParams::zeros({1, 1}, Activation::identity);
  auto online = MlpParams::zeros({1, 1}, Activation::identity);
  online.layers[0].weight(0, 0) = 1.0;
  online.layers[0].bias[0] = 1.0;

  SUBCASE("rate 1 copies") {
    polyak_update(target, online, 1.0);
    CHECK(target == online);
  }
  SUBCASE("rate 0.005 from 0 toward 1") {
    polyak_update(target, online, 0.005);
    CHECK(target.layers[0].weight(0, 0) == doctest::Approx(0.005));
  }
  SUBCASE("gap decays geometrically") {
    const double rho = 0.005;
    for (int n = 1; n <= 500; ++n) {
      polyak_update(target, online, rho);
      if (n % 100 == 0) CHECK(1.0 - target.layers[0].weight(0, 0) == doctest::Approx(std::pow(1 - rho, n)).epsilon(1e-10));
    }
  }
  CHECK_THROWS_AS(polyak_update(target, online, 0.0), ConfigError);
}

TEST_CASE("network and optimiser serialization round trip") {
  Rng rng(9);
  MlpParams p({3, 5, 2}, Activation::elu, rng);
  AdamState s(p, AdamConfig{1e-3, 0.8, 0.99, 1e-7});
  auto f = mlp_forward(p, random_matrix(rng, 3, 2));
  adam_step(s, p, backward(p, f.tape, Matrix::Ones(2, 2)));
  BinaryWriter w;
  p.serialize(w);
  s.serialize(w);
  BinaryReader r(w.data());
  CHECK(MlpParams::deserialize(r) == p);
  CHECK(AdamState::deserialize(r) == s);
  r.expect_end();

  BinaryWriter only_params;
  p.serialize(only_params);
  auto bytes = only_params.data();
  bytes.resize(bytes.size() - 3);
  BinaryReader trunc(bytes);
  CHECK_THROWS_AS((void)MlpParams::deserialize(trunc), FormatError);
}

TEST_CASE("activation names") {
  for (auto a : {Activation::elu, Activation::relu, Activation::tanh, Activation::identity})
    CHECK(parse_activation(to_string(a)) == a);
  CHECK_THROWS_AS(parse_activation("gelu"), ConfigError);
}

}  // TEST_SUITE
