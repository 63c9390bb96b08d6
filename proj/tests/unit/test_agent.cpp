#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "obac/agent.hpp"
#include "obac/errors.hpp"
#include "support/sac_reference.hpp"

using namespace obac;
using obac::testing::same_critic;

namespace {

AgentConfig small(const std::string& env = "pendulum", std::uint64_t seed = 0) {
  return config_override(AgentConfig{}, {{"env", env},
                                         {"seed", std::to_string(seed)},
                                         {"hidden_width", "16"},
                                         {"batch_size", "32"},
                                         {"warmup_steps", "100"},
                                         {"eval_interval", "100"},
                                         {"eval_episodes", "2"}});
}

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("obac_agent_" + name)).string();
}

bool same_state(const Agent& a, const Agent& b) {
  return a.policy().net == b.policy().net && same_critic(a.q_pi(), b.q_pi()) && same_critic(a.q_mu(), b.q_mu()) &&
         a.v_mu().v == b.v_mu().v && a.v_mu().opt == b.v_mu().opt && a.temperature() == b.temperature() &&
         a.actor_optimizer() == b.actor_optimizer() && a.buffer() == b.buffer();
}

}  // namespace

TEST_SUITE("agent") {

TEST_CASE("config defaults") {
  const AgentConfig c = config_validate({});
  CHECK(c.gamma == 0.99);
  CHECK(c.critic_lr == 3e-4);
  CHECK(c.actor_lr == 3e-4);
  CHECK(c.batch_size == 512);
  CHECK(c.buffer_capacity == 1'000'000);
  CHECK(c.tau == 0.9);
  CHECK(c.lambda == 0.001);
  CHECK(c.hidden_width == 512);
  CHECK(c.hidden_layers == 2);
  CHECK(c.activation == Activation::elu);
  CHECK(c.gate == GateMode::adaptive);
  CHECK(c.policy == PolicyVariant::stochastic);
  CHECK(c.warmup_steps == 5000);
  CHECK(c.updates_per_env_step == 1);
  CHECK(c.eval_interval == 1000);
  CHECK(c.eval_episodes == 10);
  CHECK(config_validate(c.to_map()).hash() == c.hash());
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(config_validate({{"tau", "1.2"}}), ConfigError);
  CHECK_THROWS_AS(config_validate({{"gamma", "1"}}), ConfigError);
  CHECK_THROWS_AS(config_validate({{"lambda", "-0.1"}}), ConfigError);
  CHECK_THROWS_AS(config_validate({{"batch_size", "ten"}}), ConfigError);
  CHECK_THROWS_AS(config_validate({{"env", "cartpole"}}), ConfigError);
  try {
    config_validate({{"foo", "1"}});
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("'foo'") != std::string::npos);
  }
  try {
    config_validate({{"tau", "1.2"}});
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("tau") != std::string::npos);
  }
}

TEST_CASE("warmup acts uniformly and delays updates") {
  Agent agent(small());
  std::vector<Vector> actions;
  agent.set_action_observer([&](const Vector& a) { actions.push_back(a); });
  for (int t = 0; t < 99; ++t) agent.env_step();
  CHECK(agent.gradient_steps() == 0);
  CHECK(agent.buffer().size() == 99);
  agent.env_step();
  CHECK(agent.buffer().size() == 100);
  CHECK(agent.gradient_steps() == 1);
  double lo = 0, hi = 0;
  for (const auto& a : actions) {
    CHECK(std::abs(a[0]) <= 2.0);
    lo = std::min(lo, a[0]);
    hi = std::max(hi, a[0]);
  }
  CHECK(lo < -1.5);
  CHECK(hi > 1.5);
  for (std::size_t i = 0; i < 100; ++i) CHECK(agent.buffer().at(i).action == actions[i]);
}

TEST_CASE("evaluation") {
  Rng rng(1);
  SquashedGaussianPolicy pol(4, 2, Vector::Constant(2, -1.0), Vector::Constant(2, 1.0), {8}, Activation::elu, rng);
  // Push hard toward the (-1, -1) corner, away from the goal.
  pol.net.layers.back().weight.setZero();
  pol.net.layers.back().bias << -5, -5, -1, -1;
  const auto away = evaluate(pol, "pointmass-sparse", 0.0, 5, 3);
  for (double r : away.returns) CHECK(r == 0.0);
  CHECK(away.success_rate == 0.0);

  pol.net.layers.back().bias << 0.3, 0.3, -1, -1;
  const auto a = evaluate(pol, "pointmass-sparse", 0.0, 20, 7);
  const auto b = evaluate(pol, "pointmass-sparse", 0.0, 20, 7);
  CHECK(a.returns == b.returns);
  long wins = 0;
  for (bool s : a.successes) wins += s;
  CHECK(a.success_rate == doctest::Approx(wins / 20.0));
  CHECK(a.success_rate >= 0.0);
  CHECK(a.success_rate <= 1.0);
  CHECK(std::isnan(evaluate(pol, "pointmass-dense", 0.0, 2, 7).success_rate));
  CHECK_THROWS_AS(evaluate(pol, "pointmass-dense", 0.0, 0, 7), ConfigError);
}

TEST_CASE("training is deterministic") {
  auto run = [] {
    Agent agent(small());
    std::vector<double> out;
    agent.train(400, [&](const RunLogRow& r) {
      out.push_back(r.eval_return_mean);
      out.push_back(r.loss_q_pi);
      out.push_back(r.gate_fraction);
    });
    return out;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == 12);
  CHECK(a == b);
}

TEST_CASE("checkpoint round trip and resume") {
  const auto path = temp_file("resume.ckpt");
  Agent full(small());
  for (int t = 0; t < 300; ++t) full.env_step();
  full.save_checkpoint(path);
  Agent resumed = Agent::load_checkpoint(path, full.config());
  CHECK(same_state(full, resumed));
  CHECK(resumed.env_steps() == 300);

  for (int t = 0; t < 1000; ++t) {
    full.env_step();
    resumed.env_step();
  }
  CHECK(same_state(full, resumed));
  CHECK(full.evaluate_now(3, 5).returns == resumed.evaluate_now(3, 5).returns);
  CHECK(full.make_row().eval_return_mean == resumed.make_row().eval_return_mean);

  SUBCASE("wrong env is refused") {
    try {
      Agent::load_checkpoint(path, small("pointmass-dense"));
      FAIL("mismatched checkpoint accepted");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("env") != std::string::npos);
    }
  }
  SUBCASE("truncated checkpoint is a format error") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
    CHECK_THROWS_AS(Agent::load_checkpoint(path), FormatError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("gate off is the plain soft actor-critic") {
  AgentConfig c = small("pendulum", 4);
  c = config_override(c, {{"gate", "off"}});
  Agent agent(c);
  obac::testing::SacReference ref(c);
  while (agent.gradient_steps() < 200) {
    agent.env_step();
    ref.env_step();
  }
  CHECK(ref.gradient_steps() == 200);
  CHECK(agent.policy().net == ref.policy().net);
  CHECK(same_critic(agent.q_pi(), ref.q()));
  CHECK(agent.temperature() == ref.temperature());
}

TEST_CASE("zero lambda makes adaptive and off identical") {
  const AgentConfig base = config_override(small("pointmass-dense", 2), {{"lambda", "0"}});
  Agent adaptive(config_override(base, {{"gate", "adaptive"}}));
  Agent off(config_override(base, {{"gate", "off"}}));
  for (int t = 0; t < 400; ++t) {
    adaptive.env_step();
    off.env_step();
  }
  CHECK(adaptive.policy().net == off.policy().net);
  CHECK(same_critic(adaptive.q_pi(), off.q_pi()));
  CHECK(adaptive.temperature() == off.temperature());
}

TEST_CASE("one tick runs the updates in order") {
  const AgentConfig c = small("pendulum", 6);
  const auto streams = AgentStreams::from_seed(c.seed);
  Agent agent(c);
  for (int t = 0; t < 99; ++t) agent.env_step();
  REQUIRE(agent.gradient_steps() == 0);
  auto policy = agent.policy();
  auto actor_opt = agent.actor_optimizer();
  auto q_pi = agent.q_pi();
  auto q_mu = agent.q_mu();
  auto v_mu = agent.v_mu();
  auto temp = agent.temperature();
  agent.env_step();
  REQUIRE(agent.gradient_steps() == 1);
  ReplayBuffer buffer = agent.buffer();
  buffer.sampling_rng() = Rng(streams.buffer);

  auto manual = [&](bool swap_offline) {
    auto pol = policy;
    auto opt = actor_opt;
    auto qp = q_pi;
    auto qm = q_mu;
    auto vm = v_mu;
    auto tp = temp;
    auto buf = buffer;
    Rng update(streams.update), gate_rng(streams.gate);
    Batch b = buf.sample_batch(c.batch_size);
    b.actions = pol.unscale(b.actions);
    const double alpha = tp.alpha();
    const Vector vmu = vm.value(b.states);
    const Vector vpi = compute_v_pi(qp, pol, b.states, alpha, c.v_pi_samples, c.policy, gate_rng);
    update_q_pi(qp, b, pol, alpha, c.gamma, c.policy, update);
    if (swap_offline) {
      update_v_mu(vm, qm, b);
      update_q_mu(qm, vm, b, c.gamma);
    } else {
      update_q_mu(qm, vm, b, c.gamma);
      update_v_mu(vm, qm, b);
    }
    const auto pu = update_policy(pol, opt, qp, b, gate_vector(c.gate, vmu, vpi), alpha, c.lambda, c.policy, update);
    update_temperature(tp, pu.log_probs);
    qp.update_targets(c.polyak);
    qm.update_targets(c.polyak);
    return std::tuple{pol, qp, qm, vm, tp};
  };

  const auto [pol, qp, qm, vm, tp] = manual(false);
  CHECK(pol.net == agent.policy().net);
  CHECK(same_critic(qp, agent.q_pi()));
  CHECK(same_critic(qm, agent.q_mu()));
  CHECK(vm.v == agent.v_mu().v);
  CHECK(tp == agent.temperature());
  // Q_mu bootstraps from the online V_mu, so the comparison sees the order of the offline pair.
  const auto swapped = manual(true);
  CHECK_FALSE(same_critic(std::get<2>(swapped), agent.q_mu()));
}

TEST_CASE("the offline learner never reaches the environment") {
  // With the gate off, the offline value pair cannot influence acting.
  auto actions = [](const std::string& tau) {
    Agent agent(config_override(small("pointmass-sparse", 3), {{"gate", "off"}, {"tau", tau}}));
    std::vector<double> seen;
    agent.set_action_observer([&](const Vector& a) { seen.insert(seen.end(), a.begin(), a.end()); });
    for (int t = 0; t < 400; ++t) agent.env_step();
    return std::pair{seen, agent.v_mu().v};
  };
  const auto [a, va] = actions("0.6");
  const auto [b, vb] = actions("0.95");
  CHECK(a == b);
  CHECK_FALSE(va == vb);
}

TEST_CASE("temperature stays positive and finite over a long run") {
  Agent agent(config_override(small("pendulum", 8), {{"hidden_width", "8"},
                                                      {"hidden_layers", "1"},
                                                      {"batch_size", "8"},
                                                      {"eval_interval", "1000000"}}));
  double lo = 1e300, hi = 0;
  for (long t = 0; t < 100000; ++t) {
    agent.env_step();
    if (t % 1000 == 0) {
      lo = std::min(lo, agent.alpha());
      hi = std::max(hi, agent.alpha());
    }
  }
  CHECK(lo > 0.0);
  CHECK(std::isfinite(hi));
  CHECK(std::isfinite(agent.alpha()));
}

TEST_CASE("rows report diagnostics since the previous row") {
  Agent agent(config_override(small("pointmass-sparse", 1), {{"gate", "fixed_on"}}));
  std::vector<RunLogRow> rows;
  agent.train(250, [&](const RunLogRow& r) { rows.push_back(r); });
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].env_step == 100);
  CHECK(rows[2].env_step == 250);
  CHECK(rows[1].gate_fraction == 1.0);
  CHECK(rows[2].success_rate >= 0.0);
  CHECK(std::isfinite(rows[2].v_mu_mean));
}

TEST_CASE("deterministic variant trains") {
  Agent agent(config_override(small("pendulum", 2), {{"policy", "deterministic"}}));
  for (int t = 0; t < 300; ++t) agent.env_step();
  CHECK(agent.alpha() == 0.0);
  CHECK(agent.policy().net.all_finite());
}

}  // TEST_SUITE
