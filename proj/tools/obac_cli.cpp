// obac command line front end. Links only the C API.
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "obac/obac.h"

namespace {

struct Common {
  std::string config;
  std::string env;
  std::vector<std::uint64_t> seeds;
  long steps = -1;
  std::string gate;
  std::string tau;
  std::string lambda;
  std::string out;
  std::string name;
  std::vector<std::string> sets;
  bool wall_clock = false;
  bool track_gate = false;
};

// Converts a status into a process exit code, reporting the error.
int finish(obac_status st, const char* what) {
  if (st == OBAC_OK) return 0;
  std::fprintf(stderr, "obac %s: %s error: %s\n", what, obac_status_name(st), obac_last_error());
  return static_cast<int>(st);
}

void print_and_free(char* s) {
  if (!s) return;
  std::cout << s << '\n';
  obac_string_free(s);
}

class PlanHandle {
 public:
  ~PlanHandle() { obac_plan_free(p_); }
  obac_plan* get() { return p_; }
  obac_plan** out() { return &p_; }

 private:
  obac_plan* p_ = nullptr;
};

obac_status build_plan(const Common& c, PlanHandle& plan, const std::string& sigma = "") {
  obac_status st = c.config.empty() ? obac_plan_new(plan.out()) : obac_plan_load(c.config.c_str(), plan.out());
  if (st != OBAC_OK) return st;
  std::vector<std::pair<std::string, std::string>> kv;
  if (!c.env.empty()) kv.emplace_back("env", c.env);
  if (!c.seeds.empty()) {
    std::string s;
    for (auto x : c.seeds) s += (s.empty() ? "" : ",") + std::to_string(x);
    kv.emplace_back("seeds", s);
  }
  if (c.steps >= 0) kv.emplace_back("steps", std::to_string(c.steps));
  if (!c.gate.empty()) kv.emplace_back("agent.gate", c.gate);
  if (!c.tau.empty()) kv.emplace_back("agent.tau", c.tau);
  if (!c.lambda.empty()) kv.emplace_back("agent.lambda", c.lambda);
  if (!c.out.empty()) kv.emplace_back("out", c.out);
  if (!c.name.empty()) kv.emplace_back("name", c.name);
  if (!sigma.empty()) kv.emplace_back("sigma", sigma);
  if (c.wall_clock) kv.emplace_back("wall_clock", "true");
  if (c.track_gate) kv.emplace_back("track_gate", "true");
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "--set expects key=value, got '%s'\n", s.c_str());
      return OBAC_ERR_CONFIG;
    }
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [k, v] : kv)
    if ((st = obac_plan_set(plan.get(), k.c_str(), v.c_str())) != OBAC_OK) return st;
  return OBAC_OK;
}

void add_plan_options(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Plan file (key = value lines)");
  cmd->add_option("--env", c.env, "Environment: pendulum, pointmass-dense, pointmass-sparse, chain-mdp");
  cmd->add_option("--seed,--seeds", c.seeds, "Seed list, e.g. --seeds 0 1 2")->delimiter(',');
  cmd->add_option("--steps", c.steps, "Total environment steps per seed");
  cmd->add_option("--gate", c.gate, "Gate mode: adaptive, fixed_on, off");
  cmd->add_option("--tau", c.tau, "Expectile factor");
  cmd->add_option("--lambda", c.lambda, "Behaviour-cloning weight");
  cmd->add_option("--out", c.out, "Output root directory");
  cmd->add_option("--name", c.name, "Experiment name (subdirectory of --out)");
  cmd->add_option("--set", c.sets, "Extra plan or agent.<key> setting, key=value");
  cmd->add_flag("--wall-clock", c.wall_clock, "Record wall-clock times in log.csv");
  cmd->add_flag("--track-gate", c.track_gate, "Measure the BC gradient on ungated states");
}

obac_log_level parse_level(const std::string& s) {
  static const std::map<std::string, obac_log_level> m = {{"debug", OBAC_LOG_DEBUG},
                                                          {"info", OBAC_LOG_INFO},
                                                          {"warning", OBAC_LOG_WARNING},
                                                          {"error", OBAC_LOG_ERROR},
                                                          {"silent", OBAC_LOG_SILENT}};
  const auto it = m.find(s);
  return it == m.end() ? OBAC_LOG_WARNING : it->second;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline-boosted actor-critic experiments"};
  app.require_subcommand(1);
  std::string log_level = "warning";
  app.add_option("--log-level", log_level, "debug, info, warning, error, silent")
      ->check(CLI::IsMember({"debug", "info", "warning", "error", "silent"}));
  app.set_version_flag("--version", std::string(obac_version()));

  Common c;
  std::string sigma;
  auto* train = app.add_subcommand("train", "Train one agent per seed");
  add_plan_options(train, c);
  train->add_option("--sigma", sigma, "Action-noise std of the execution wrapper");

  auto* ablate = app.add_subcommand("ablate", "Run the adaptive, fixed_on and off gate modes");
  add_plan_options(ablate, c);
  ablate->add_option("--sigma", sigma, "Action-noise std of the execution wrapper");

  std::vector<double> sigmas{0.0, 0.05, 0.1};
  auto* noise = app.add_subcommand("noise", "Action-noise robustness suite with decline rates");
  add_plan_options(noise, c);
  noise->add_option("--sigma,--sigmas", sigmas, "Noise levels (must include 0)")->delimiter(',');

  auto* motivate = app.add_subcommand("motivate", "Offline-vs-online value study");
  add_plan_options(motivate, c);

  std::string run_dir, metric = "eval_return_mean";
  std::vector<std::uint64_t> curve_seeds;
  auto* curves = app.add_subcommand("curves", "Write curves.csv for a finished experiment");
  curves->add_option("run_dir", run_dir, "Experiment directory (<out>/<name>)")->required();
  curves->add_option("--seed,--seeds", curve_seeds, "Seeds that must be present")->delimiter(',');
  curves->add_option("--metric", metric, "eval_return_mean, success_rate, gate_fraction, v_pi_mean, v_mu_mean");

  std::uint64_t verify_seed = 0;
  std::string fixture, verify_out;
  auto* verify = app.add_subcommand("tabular-verify", "Exact tabular property suite");
  verify->add_option("--seed", verify_seed, "Suite seed");
  verify->add_option("--fixture", fixture, "Also solve the offline optimum of a fixture file");
  verify->add_option("--out", verify_out, "Write the JSON report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return OBAC_ERR_CONFIG;
  }
  obac_set_log_level(parse_level(log_level));

  char* report = nullptr;
  obac_status st = OBAC_OK;
  PlanHandle plan;
  if (*train || *ablate || *noise || *motivate) {
    st = build_plan(c, plan, noise->parsed() ? "" : sigma);
    if (st != OBAC_OK) return finish(st, "plan");
  }
  if (*train) {
    st = obac_run_experiment(plan.get(), &report);
    print_and_free(report);
    return finish(st, "train");
  }
  if (*ablate) {
    st = obac_run_ablation(plan.get(), &report);
    print_and_free(report);
    return finish(st, "ablate");
  }
  if (*noise) {
    st = obac_run_noise(plan.get(), sigmas.data(), sigmas.size(), &report);
    print_and_free(report);
    return finish(st, "noise");
  }
  if (*motivate) {
    st = obac_run_motivating(plan.get(), &report);
    print_and_free(report);
    return finish(st, "motivate");
  }
  if (*curves) {
    st = obac_emit_curves(run_dir.c_str(), curve_seeds.data(), curve_seeds.size(), metric.c_str(), &report);
    print_and_free(report);
    return finish(st, "curves");
  }
  if (*verify) {
    st = obac_tabular_verify(verify_seed, &report);
    if (report && !verify_out.empty()) {
      FILE* f = std::fopen(verify_out.c_str(), "wb");
      if (!f || std::fputs(report, f) < 0) {
        if (f) std::fclose(f);
        obac_string_free(report);
        std::fprintf(stderr, "obac tabular-verify: io error: cannot write %s\n", verify_out.c_str());
        return OBAC_ERR_IO;
      }
      std::fclose(f);
    }
    print_and_free(report);
    if (st != OBAC_OK) return finish(st, "tabular-verify");
    if (!fixture.empty()) {
      report = nullptr;
      st = obac_tabular_offline_optimum(fixture.c_str(), &report);
      print_and_free(report);
      return finish(st, "tabular-verify");
    }
    return 0;
  }
  return 0;
}
