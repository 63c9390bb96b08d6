#include "obac/obac.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include "json.hpp"

#include "obac/agent.hpp"
#include "obac/errors.hpp"
#include "obac/harness.hpp"
#include "obac/log.hpp"
#include "obac/tabular_oracle.hpp"

struct obac_plan {
  obac::RawConfig keys;  // explicitly set keys
  obac::ExperimentPlan plan;
};

struct obac_agent {
  explicit obac_agent(obac::Agent a) : agent(std::move(a)) {}
  obac::Agent agent;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

obac_status fail(obac_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs `fn`, mapping library exceptions onto status codes.
template <class F>
obac_status guarded(F&& fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const obac::Error& e) {
    return fail(static_cast<obac_status>(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(OBAC_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(OBAC_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(OBAC_ERR_INTERNAL, "unknown error");
  }
}

char* dup(const std::string& s) {
  auto* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

obac_status need(const void* p, const char* what) {
  if (p == nullptr) return fail(OBAC_ERR_CONFIG, std::string(what) + " must not be NULL");
  return OBAC_OK;
}

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json experiment_json(const obac::ExperimentResult& r) {
  json j = json::parse(obac::summary_json(r));
  j["dir"] = r.dir;
  if (!r.checkpoints.empty()) {
    const auto& f = r.checkpoints.back();
    j["final"] = {{"env_step", f.env_step},
                  {"eval_return_mean", num(f.eval_return.mean)},
                  {"eval_return_ci95", num(f.eval_return.ci)},
                  {"success_rate", num(f.success_rate.mean)},
                  {"gate_fraction", num(f.gate_fraction.mean)}};
  }
  return j;
}

obac_status first_failure(const obac::ExperimentResult& r, obac_status current) {
  if (current != OBAC_OK) return current;
  for (const auto& s : r.runs)
    if (!s.ok) return fail(static_cast<obac_status>(s.error_code), "seed " + std::to_string(s.seed) + ": " + s.error);
  return OBAC_OK;
}

}  // namespace

extern "C" {

const char* obac_version(void) { return "0.1.0"; }

const char* obac_last_error(void) { return g_last_error.c_str(); }

const char* obac_status_name(obac_status s) {
  switch (s) {
    case OBAC_OK: return "ok";
    case OBAC_FAILED_CHECK: return "check failed";
    default: break;
  }
  if (s >= OBAC_ERR_CONFIG && s <= OBAC_ERR_INTERNAL) return obac::to_string(static_cast<obac::ErrorKind>(s));
  return "unknown";
}

void obac_string_free(char* s) { std::free(s); }

obac_status obac_set_log_level(obac_log_level level) {
  if (level < OBAC_LOG_DEBUG || level > OBAC_LOG_SILENT) return fail(OBAC_ERR_CONFIG, "invalid log level");
  obac::set_log_level(static_cast<obac::LogLevel>(level));
  return OBAC_OK;
}

obac_status obac_plan_new(obac_plan** out) {
  if (auto s = need(out, "out")) return s;
  return guarded([&] {
    *out = new obac_plan{{}, obac::ExperimentPlan::from_map({})};
    return OBAC_OK;
  });
}

obac_status obac_plan_parse(const char* text, obac_plan** out) {
  if (auto s = need(text, "text")) return s;
  if (auto s = need(out, "out")) return s;
  return guarded([&] {
    auto p = obac::ExperimentPlan::parse(text);
    *out = new obac_plan{p.to_map(), p};
    return OBAC_OK;
  });
}

obac_status obac_plan_load(const char* path, obac_plan** out) {
  if (auto s = need(path, "path")) return s;
  if (auto s = need(out, "out")) return s;
  return guarded([&] {
    auto p = obac::ExperimentPlan::load(path);
    *out = new obac_plan{p.to_map(), p};
    return OBAC_OK;
  });
}

void obac_plan_free(obac_plan* plan) { delete plan; }

obac_status obac_plan_set(obac_plan* plan, const char* key, const char* value) {
  if (auto s = need(plan, "plan")) return s;
  if (auto s = need(key, "key")) return s;
  if (auto s = need(value, "value")) return s;
  return guarded([&] {
    auto keys = plan->keys;
    keys[key] = value;
    auto p = obac::ExperimentPlan::from_map(keys);
    plan->keys = std::move(keys);
    plan->plan = std::move(p);
    return OBAC_OK;
  });
}

obac_status obac_plan_get(const obac_plan* plan, const char* key, char** value) {
  if (auto s = need(plan, "plan")) return s;
  if (auto s = need(key, "key")) return s;
  if (auto s = need(value, "value")) return s;
  return guarded([&] {
    const auto m = plan->plan.to_map();
    const auto it = m.find(key);
    if (it == m.end()) return fail(OBAC_ERR_LOOKUP, std::string("plan key '") + key + "' is not set");
    *value = dup(it->second);
    return OBAC_OK;
  });
}

obac_status obac_plan_serialize(const obac_plan* plan, char** text) {
  if (auto s = need(plan, "plan")) return s;
  if (auto s = need(text, "text")) return s;
  return guarded([&] {
    *text = dup(plan->plan.serialize());
    return OBAC_OK;
  });
}

obac_status obac_run_experiment(const obac_plan* plan, char** report_json) {
  if (auto s = need(plan, "plan")) return s;
  return guarded([&] {
    const auto r = obac::run_experiment(plan->plan);
    if (report_json) *report_json = dup(experiment_json(r).dump(2));
    return first_failure(r, OBAC_OK);
  });
}

obac_status obac_run_ablation(const obac_plan* plan, char** report_json) {
  if (auto s = need(plan, "plan")) return s;
  return guarded([&] {
    const auto r = obac::run_ablation_suite(plan->plan);
    json j;
    j["table"] = r.table_path;
    j["modes"] = json::array();
    obac_status st = OBAC_OK;
    for (const auto& m : r.modes) {
      j["modes"].push_back(experiment_json(m));
      st = first_failure(m, st);
    }
    if (report_json) *report_json = dup(j.dump(2));
    return st;
  });
}

obac_status obac_run_noise(const obac_plan* plan, const double* sigmas, size_t n_sigmas, char** report_json) {
  if (auto s = need(plan, "plan")) return s;
  if (n_sigmas > 0)
    if (auto s = need(sigmas, "sigmas")) return s;
  return guarded([&] {
    const auto r = obac::run_noise_suite(plan->plan, std::vector<double>(sigmas, sigmas + n_sigmas));
    json j;
    j["table"] = r.table_path;
    j["rows"] = json::array();
    obac_status st = OBAC_OK;
    for (const auto& row : r.rows) {
      j["rows"].push_back({{"variant", row.variant},
                           {"sigma", row.sigma},
                           {"performance", num(row.performance)},
                           {"decline_rate", row.decline ? json(*row.decline) : json("undefined")},
                           {"ok", row.ok}});
      if (!row.ok && st == OBAC_OK) st = fail(OBAC_ERR_NUMERIC, "a noise-suite run produced no checkpoint");
    }
    if (report_json) *report_json = dup(j.dump(2));
    return st;
  });
}

obac_status obac_run_motivating(const obac_plan* plan, char** report_json) {
  if (auto s = need(plan, "plan")) return s;
  return guarded([&] {
    const auto r = obac::run_motivating_example(plan->plan);
    std::ifstream in(r.report_path);
    json j = json::parse(in);
    j["report"] = r.report_path;
    if (report_json) *report_json = dup(j.dump(2));
    return r.run ? first_failure(*r.run, OBAC_OK) : OBAC_OK;
  });
}

obac_status obac_emit_curves(const char* run_dir, const uint64_t* seeds, size_t n_seeds, const char* metric,
                             char** csv_path) {
  if (auto s = need(run_dir, "run_dir")) return s;
  if (n_seeds > 0)
    if (auto s = need(seeds, "seeds")) return s;
  return guarded([&] {
    const auto path = obac::emit_learning_curves(run_dir, std::vector<std::uint64_t>(seeds, seeds + n_seeds),
                                                 metric ? metric : "eval_return_mean");
    if (csv_path) *csv_path = dup(path);
    return OBAC_OK;
  });
}

obac_status obac_tabular_verify(uint64_t seed, char** report_json) {
  return guarded([&] {
    obac::TabularSuiteOptions o;
    o.seed = seed;
    const auto results = obac::run_tabular_suite(o);
    json j = json::array();
    bool ok = true;
    std::string failed;
    for (const auto& r : results) {
      j.push_back({{"name", r.name},
                   {"passed", r.passed},
                   {"instances", r.instances},
                   {"worst", num(r.worst)},
                   {"detail", r.detail},
                   {"informational", r.informational}});
      if (!r.passed && !r.informational) {
        ok = false;
        failed += (failed.empty() ? "" : ", ") + r.name;
      }
    }
    if (report_json) *report_json = dup(json{{"seed", seed}, {"properties", j}, {"passed", ok}}.dump(2));
    return ok ? OBAC_OK : fail(OBAC_FAILED_CHECK, "tabular properties failed: " + failed);
  });
}

obac_status obac_tabular_offline_optimum(const char* fixture_path, char** report_json) {
  if (auto s = need(fixture_path, "fixture_path")) return s;
  return guarded([&] {
    const auto f = obac::load_tabular_fixture(fixture_path);
    if (!f.dataset) return fail(OBAC_ERR_CONFIG, std::string(fixture_path) + " has no dataset");
    const auto opt = obac::offline_optimal_policy(f.mdp, *f.dataset);
    json actions = json::array(), values = json::array(), covered = json::array();
    for (int s = 0; s < f.mdp.n_states; ++s) {
      actions.push_back(opt.policy.deterministic_action(s));
      values.push_back(opt.values.v[s]);
      covered.push_back(static_cast<bool>(opt.covered[s]));
    }
    const obac::Matrix q_star = obac::value_iteration(f.mdp);
    json v_star = json::array();
    for (int s = 0; s < f.mdp.n_states; ++s) v_star.push_back(q_star.row(s).maxCoeff());
    if (report_json)
      *report_json = dup(json{{"actions", actions}, {"v_mu", values}, {"v_star", v_star}, {"covered", covered}}.dump(2));
    return OBAC_OK;
  });
}

obac_status obac_agent_new(const obac_plan* plan, uint64_t seed, obac_agent** out) {
  if (auto s = need(plan, "plan")) return s;
  if (auto s = need(out, "out")) return s;
  return guarded([&] {
    auto* a = new obac_agent(obac::Agent(plan->plan.agent_config(seed)));
    a->agent.set_track_gate_soundness(plan->plan.track_gate);
    *out = a;
    return OBAC_OK;
  });
}

obac_status obac_agent_load(const char* checkpoint_path, obac_agent** out) {
  if (auto s = need(checkpoint_path, "checkpoint_path")) return s;
  if (auto s = need(out, "out")) return s;
  return guarded([&] {
    *out = new obac_agent(obac::Agent::load_checkpoint(checkpoint_path));
    return OBAC_OK;
  });
}

void obac_agent_free(obac_agent* agent) { delete agent; }

obac_status obac_agent_step(obac_agent* agent, int64_t env_steps) {
  if (auto s = need(agent, "agent")) return s;
  if (env_steps < 0) return fail(OBAC_ERR_CONFIG, "env_steps must be >= 0");
  return guarded([&] {
    for (int64_t i = 0; i < env_steps; ++i) agent->agent.env_step();
    return OBAC_OK;
  });
}

obac_status obac_agent_env_steps(const obac_agent* agent, int64_t* out) {
  if (auto s = need(agent, "agent")) return s;
  if (auto s = need(out, "out")) return s;
  *out = agent->agent.env_steps();
  return OBAC_OK;
}

obac_status obac_agent_save(const obac_agent* agent, const char* checkpoint_path) {
  if (auto s = need(agent, "agent")) return s;
  if (auto s = need(checkpoint_path, "checkpoint_path")) return s;
  return guarded([&] {
    agent->agent.save_checkpoint(checkpoint_path);
    return OBAC_OK;
  });
}

obac_status obac_agent_evaluate(const obac_agent* agent, int episodes, uint64_t seed, double* mean_return) {
  if (auto s = need(agent, "agent")) return s;
  if (auto s = need(mean_return, "mean_return")) return s;
  return guarded([&] {
    *mean_return = agent->agent.evaluate_now(episodes, seed).mean;
    return OBAC_OK;
  });
}

}  // extern "C"
