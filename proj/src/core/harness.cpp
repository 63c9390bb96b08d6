#include "obac/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "obac/errors.hpp"
#include "obac/log.hpp"

namespace obac {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& field, const std::string& what) {
  if (field == "nan" || field.empty()) return kNaN;
  if (field == "inf") return std::numeric_limits<double>::infinity();
  if (field == "-inf") return -std::numeric_limits<double>::infinity();
  double x = 0.0;
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), x);
  if (ec != std::errc() || p != field.data() + field.size()) throw FormatError(what + ": bad number '" + field + "'");
  return x;
}

template <class Int>
Int to_int(const std::string& field, const std::string& what) {
  Int x{};
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), x);
  if (field.empty() || ec != std::errc() || p != field.data() + field.size())
    throw FormatError(what + ": bad integer '" + field + "'");
  return x;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json metric_json(const MetricSummary& m) { return {{"mean", num(m.mean)}, {"ci95", num(m.ci)}, {"n", m.n}}; }

bool sparse_env(const std::string& name) { return make_env(name, 0)->spec().reward_kind == RewardKind::sparse; }

std::string seed_dir_name(std::uint64_t seed) { return std::to_string(seed); }

}  // namespace

// ---------------------------------------------------------------------------
// RunLog

const std::vector<std::string>& runlog_columns() {
  static const std::vector<std::string> cols = {
      "env_step",   "wall_ms",    "eval_return_mean", "eval_return_std", "success_rate",
      "loss_q_pi",  "loss_q_mu",  "loss_v_mu",        "loss_actor",      "alpha",
      "gate_fraction", "v_pi_mean", "v_mu_mean",      "seed",            "run_id"};
  return cols;
}

std::string runlog_header() {
  std::string h;
  for (const auto& c : runlog_columns()) h += (h.empty() ? "" : ",") + c;
  return h;
}

std::string runlog_line(const RunLogRow& r, bool record_wall_clock) {
  if (r.run_id.find_first_of(",\n\r\"") != std::string::npos)
    throw FormatError("run_id must not contain commas, quotes or newlines");
  std::string s = std::to_string(r.env_step);
  s += "," + format_double(record_wall_clock ? r.wall_ms : 0.0);
  for (double x : {r.eval_return_mean, r.eval_return_std}) s += "," + format_double(x);
  s += "," + (std::isnan(r.success_rate) ? std::string() : format_double(r.success_rate));
  for (double x : {r.loss_q_pi, r.loss_q_mu, r.loss_v_mu, r.loss_actor, r.alpha, r.gate_fraction, r.v_pi_mean,
                   r.v_mu_mean})
    s += "," + format_double(x);
  s += "," + std::to_string(r.seed) + "," + r.run_id;
  return s;
}

RunLogWriter::RunLogWriter(const std::string& path, bool record_wall_clock)
    : path_(path), wall_clock_(record_wall_clock) {
  write_text(path_, std::string(kRunLogVersionLine) + "\n" + runlog_header() + "\n");
}

void RunLogWriter::append(const RunLogRow& row) {
  if (row.env_step <= last_step_)
    throw StateError("RunLog env_step must strictly increase (" + std::to_string(row.env_step) + " after " +
                     std::to_string(last_step_) + ")");
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path_);
  out << runlog_line(row, wall_clock_) << '\n';
  if (!out) throw IoError("write failed: " + path_);
  last_step_ = row.env_step;
}

std::vector<RunLogRow> read_runlog(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != kRunLogVersionLine)
    throw FormatError(path + ": missing or unsupported RunLog version line (expected '" +
                      std::string(kRunLogVersionLine) + "')");
  if (!std::getline(in, line) || line != runlog_header()) throw FormatError(path + ": RunLog header mismatch");
  std::vector<RunLogRow> rows;
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    const std::string where = path + ":" + std::to_string(lineno);
    if (f.size() != runlog_columns().size()) throw FormatError(where + ": wrong number of fields");
    RunLogRow r;
    r.env_step = to_int<long>(f[0], where);
    r.wall_ms = to_double(f[1], where);
    r.eval_return_mean = to_double(f[2], where);
    r.eval_return_std = to_double(f[3], where);
    r.success_rate = to_double(f[4], where);
    r.loss_q_pi = to_double(f[5], where);
    r.loss_q_mu = to_double(f[6], where);
    r.loss_v_mu = to_double(f[7], where);
    r.loss_actor = to_double(f[8], where);
    r.alpha = to_double(f[9], where);
    r.gate_fraction = to_double(f[10], where);
    r.v_pi_mean = to_double(f[11], where);
    r.v_mu_mean = to_double(f[12], where);
    r.seed = to_int<std::uint64_t>(f[13], where);
    r.run_id = f[14];
    if (!rows.empty() && r.env_step <= rows.back().env_step) throw FormatError(where + ": env_step not increasing");
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Plans

const std::vector<std::string>& plan_keys() {
  static const std::vector<std::string> keys = {"checkpoint_interval", "env",   "name",       "out",  "seeds",
                                                "sigma",               "steps", "track_gate", "wall_clock"};
  return keys;
}

RawConfig ExperimentPlan::to_map() const {
  RawConfig m;
  m["name"] = name;
  m["env"] = env;
  m["sigma"] = format_double(sigma);
  std::string s;
  for (auto x : seeds) s += (s.empty() ? "" : ",") + std::to_string(x);
  m["seeds"] = s;
  m["steps"] = std::to_string(steps);
  m["out"] = out;
  m["wall_clock"] = wall_clock ? "true" : "false";
  m["checkpoint_interval"] = std::to_string(checkpoint_interval);
  m["track_gate"] = track_gate ? "true" : "false";
  for (const auto& [k, v] : agent) m["agent." + k] = v;
  return m;
}

std::string ExperimentPlan::serialize() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + " = " + v + "\n";
  return out;
}

ExperimentPlan ExperimentPlan::from_map(const RawConfig& m) {
  ExperimentPlan p;
  auto parse_bool = [](const std::string& k, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("plan key '" + k + "': '" + v + "' is not a boolean");
  };
  auto parse_num = [](const std::string& k, const std::string& v) {
    try {
      return to_double(v, "plan key '" + k + "'");
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
  };
  auto parse_int = [](const std::string& k, const std::string& v) {
    try {
      return to_int<long>(v, "plan key '" + k + "'");
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
  };
  for (const auto& [k, v] : m) {
    if (k.rfind("agent.", 0) == 0) {
      const auto key = k.substr(6);
      if (key == "env" || key == "seed" || key == "action_noise")
        throw ConfigError("plan key '" + k + "' is set by the plan itself (use env, seeds or sigma)");
      p.agent[key] = v;
    } else if (k == "name") {
      p.name = v;
    } else if (k == "env") {
      p.env = v;
    } else if (k == "sigma") {
      p.sigma = parse_num(k, v);
    } else if (k == "seeds") {
      p.seeds.clear();
      for (const auto& part : split(v, ',')) {
        const auto t = trim(part);
        try {
          p.seeds.push_back(to_int<std::uint64_t>(t, "plan key 'seeds'"));
        } catch (const FormatError& e) {
          throw ConfigError(e.what());
        }
      }
    } else if (k == "steps") {
      p.steps = parse_int(k, v);
    } else if (k == "out") {
      p.out = v;
    } else if (k == "wall_clock") {
      p.wall_clock = parse_bool(k, v);
    } else if (k == "checkpoint_interval") {
      p.checkpoint_interval = parse_int(k, v);
    } else if (k == "track_gate") {
      p.track_gate = parse_bool(k, v);
    } else {
      std::string valid;
      for (const auto& key : plan_keys()) valid += (valid.empty() ? "" : ", ") + key;
      throw ConfigError("unknown plan key '" + k + "' (valid: " + valid + ", agent.<config key>)");
    }
  }
  p.validate();
  return p;
}

ExperimentPlan ExperimentPlan::parse(const std::string& text) {
  RawConfig m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("plan line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (m.count(key)) throw ConfigError("plan line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    m[key] = trim(line.substr(eq + 1));
  }
  return from_map(m);
}

ExperimentPlan ExperimentPlan::load(const std::string& path) { return parse(read_text(path)); }

void ExperimentPlan::validate() const {
  if (name.empty() || name.find("..") != std::string::npos) throw ConfigError("plan name must be a non-empty path");
  if (seeds.empty()) throw ConfigError("plan needs at least one seed");
  std::set<std::uint64_t> seen;
  for (auto s : seeds)
    if (!seen.insert(s).second) throw ConfigError("plan seeds must be distinct (" + std::to_string(s) + " repeats)");
  if (steps < 1) throw ConfigError("plan steps must be >= 1");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("plan sigma must be >= 0");
  if (checkpoint_interval < 0) throw ConfigError("plan checkpoint_interval must be >= 0");
  if (out.empty()) throw ConfigError("plan out must be non-empty");
  agent_config(seeds.front());
}

AgentConfig ExperimentPlan::agent_config(std::uint64_t seed) const {
  RawConfig o = agent;
  o["env"] = env;
  o["seed"] = std::to_string(seed);
  o["action_noise"] = format_double(sigma);
  return config_override(AgentConfig{}, o);
}

// ---------------------------------------------------------------------------
// Aggregation

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary m;
  m.n = static_cast<int>(values.size());
  if (values.empty()) return {kNaN, kNaN, 0};
  double sum = 0.0;
  for (double x : values) sum += x;
  m.mean = sum / m.n;
  if (m.n < 2) {
    m.ci = kNaN;
    return m;
  }
  double ss = 0.0;
  for (double x : values) ss += (x - m.mean) * (x - m.mean);
  m.ci = 1.96 * std::sqrt(ss / (m.n - 1)) / std::sqrt(static_cast<double>(m.n));
  return m;
}

std::vector<CheckpointSummary> aggregate_runs(const std::vector<SeedRun>& runs) {
  std::vector<const SeedRun*> ok;
  for (const auto& r : runs)
    if (r.ok) ok.push_back(&r);
  std::vector<CheckpointSummary> out;
  if (ok.empty()) return out;
  for (const auto& row : ok.front()->rows) {
    std::vector<const RunLogRow*> at;
    for (const auto* r : ok) {
      auto it = std::find_if(r->rows.begin(), r->rows.end(), [&](const RunLogRow& x) { return x.env_step == row.env_step; });
      if (it == r->rows.end()) break;
      at.push_back(&*it);
    }
    if (at.size() != ok.size()) continue;
    auto collect = [&](double RunLogRow::*f) {
      std::vector<double> v;
      for (const auto* x : at) v.push_back(x->*f);
      return summarize(v);
    };
    CheckpointSummary c;
    c.env_step = row.env_step;
    c.eval_return = collect(&RunLogRow::eval_return_mean);
    c.success_rate = collect(&RunLogRow::success_rate);
    c.gate_fraction = collect(&RunLogRow::gate_fraction);
    c.v_pi_mean = collect(&RunLogRow::v_pi_mean);
    c.v_mu_mean = collect(&RunLogRow::v_mu_mean);
    out.push_back(c);
  }
  return out;
}

bool ExperimentResult::all_ok() const {
  return !runs.empty() && std::all_of(runs.begin(), runs.end(), [](const SeedRun& r) { return r.ok; });
}

const CheckpointSummary& ExperimentResult::final_checkpoint() const {
  if (checkpoints.empty()) throw StateError("experiment in " + dir + " has no completed checkpoint");
  return checkpoints.back();
}

std::string summary_json(const ExperimentResult& r) {
  json j;
  j["format"] = "obac-summary v1";
  j["mode"] = r.mode;
  j["ci"] = "1.96 * sample_std / sqrt(n) over seeds";
  j["seeds"] = json::array();
  j["failed"] = json::array();
  for (const auto& s : r.runs) {
    if (s.ok) {
      j["seeds"].push_back(s.seed);
    } else {
      j["failed"].push_back({{"seed", s.seed}, {"error", s.error}, {"code", s.error_code}});
    }
  }
  j["checkpoints"] = json::array();
  for (const auto& c : r.checkpoints) {
    j["checkpoints"].push_back({{"env_step", c.env_step},
                                {"eval_return_mean", metric_json(c.eval_return)},
                                {"success_rate", metric_json(c.success_rate)},
                                {"gate_fraction", metric_json(c.gate_fraction)},
                                {"v_pi_mean", metric_json(c.v_pi_mean)},
                                {"v_mu_mean", metric_json(c.v_mu_mean)}});
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

json meta_json(const ExperimentPlan& plan, const AgentConfig& cfg, const std::string& mode, std::uint64_t seed,
               const std::string& run_id) {
  json j;
  j["format"] = "obac-meta v1";
  j["plan"] = plan.to_map();
  j["agent_config"] = cfg.to_map();
  j["config_hash"] = cfg.hash();
  j["mode"] = mode;
  j["seed"] = seed;
  j["run_id"] = run_id;
  j["status"] = "running";
  return j;
}

SeedRun run_seed(const ExperimentPlan& plan, const fs::path& mode_dir, const std::string& mode, std::uint64_t seed) {
  SeedRun run;
  run.seed = seed;
  const fs::path dir = mode_dir / seed_dir_name(seed);
  run.dir = dir.string();
  json meta;
  try {
    make_dirs(dir / "checkpoints");
    const AgentConfig cfg = plan.agent_config(seed);
    const std::string run_id = plan.name + "-" + mode + "-s" + std::to_string(seed);
    meta = meta_json(plan, cfg, mode, seed, run_id);
    write_text(dir / "meta.json", meta.dump(2) + "\n");

    Agent agent(cfg);
    agent.set_run_id(run_id);
    agent.set_snapshot_dir((dir / "checkpoints").string());
    agent.set_track_gate_soundness(plan.track_gate);
    RunLogWriter log((dir / "log.csv").string(), plan.wall_clock);
    std::ofstream timing(dir / "timing.csv", std::ios::binary | std::ios::trunc);
    if (!timing) throw IoError("cannot write " + (dir / "timing.csv").string());
    timing << "env_step,wall_ms\n";

    const auto start = std::chrono::steady_clock::now();
    while (agent.env_steps() < plan.steps) {
      agent.env_step();
      const long t = agent.env_steps();
      if (t % cfg.eval_interval == 0 || t == plan.steps) {
        RunLogRow row = agent.make_row();
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        log.append(row);
        timing << t << ',' << format_double(row.wall_ms) << '\n';
        timing.flush();
      }
      if (plan.checkpoint_interval > 0 && t % plan.checkpoint_interval == 0 && t != plan.steps)
        agent.save_checkpoint((dir / "checkpoints" / ("step_" + std::to_string(t) + ".ckpt")).string());
    }
    agent.save_checkpoint((dir / "checkpoints" / "final.ckpt").string());

    meta["status"] = "ok";
    meta["env_steps"] = agent.env_steps();
    meta["gradient_steps"] = agent.gradient_steps();
    meta["episodes"] = agent.episodes();
    if (plan.track_gate) meta["ungated_bc_grad_norm_max"] = agent.max_ungated_bc_grad_norm();
    write_text(dir / "meta.json", meta.dump(2) + "\n");
    run.rows = read_runlog((dir / "log.csv").string());
    run.ok = true;
  } catch (const Error& e) {
    run.error = e.what();
    run.error_code = static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    run.error = e.what();
    run.error_code = static_cast<int>(ErrorKind::internal);
  }
  if (!run.ok) {
    log_warning("seed " + std::to_string(seed) + " failed: " + run.error);
    try {
      if (meta.is_null()) meta = json::object();
      meta["status"] = "failed";
      meta["error"] = run.error;
      meta["error_code"] = run.error_code;
      write_text(dir / "meta.json", meta.dump(2) + "\n");
    } catch (const Error&) {
      // directory itself may be unwritable; the summary still records the failure
    }
  }
  return run;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan) {
  plan.validate();
  ExperimentResult res;
  res.mode = to_string(plan.agent_config(plan.seeds.front()).gate);
  const fs::path mode_dir = fs::path(plan.out) / plan.name / res.mode;
  res.dir = mode_dir.string();
  make_dirs(mode_dir);
  for (auto seed : plan.seeds) {
    log_info("run " + plan.name + "/" + res.mode + " seed " + std::to_string(seed));
    res.runs.push_back(run_seed(plan, mode_dir, res.mode, seed));
  }
  res.checkpoints = aggregate_runs(res.runs);
  write_text(mode_dir / "summary.json", summary_json(res));
  return res;
}

AblationResult run_ablation_suite(const ExperimentPlan& base) {
  base.validate();
  AblationResult out;
  for (const char* mode : {"adaptive", "fixed_on", "off"}) {
    ExperimentPlan p = base;
    p.agent["gate"] = mode;
    out.modes.push_back(run_experiment(p));
  }
  const fs::path root = fs::path(base.out) / base.name;
  std::string table =
      "mode,seeds_ok,seeds_failed,final_env_step,eval_return_mean,eval_return_ci95,success_rate_mean,"
      "success_rate_ci95,gate_fraction_mean\n";
  std::string traces = "mode,env_step,gate_fraction_mean,gate_fraction_ci95\n";
  for (const auto& m : out.modes) {
    long n_ok = std::count_if(m.runs.begin(), m.runs.end(), [](const SeedRun& r) { return r.ok; });
    table += m.mode + "," + std::to_string(n_ok) + "," + std::to_string(static_cast<long>(m.runs.size()) - n_ok);
    if (m.checkpoints.empty()) {
      table += ",,,,,,\n";
    } else {
      const auto& f = m.checkpoints.back();
      double g = 0.0;
      int gn = 0;
      for (const auto& c : m.checkpoints) {
        if (std::isfinite(c.gate_fraction.mean)) {
          g += c.gate_fraction.mean;
          ++gn;
        }
        traces += m.mode + "," + std::to_string(c.env_step) + "," + format_double(c.gate_fraction.mean) + "," +
                  format_double(c.gate_fraction.ci) + "\n";
      }
      table += "," + std::to_string(f.env_step) + "," + format_double(f.eval_return.mean) + "," +
               format_double(f.eval_return.ci) + "," + format_double(f.success_rate.mean) + "," +
               format_double(f.success_rate.ci) + "," + format_double(gn ? g / gn : kNaN) + "\n";
    }
  }
  write_text(root / "ablation.csv", table);
  write_text(root / "gate_fraction.csv", traces);
  out.table_path = (root / "ablation.csv").string();
  return out;
}

std::optional<double> decline_rate(double perf0, double perf) {
  if (!(perf0 > 0.0) || !std::isfinite(perf)) return std::nullopt;
  return (perf0 - perf) / perf0;
}

std::string decline_table_csv(const std::vector<NoiseRow>& rows) {
  std::string s = "variant,sigma,performance,decline_rate,decline_pct\n";
  for (const auto& r : rows) {
    s += r.variant + "," + format_double(r.sigma) + "," + (r.ok ? format_double(r.performance) : "failed") + ",";
    if (r.decline) {
      char pct[32];
      std::snprintf(pct, sizeof pct, "%.2f%%", 100.0 * *r.decline);
      s += format_double(*r.decline) + "," + pct;
    } else {
      s += "undefined,undefined";
    }
    s += "\n";
  }
  return s;
}

NoiseResult run_noise_suite(const ExperimentPlan& base, const std::vector<double>& sigmas) {
  base.validate();
  if (std::find(sigmas.begin(), sigmas.end(), 0.0) == sigmas.end())
    throw ConfigError("noise suite sigma list must include 0");
  std::set<double> seen;
  for (double s : sigmas) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("noise sigma must be >= 0");
    if (!seen.insert(s).second) throw ConfigError("noise sigmas must be distinct");
  }
  std::vector<double> order(seen.begin(), seen.end());
  const bool sparse = sparse_env(base.env);
  NoiseResult out;
  for (const auto& [variant, gate] : {std::pair<std::string, std::string>{"obac", "adaptive"}, {"sac", "off"}}) {
    double perf0 = kNaN;
    for (double sigma : order) {
      ExperimentPlan p = base;
      p.sigma = sigma;
      p.name = base.name + "/sigma_" + format_double(sigma);
      p.agent["gate"] = gate;
      const auto res = run_experiment(p);
      NoiseRow row{variant, sigma, kNaN, std::nullopt, !res.checkpoints.empty()};
      if (row.ok) {
        const auto& f = res.final_checkpoint();
        row.performance = sparse ? f.success_rate.mean : f.eval_return.mean;
      }
      if (sigma == 0.0) perf0 = row.performance;
      if (row.ok) row.decline = decline_rate(perf0, row.performance);
      out.rows.push_back(row);
    }
  }
  const fs::path root = fs::path(base.out) / base.name;
  make_dirs(root);
  write_text(root / "decline.csv", decline_table_csv(out.rows));
  out.table_path = (root / "decline.csv").string();
  return out;
}

// ---------------------------------------------------------------------------
// Motivating example

namespace {

void chain_study(const ExperimentPlan& plan, MotivatingResult& res) {
  const fs::path root = fs::path(plan.out) / plan.name;
  make_dirs(root);
  const AgentConfig cfg = plan.agent_config(plan.seeds.front());
  const auto streams = AgentStreams::from_seed(cfg.seed);
  auto env_ptr = make_env("chain-mdp", streams.env);
  auto* env = dynamic_cast<TabularEnv*>(env_ptr.get());
  const TabularMdp& mdp = env->mdp();
  const auto online = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
  Rng act(streams.act), resets(derive_seed(streams.env, 1));

  std::vector<TabularTransition> log;
  std::string trace = "step,state,v_pi,v_mu_exact,v_mu_fit,v_star,covered\n";
  env->reset(resets.next_u64());
  res.fit_tolerance = kMotivatingFitTolerance;
  bool dominated = true;
  for (long t = 1; t <= plan.steps; ++t) {
    const int s = env->current_state();
    const int a = static_cast<int>(act.index(static_cast<std::size_t>(mdp.n_actions)));
    // Bin centre of action a on the [-1, 1] interface.
    Vector u(1);
    u[0] = -1.0 + (2.0 * a + 1.0) / mdp.n_actions;
    if (env->discretize(u[0]) != a) throw Error(ErrorKind::internal, "chain action binning mismatch");
    const auto r = env->step(u);
    log.push_back({s, a, r.reward, env->current_state(), r.terminated});
    if (r.terminated || r.truncated) env->reset(resets.next_u64());

    if (t % cfg.eval_interval == 0 || t == plan.steps) {
      auto cp = motivating_checkpoint(mdp, online, log, kMotivatingTau, t);
      for (int st = 0; st < mdp.n_states; ++st) {
        const bool cov = std::find(cp.probes.begin(), cp.probes.end(), st) != cp.probes.end();
        trace += std::to_string(t) + "," + std::to_string(st) + "," + format_double(cp.v_pi[st]) + "," +
                 format_double(cp.v_mu_exact[st]) + "," + format_double(cp.v_mu_fit[st]) + "," +
                 format_double(cp.v_star[st]) + "," + (cov ? "1" : "0") + "\n";
      }
      if (cp.full_coverage) {
        if (res.coverage_step < 0) res.coverage_step = t;
        dominated = dominated && cp.offline_dominates;
        for (int st : cp.probes)
          res.max_fit_error = std::max(res.max_fit_error, std::abs(cp.v_mu_fit[st] - cp.v_mu_exact[st]));
      }
      res.checkpoints.push_back(std::move(cp));
    }
  }
  res.dominates_after_coverage = res.coverage_step >= 0 && dominated;
  write_text(root / "chain_trace.csv", trace);

  json j;
  j["format"] = "obac-motivating v1";
  j["env"] = "chain-mdp";
  j["plan"] = plan.to_map();
  j["online_policy"] = "uniform";
  j["expectile_tau"] = kMotivatingTau;
  j["coverage_step"] = res.coverage_step;
  j["offline_dominates_after_coverage"] = res.dominates_after_coverage;
  j["max_fit_error"] = num(res.max_fit_error);
  j["fit_tolerance"] = res.fit_tolerance;
  j["fit_within_tolerance"] = res.coverage_step >= 0 && res.max_fit_error <= res.fit_tolerance;
  write_text(root / "motivating.json", j.dump(2) + "\n");
  res.report_path = (root / "motivating.json").string();
}

}  // namespace

MotivatingResult run_motivating_example(const ExperimentPlan& plan) {
  plan.validate();
  MotivatingResult res;
  if (plan.env == "chain-mdp") {
    chain_study(plan, res);
    return res;
  }
  ExperimentPlan p = plan;
  p.agent["gate"] = "off";
  res.run = run_experiment(p);

  MotivatingWindow cur;
  bool open = false;
  for (const auto& c : res.run->checkpoints) {
    const bool above = std::isfinite(c.v_mu_mean.mean) && std::isfinite(c.v_pi_mean.mean) &&
                       c.v_mu_mean.mean > c.v_pi_mean.mean;
    if (above) {
      if (!open) cur = {c.env_step, c.env_step, 0};
      open = true;
      cur.last_step = c.env_step;
      ++cur.rows;
    } else if (open) {
      res.windows.push_back(cur);
      open = false;
    }
  }
  if (open) res.windows.push_back(cur);

  const fs::path root = fs::path(plan.out) / plan.name;
  json j;
  j["format"] = "obac-motivating v1";
  j["env"] = plan.env;
  j["plan"] = p.to_map();
  j["trace"] = (fs::path(res.run->dir)).string();
  j["windows"] = json::array();
  for (const auto& w : res.windows)
    j["windows"].push_back({{"first_env_step", w.first_step}, {"last_env_step", w.last_step}, {"rows", w.rows}});
  j["v_mu_exceeds_v_pi"] = !res.windows.empty();
  write_text(root / "motivating.json", j.dump(2) + "\n");
  res.report_path = (root / "motivating.json").string();
  return res;
}

// ---------------------------------------------------------------------------
// Curves

std::string emit_learning_curves(const std::string& run_dir, const std::vector<std::uint64_t>& expected_seeds,
                                 const std::string& metric) {
  double RunLogRow::*field = nullptr;
  if (metric == "eval_return_mean") field = &RunLogRow::eval_return_mean;
  else if (metric == "success_rate") field = &RunLogRow::success_rate;
  else if (metric == "gate_fraction") field = &RunLogRow::gate_fraction;
  else if (metric == "v_pi_mean") field = &RunLogRow::v_pi_mean;
  else if (metric == "v_mu_mean") field = &RunLogRow::v_mu_mean;
  else
    throw ConfigError("unknown curve metric '" + metric +
                      "' (valid: eval_return_mean, success_rate, gate_fraction, v_pi_mean, v_mu_mean)");

  const fs::path root(run_dir);
  if (!fs::is_directory(root)) throw LookupError("run directory not found: " + run_dir);
  std::vector<std::string> modes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) modes.push_back(e.path().filename().string());
  std::sort(modes.begin(), modes.end());

  std::vector<std::string> missing;
  std::string csv = "series,x,y,y_lo,y_hi\n";
  int series = 0;
  for (const auto& mode : modes) {
    std::map<std::uint64_t, fs::path> logs;
    for (const auto& e : fs::directory_iterator(root / mode)) {
      if (!e.is_directory()) continue;
      const auto name = e.path().filename().string();
      std::uint64_t seed = 0;
      auto [p, ec] = std::from_chars(name.data(), name.data() + name.size(), seed);
      if (ec != std::errc() || p != name.data() + name.size()) continue;
      if (fs::exists(e.path() / "log.csv")) logs[seed] = e.path() / "log.csv";
    }
    if (logs.empty() && expected_seeds.empty()) continue;
    for (auto s : expected_seeds)
      if (!logs.count(s)) missing.push_back(mode + "/" + std::to_string(s) + "/log.csv");
    if (!missing.empty()) continue;

    std::vector<SeedRun> runs;
    for (const auto& [seed, path] : logs) {
      if (!expected_seeds.empty() &&
          std::find(expected_seeds.begin(), expected_seeds.end(), seed) == expected_seeds.end())
        continue;
      SeedRun r;
      r.seed = seed;
      r.dir = path.parent_path().string();
      r.rows = read_runlog(path.string());
      r.ok = true;
      runs.push_back(std::move(r));
    }
    // Steps reached by every seed, in the first seed's order.
    for (const auto& row : runs.front().rows) {
      std::vector<double> v;
      for (const auto& r : runs) {
        auto it = std::find_if(r.rows.begin(), r.rows.end(), [&](const RunLogRow& x) { return x.env_step == row.env_step; });
        if (it == r.rows.end()) break;
        v.push_back((*it).*field);
      }
      if (v.size() != runs.size()) continue;
      const auto m = summarize(v);
      const double half = std::isnan(m.ci) ? 0.0 : m.ci;
      csv += mode + "," + std::to_string(row.env_step) + "," + format_double(m.mean) + "," +
             format_double(m.mean - half) + "," + format_double(m.mean + half) + "\n";
    }
    ++series;
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw LookupError("missing runs under " + run_dir + ": " + list);
  }
  if (series == 0) throw LookupError("no runs found under " + run_dir);
  const auto out = (root / "curves.csv").string();
  write_text(out, csv);
  return out;
}

}  // namespace obac
