#include "obac/agent.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "obac/errors.hpp"
#include "obac/log.hpp"
#include "obac/serialization.hpp"

namespace obac {

namespace {

constexpr char kCheckpointMagic[8] = {'O', 'B', 'A', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

double parse_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || p != end || v.empty())
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  return x;
}

long parse_long(const std::string& key, const std::string& v) {
  long x = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || p != end || v.empty())
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || p != end || v.empty())
    throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

PolicyVariant parse_variant(const std::string& v) {
  if (v == "stochastic") return PolicyVariant::stochastic;
  if (v == "deterministic") return PolicyVariant::deterministic;
  throw ConfigError("config key 'policy': '" + v + "' (expected stochastic or deterministic)");
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config key '" + key + "' out of range: " + what);
}

RawConfig parse_canonical(const std::string& text) {
  RawConfig m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed configuration line in checkpoint");
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

void write_rng(BinaryWriter& w, const Rng& r) { w.str(r.state()); }
void read_rng(BinaryReader& r, Rng& rng) { rng.restore(r.str()); }

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) throw Error(ErrorKind::internal, "double formatting failed");
  return std::string(buf, p);
}

const std::vector<std::string>& agent_config_keys() {
  static const std::vector<std::string> keys = {
      "action_noise", "activation",     "actor_lr",     "adam_beta1",          "adam_beta2",   "adam_eps",
      "alpha_init",   "alpha_lr",       "auto_alpha",   "batch_size",          "buffer_capacity", "clip_q_mu",
      "clip_q_pi",    "critic_lr",      "env",          "eval_episodes",       "eval_interval", "exploration_noise",
      "gamma",        "gate",           "hidden_layers", "hidden_width",       "lambda",       "policy",
      "polyak",       "seed",           "target_entropy", "tau",               "updates_per_env_step", "v_pi_samples",
      "warmup_steps"};
  return keys;
}

RawConfig AgentConfig::to_map() const {
  RawConfig m;
  m["action_noise"] = format_double(action_noise);
  m["activation"] = to_string(activation);
  m["actor_lr"] = format_double(actor_lr);
  m["adam_beta1"] = format_double(adam_beta1);
  m["adam_beta2"] = format_double(adam_beta2);
  m["adam_eps"] = format_double(adam_eps);
  m["alpha_init"] = format_double(alpha_init);
  m["alpha_lr"] = format_double(alpha_lr);
  m["auto_alpha"] = auto_alpha ? "true" : "false";
  m["batch_size"] = std::to_string(batch_size);
  m["buffer_capacity"] = std::to_string(buffer_capacity);
  m["clip_q_mu"] = clip_q_mu ? "true" : "false";
  m["clip_q_pi"] = clip_q_pi ? "true" : "false";
  m["critic_lr"] = format_double(critic_lr);
  m["env"] = env;
  m["eval_episodes"] = std::to_string(eval_episodes);
  m["eval_interval"] = std::to_string(eval_interval);
  m["exploration_noise"] = format_double(exploration_noise);
  m["gamma"] = format_double(gamma);
  m["gate"] = to_string(gate);
  m["hidden_layers"] = std::to_string(hidden_layers);
  m["hidden_width"] = std::to_string(hidden_width);
  m["lambda"] = format_double(lambda);
  m["policy"] = policy == PolicyVariant::stochastic ? "stochastic" : "deterministic";
  m["polyak"] = format_double(polyak);
  m["seed"] = std::to_string(seed);
  m["target_entropy"] = std::isnan(target_entropy) ? "auto" : format_double(target_entropy);
  m["tau"] = format_double(tau);
  m["updates_per_env_step"] = std::to_string(updates_per_env_step);
  m["v_pi_samples"] = std::to_string(v_pi_samples);
  m["warmup_steps"] = std::to_string(warmup_steps);
  return m;
}

std::string AgentConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t AgentConfig::hash() const { return fnv1a64(canonical()); }

AgentConfig config_override(const AgentConfig& base, const RawConfig& overrides) {
  RawConfig m = base.to_map();
  for (const auto& [k, v] : overrides) {
    if (!m.count(k)) {
      std::string valid;
      for (const auto& key : agent_config_keys()) valid += (valid.empty() ? "" : ", ") + key;
      throw ConfigError("unknown config key '" + k + "' (valid keys: " + valid + ")");
    }
    m[k] = v;
  }
  return config_validate(m);
}

AgentConfig config_validate(const RawConfig& raw) {
  AgentConfig c;
  const auto& keys = agent_config_keys();
  for (const auto& [k, v] : raw) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      std::string valid;
      for (const auto& key : keys) valid += (valid.empty() ? "" : ", ") + key;
      throw ConfigError("unknown config key '" + k + "' (valid keys: " + valid + ")");
    }
    if (k == "action_noise") c.action_noise = parse_double(k, v);
    else if (k == "activation") {
      try {
        c.activation = parse_activation(v);
      } catch (const ConfigError& e) {
        throw ConfigError("config key 'activation': " + std::string(e.what()));
      }
    } else if (k == "actor_lr") c.actor_lr = parse_double(k, v);
    else if (k == "adam_beta1") c.adam_beta1 = parse_double(k, v);
    else if (k == "adam_beta2") c.adam_beta2 = parse_double(k, v);
    else if (k == "adam_eps") c.adam_eps = parse_double(k, v);
    else if (k == "alpha_init") c.alpha_init = parse_double(k, v);
    else if (k == "alpha_lr") c.alpha_lr = parse_double(k, v);
    else if (k == "auto_alpha") c.auto_alpha = parse_bool(k, v);
    else if (k == "batch_size") c.batch_size = static_cast<int>(parse_long(k, v));
    else if (k == "buffer_capacity") c.buffer_capacity = parse_long(k, v);
    else if (k == "clip_q_mu") c.clip_q_mu = parse_bool(k, v);
    else if (k == "clip_q_pi") c.clip_q_pi = parse_bool(k, v);
    else if (k == "critic_lr") c.critic_lr = parse_double(k, v);
    else if (k == "env") c.env = v;
    else if (k == "eval_episodes") c.eval_episodes = static_cast<int>(parse_long(k, v));
    else if (k == "eval_interval") c.eval_interval = parse_long(k, v);
    else if (k == "exploration_noise") c.exploration_noise = parse_double(k, v);
    else if (k == "gamma") c.gamma = parse_double(k, v);
    else if (k == "gate") {
      try {
        c.gate = parse_gate_mode(v);
      } catch (const ConfigError& e) {
        throw ConfigError("config key 'gate': " + std::string(e.what()));
      }
    } else if (k == "hidden_layers") c.hidden_layers = static_cast<int>(parse_long(k, v));
    else if (k == "hidden_width") c.hidden_width = static_cast<int>(parse_long(k, v));
    else if (k == "lambda") c.lambda = parse_double(k, v);
    else if (k == "policy") c.policy = parse_variant(v);
    else if (k == "polyak") c.polyak = parse_double(k, v);
    else if (k == "seed") c.seed = parse_u64(k, v);
    else if (k == "target_entropy") c.target_entropy = v == "auto" ? std::numeric_limits<double>::quiet_NaN()
                                                                    : parse_double(k, v);
    else if (k == "tau") c.tau = parse_double(k, v);
    else if (k == "updates_per_env_step") c.updates_per_env_step = static_cast<int>(parse_long(k, v));
    else if (k == "v_pi_samples") c.v_pi_samples = static_cast<int>(parse_long(k, v));
    else if (k == "warmup_steps") c.warmup_steps = parse_long(k, v);
  }

  const auto& envs = env_names();
  if (std::find(envs.begin(), envs.end(), c.env) == envs.end()) {
    std::string valid;
    for (const auto& e : envs) valid += (valid.empty() ? "" : ", ") + e;
    throw ConfigError("config key 'env': unknown environment '" + c.env + "' (valid: " + valid + ")");
  }
  require(c.gamma >= 0.0 && c.gamma < 1.0, "gamma", "must lie in [0, 1)");
  require(c.tau > 0.0 && c.tau < 1.0, "tau", "must lie in (0, 1)");
  require(c.lambda >= 0.0 && std::isfinite(c.lambda), "lambda", "must be >= 0");
  require(c.critic_lr > 0.0 && std::isfinite(c.critic_lr), "critic_lr", "must be > 0");
  require(c.actor_lr > 0.0 && std::isfinite(c.actor_lr), "actor_lr", "must be > 0");
  require(c.alpha_lr > 0.0 && std::isfinite(c.alpha_lr), "alpha_lr", "must be > 0");
  require(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0, "adam_beta1", "must lie in [0, 1)");
  require(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0, "adam_beta2", "must lie in [0, 1)");
  require(c.adam_eps > 0.0, "adam_eps", "must be > 0");
  require(c.batch_size >= 1, "batch_size", "must be >= 1");
  require(c.buffer_capacity >= 1, "buffer_capacity", "must be >= 1");
  require(c.hidden_width >= 1, "hidden_width", "must be >= 1");
  require(c.hidden_layers >= 1 && c.hidden_layers <= 16, "hidden_layers", "must lie in [1, 16]");
  require(c.warmup_steps >= 0, "warmup_steps", "must be >= 0");
  require(c.updates_per_env_step >= 1, "updates_per_env_step", "must be >= 1");
  require(c.eval_interval >= 1, "eval_interval", "must be >= 1");
  require(c.eval_episodes >= 1, "eval_episodes", "must be >= 1");
  require(c.polyak > 0.0 && c.polyak <= 1.0, "polyak", "must lie in (0, 1]");
  require(c.v_pi_samples >= 1, "v_pi_samples", "must be >= 1");
  require(c.alpha_init > 0.0 && std::isfinite(c.alpha_init), "alpha_init", "must be > 0");
  require(std::isnan(c.target_entropy) || std::isfinite(c.target_entropy), "target_entropy", "must be finite or auto");
  require(c.exploration_noise >= 0.0 && std::isfinite(c.exploration_noise), "exploration_noise", "must be >= 0");
  require(c.action_noise >= 0.0 && std::isfinite(c.action_noise), "action_noise", "must be >= 0");
  return c;
}

AgentStreams AgentStreams::from_seed(std::uint64_t seed) {
  return {derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3), derive_seed(seed, 4),
          derive_seed(seed, 5), derive_seed(seed, 6), derive_seed(seed, 7), derive_seed(seed, 8)};
}

EvalResult evaluate(const SquashedGaussianPolicy& policy, const std::string& env_name, double action_noise,
                    int episodes, std::uint64_t seed) {
  if (episodes < 1) throw ConfigError("evaluate needs episodes >= 1");
  EvalResult res;
  Rng unused;
  bool sparse = false;
  for (int i = 0; i < episodes; ++i) {
    const std::uint64_t ep_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    auto env = make_env(env_name, derive_seed(ep_seed, 1));
    if (action_noise > 0.0) env = wrap_action_noise(std::move(env), action_noise, derive_seed(ep_seed, 2));
    sparse = env->spec().reward_kind == RewardKind::sparse;
    Vector s = env->reset(ep_seed);
    double total = 0.0;
    bool success = false;
    while (true) {
      const auto a = policy.sample_action(s, unused, true);
      const auto r = env->step(a.env_action);
      total += r.reward;
      if (r.reward >= 1.0) success = true;
      s = r.next_state;
      if (r.terminated || r.truncated) break;
    }
    res.returns.push_back(total);
    res.successes.push_back(success);
  }
  const double n = static_cast<double>(episodes);
  for (double r : res.returns) res.mean += r;
  res.mean /= n;
  for (double r : res.returns) res.std += (r - res.mean) * (r - res.mean);
  res.std = std::sqrt(res.std / n);
  if (sparse) {
    res.success_rate = static_cast<double>(std::count(res.successes.begin(), res.successes.end(), true)) / n;
  } else {
    res.successes.clear();
  }
  return res;
}

Agent::Agent(AgentConfig config) : config_(config_validate(config.to_map())) {
  streams_ = AgentStreams::from_seed(config_.seed);
  env_ = make_env(config_.env, streams_.env);
  if (config_.action_noise > 0.0) env_ = wrap_action_noise(std::move(env_), config_.action_noise, streams_.noise);
  const auto& spec = env_->spec();
  const int sd = spec.state_dim, ad = spec.action_dim;
  const AdamConfig critic{config_.critic_lr, config_.adam_beta1, config_.adam_beta2, config_.adam_eps};
  const AdamConfig actor{config_.actor_lr, config_.adam_beta1, config_.adam_beta2, config_.adam_eps};
  const AdamConfig temp{config_.alpha_lr, config_.adam_beta1, config_.adam_beta2, config_.adam_eps};
  const auto hidden = config_.hidden();

  Rng init(streams_.init);
  policy_ = SquashedGaussianPolicy(sd, ad, spec.action_low, spec.action_high, hidden, config_.activation, init);
  actor_opt_ = AdamState(policy_.net, actor);
  q_pi_ = CriticPair(sd, ad, hidden, config_.activation, critic, init);
  q_pi_.clipped = config_.clip_q_pi;
  q_mu_ = CriticPair(sd, ad, hidden, config_.activation, critic, init);
  q_mu_.clipped = config_.clip_q_mu;
  v_mu_ = OfflineValueHead(sd, hidden, config_.activation, critic, ExpectileFactor(config_.tau), init);
  temp_.log_alpha = std::log(config_.alpha_init);
  temp_.target_entropy = std::isnan(config_.target_entropy) ? -static_cast<double>(ad) : config_.target_entropy;
  temp_.opt.config = temp;
  buffer_ = ReplayBuffer(sd, ad, static_cast<std::size_t>(config_.buffer_capacity), streams_.buffer);

  act_rng_ = Rng(streams_.act);
  env_rng_ = Rng(derive_seed(streams_.env, 1));
  update_rng_ = Rng(streams_.update);
  gate_rng_ = Rng(streams_.gate);
  begin_episode();
}

double Agent::alpha() const {
  if (config_.policy == PolicyVariant::deterministic) return 0.0;
  return temp_.alpha();
}

void Agent::begin_episode() { obs_ = env_->reset(env_rng_.next_u64()); }

Vector Agent::choose_action() {
  const auto& spec = env_->spec();
  if (env_steps_ < config_.warmup_steps) {
    Vector a(spec.action_dim);
    for (int i = 0; i < spec.action_dim; ++i) a[i] = act_rng_.uniform(spec.action_low[i], spec.action_high[i]);
    return a;
  }
  if (config_.policy == PolicyVariant::stochastic) return policy_.sample_action(obs_, act_rng_, false).env_action;
  const auto h = policy_.heads(Matrix(obs_));
  Matrix a = h.mean.array().tanh();
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    a(i, 0) = std::clamp(a(i, 0) + config_.exploration_noise * act_rng_.normal(), -1.0, 1.0);
  return policy_.scale(a).col(0);
}

void Agent::env_step() {
  const Vector a = choose_action();
  if (observer_) observer_(a);
  const StepResult r = env_->step(a);
  // The buffer stores the action the agent chose; execution noise stays hidden.
  buffer_.push({obs_, a, r.reward, r.next_state, r.terminated});
  ++env_steps_;
  obs_ = r.next_state;
  if (r.terminated || r.truncated) {
    ++episodes_;
    begin_episode();
  }
  if (env_steps_ >= std::max<long>(config_.warmup_steps, 1)) {
    for (int u = 0; u < config_.updates_per_env_step; ++u) {
      try {
        gradient_tick();
      } catch (const NumericError& e) {
        std::string where = " (env step " + std::to_string(env_steps_) + ", gradient step " +
                            std::to_string(grad_steps_) + ")";
        if (!snapshot_dir_.empty()) {
          const auto path = (std::filesystem::path(snapshot_dir_) / "numeric_failure.ckpt").string();
          try {
            save_checkpoint(path);
            where += "; snapshot written to " + path;
          } catch (const Error&) {
            where += "; snapshot could not be written";
          }
        }
        throw NumericError(std::string(e.what()) + where);
      }
    }
  }
}

TickStats Agent::gradient_tick() {
  if (buffer_.empty()) throw StateError("gradient tick on an empty buffer");
  Batch b = buffer_.sample_batch(config_.batch_size);
  b.actions = policy_.unscale(b.actions);
  const double a = alpha();
  const auto variant = config_.policy;

  // Gate inputs are frozen before any parameter moves in this tick.
  const Vector v_mu = v_mu_.value(b.states);
  const Vector v_pi = compute_v_pi(q_pi_, policy_, b.states, a, config_.v_pi_samples, variant, gate_rng_);

  TickStats st;
  st.loss_q_pi = update_q_pi(q_pi_, b, policy_, a, config_.gamma, variant, update_rng_);
  st.loss_q_mu = update_q_mu(q_mu_, v_mu_, b, config_.gamma);
  st.loss_v_mu = update_v_mu(v_mu_, q_mu_, b);
  const Vector gate = gate_vector(config_.gate, v_mu, v_pi);
  const auto pu =
      update_policy(policy_, actor_opt_, q_pi_, b, gate, a, config_.lambda, variant, update_rng_, track_gate_);
  st.loss_actor = pu.loss;
  st.gate_fraction = pu.gate_fraction;
  st.ungated_bc_grad_norm = pu.ungated_bc_grad_norm;
  if (variant == PolicyVariant::stochastic && config_.auto_alpha) update_temperature(temp_, pu.log_probs);
  q_pi_.update_targets(config_.polyak);
  q_mu_.update_targets(config_.polyak);
  ++grad_steps_;

  st.alpha = alpha();
  st.v_pi_mean = v_pi.mean();
  st.v_mu_mean = v_mu.mean();
  acc_.q_pi += st.loss_q_pi;
  acc_.q_mu += st.loss_q_mu;
  acc_.v_mu += st.loss_v_mu;
  acc_.actor += st.loss_actor;
  acc_.gate += st.gate_fraction;
  acc_.v_pi_mean += st.v_pi_mean;
  acc_.v_mu_mean += st.v_mu_mean;
  ++acc_.ticks;
  max_ungated_norm_ = std::max(max_ungated_norm_, st.ungated_bc_grad_norm);
  return st;
}

EvalResult Agent::evaluate_now(int episodes, std::uint64_t seed) const {
  return evaluate(policy_, config_.env, config_.action_noise, episodes, seed);
}

RunLogRow Agent::make_row() {
  RunLogRow row;
  row.env_step = env_steps_;
  const auto ev = evaluate_now(config_.eval_episodes, derive_seed(streams_.eval, static_cast<std::uint64_t>(rows_)));
  ++rows_;
  row.eval_return_mean = ev.mean;
  row.eval_return_std = ev.std;
  row.success_rate = ev.success_rate;
  if (acc_.ticks > 0) {
    const double n = static_cast<double>(acc_.ticks);
    row.loss_q_pi = acc_.q_pi / n;
    row.loss_q_mu = acc_.q_mu / n;
    row.loss_v_mu = acc_.v_mu / n;
    row.loss_actor = acc_.actor / n;
    row.gate_fraction = acc_.gate / n;
    row.v_pi_mean = acc_.v_pi_mean / n;
    row.v_mu_mean = acc_.v_mu_mean / n;
  }
  row.alpha = alpha();
  row.seed = config_.seed;
  row.run_id = run_id_;
  acc_ = Accumulator{};
  return row;
}

void Agent::train(long total_env_steps, const std::function<void(const RunLogRow&)>& on_row) {
  const auto start = std::chrono::steady_clock::now();
  while (env_steps_ < total_env_steps) {
    env_step();
    if (env_steps_ % config_.eval_interval == 0 || env_steps_ == total_env_steps) {
      RunLogRow row = make_row();
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      if (on_row) on_row(row);
    }
  }
}

void Agent::save_checkpoint(const std::string& path) const {
  BinaryWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(config_.hash());
  w.str(config_.canonical());
  policy_.net.serialize(w);
  actor_opt_.serialize(w);
  q_pi_.serialize(w);
  q_mu_.serialize(w);
  v_mu_.serialize(w);
  temp_.serialize(w);
  buffer_.serialize(w);
  write_rng(w, act_rng_);
  write_rng(w, env_rng_);
  write_rng(w, update_rng_);
  write_rng(w, gate_rng_);
  env_->save_state(w);
  w.vector(obs_);
  w.u64(static_cast<std::uint64_t>(env_steps_));
  w.u64(static_cast<std::uint64_t>(grad_steps_));
  w.u64(static_cast<std::uint64_t>(episodes_));
  w.u64(static_cast<std::uint64_t>(rows_));
  for (double x : {acc_.q_pi, acc_.q_mu, acc_.v_mu, acc_.actor, acc_.gate, acc_.v_pi_mean, acc_.v_mu_mean}) w.f64(x);
  w.u64(static_cast<std::uint64_t>(acc_.ticks));
  w.f64(max_ungated_norm_);
  w.str(run_id_);
  w.write_file(path);
}

namespace {

struct CheckpointHeader {
  std::uint64_t hash;
  AgentConfig config;
};

CheckpointHeader read_header(BinaryReader& r) {
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kCheckpointMagic)) throw FormatError("not an agent checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  CheckpointHeader h;
  h.hash = r.u64();
  const std::string canon = r.str();
  if (fnv1a64(canon) != h.hash) throw FormatError("checkpoint configuration hash does not match its contents");
  h.config = config_validate(parse_canonical(canon));
  return h;
}

}  // namespace

Agent Agent::load_checkpoint(const std::string& path, const AgentConfig& expected) {
  {
    auto r = BinaryReader::from_file(path);
    const auto h = read_header(r);
    if (h.hash != expected.hash()) {
      const auto a = h.config.to_map(), b = expected.to_map();
      std::string diff;
      for (const auto& [k, v] : a) {
        const auto it = b.find(k);
        if (it == b.end() || it->second != v)
          diff += (diff.empty() ? "" : ", ") + k + " (checkpoint " + v + ", requested " +
                  (it == b.end() ? "?" : it->second) + ")";
      }
      throw ConfigError("refusing checkpoint '" + path + "': configuration differs in " + diff);
    }
  }
  return load_checkpoint(path);
}

Agent Agent::load_checkpoint(const std::string& path) {
  auto r = BinaryReader::from_file(path);
  const auto h = read_header(r);
  Agent a(h.config);
  auto net = MlpParams::deserialize(r);
  if (!net.same_architecture(a.policy_.net)) throw FormatError("checkpoint policy architecture mismatch");
  a.policy_.net = std::move(net);
  a.actor_opt_ = AdamState::deserialize(r);
  a.q_pi_ = CriticPair::deserialize(r);
  a.q_mu_ = CriticPair::deserialize(r);
  a.v_mu_ = OfflineValueHead::deserialize(r);
  a.temp_ = TemperatureState::deserialize(r);
  a.buffer_ = ReplayBuffer::deserialize(r);
  read_rng(r, a.act_rng_);
  read_rng(r, a.env_rng_);
  read_rng(r, a.update_rng_);
  read_rng(r, a.gate_rng_);
  a.env_->load_state(r);
  a.obs_ = r.vector();
  a.env_steps_ = static_cast<long>(r.u64());
  a.grad_steps_ = static_cast<long>(r.u64());
  a.episodes_ = static_cast<long>(r.u64());
  a.rows_ = static_cast<long>(r.u64());
  for (double* x : {&a.acc_.q_pi, &a.acc_.q_mu, &a.acc_.v_mu, &a.acc_.actor, &a.acc_.gate, &a.acc_.v_pi_mean,
                    &a.acc_.v_mu_mean})
    *x = r.f64();
  a.acc_.ticks = static_cast<long>(r.u64());
  a.max_ungated_norm_ = r.f64();
  a.run_id_ = r.str();
  r.expect_end();
  if (!a.q_pi_.q1.same_architecture(a.q_mu_.q1) || a.obs_.size() != a.env_->spec().state_dim)
    throw FormatError("checkpoint payload does not match its configuration");
  return a;
}

}  // namespace obac
