#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "obac/agent.hpp"
#include "obac/tabular_oracle.hpp"

namespace obac {

// ---------------------------------------------------------------------------
// RunLog CSV

/// First line of every log.csv; bump the version when columns change.
inline constexpr const char* kRunLogVersionLine = "# obac-runlog v1";
const std::vector<std::string>& runlog_columns();

/// Append-only CSV writer. env_step must strictly increase.
class RunLogWriter {
 public:
  RunLogWriter(const std::string& path, bool record_wall_clock);
  void append(const RunLogRow& row);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  bool wall_clock_;
  long last_step_ = -1;
};

std::string runlog_header();
std::string runlog_line(const RunLogRow& row, bool record_wall_clock);
/// Parses a log.csv; rejects a missing or different version line or header.
std::vector<RunLogRow> read_runlog(const std::string& path);

// ---------------------------------------------------------------------------
// Plans

/// Flat key=value experiment description. Agent hyperparameters are given
/// with an "agent." prefix, e.g. "agent.lambda = 0.01".
struct ExperimentPlan {
  std::string name = "experiment";
  std::string env = "pendulum";
  double sigma = 0.0;
  RawConfig agent;  // overrides without the prefix
  std::vector<std::uint64_t> seeds{0};
  long steps = 30000;
  std::string out = "runs";
  /// Record real wall-clock times in log.csv (otherwise 0; timing.csv always has them).
  bool wall_clock = false;
  /// Also checkpoint every this many env steps (0: final checkpoint only).
  long checkpoint_interval = 0;
  /// Measure the behaviour-cloning gradient on ungated states every tick.
  bool track_gate = false;

  /// Throws ConfigError on duplicate seeds or invalid agent overrides.
  void validate() const;
  RawConfig to_map() const;
  std::string serialize() const;
  static ExperimentPlan from_map(const RawConfig& m);
  static ExperimentPlan parse(const std::string& text);
  static ExperimentPlan load(const std::string& path);

  /// Agent config for one seed: plan env, sigma and overrides on the default config.
  AgentConfig agent_config(std::uint64_t seed) const;

  friend bool operator==(const ExperimentPlan&, const ExperimentPlan&) = default;
};

const std::vector<std::string>& plan_keys();

// ---------------------------------------------------------------------------
// Experiments

struct SeedRun {
  std::uint64_t seed = 0;
  std::string dir;
  bool ok = false;
  std::string error;
  int error_code = 0;
  std::vector<RunLogRow> rows;
};

struct MetricSummary {
  double mean = 0.0;
  /// 1.96 * sample std / sqrt(n); NaN for n < 2.
  double ci = 0.0;
  int n = 0;
};
MetricSummary summarize(const std::vector<double>& values);

struct CheckpointSummary {
  long env_step = 0;
  MetricSummary eval_return, success_rate, gate_fraction, v_pi_mean, v_mu_mean;
};

struct ExperimentResult {
  std::string dir;  // <out>/<name>/<mode>
  std::string mode;
  std::vector<SeedRun> runs;
  std::vector<CheckpointSummary> checkpoints;  // steps reached by every surviving seed
  bool all_ok() const;
  const CheckpointSummary& final_checkpoint() const;
};

/// One agent per seed, each under <out>/<name>/<mode>/<seed>/ with log.csv,
/// timing.csv, meta.json and checkpoints/. Writes summary.json next to the
/// seed directories. A seed that throws is recorded and the others continue.
ExperimentResult run_experiment(const ExperimentPlan& plan);

/// Aggregates completed seed directories (used by run_experiment and curves).
std::vector<CheckpointSummary> aggregate_runs(const std::vector<SeedRun>& runs);
std::string summary_json(const ExperimentResult& result);

struct AblationResult {
  std::vector<ExperimentResult> modes;  // adaptive, fixed_on, off
  std::string table_path;
};

/// Runs the plan under the three gate modes with shared seeds; writes
/// ablation.csv (side-by-side final metrics) and gate_fraction.csv traces.
AblationResult run_ablation_suite(const ExperimentPlan& base);

/// Relative drop (perf0 - perf) / perf0; empty when perf0 <= 0.
std::optional<double> decline_rate(double perf0, double perf);

struct NoiseRow {
  std::string variant;  // "obac" or "sac"
  double sigma = 0.0;
  double performance = 0.0;  // final success rate (sparse) or return (dense)
  std::optional<double> decline;
  bool ok = true;
};

struct NoiseResult {
  std::vector<NoiseRow> rows;
  std::string table_path;
};

/// OBAC (adaptive gate) and the SAC reduction (gate off) at every sigma.
NoiseResult run_noise_suite(const ExperimentPlan& base, const std::vector<double>& sigmas);
std::string decline_table_csv(const std::vector<NoiseRow>& rows);

struct MotivatingWindow {
  long first_step = 0;
  long last_step = 0;
  int rows = 0;
};

struct MotivatingResult {
  std::string report_path;
  // chain-mdp study
  std::vector<MotivatingCheckpoint> checkpoints;
  long coverage_step = -1;                  // first checkpoint with full coverage
  bool dominates_after_coverage = false;    // every checkpoint from coverage_step on
  double max_fit_error = 0.0;               // |v_mu_fit - v_mu_exact| after coverage
  double fit_tolerance = 0.0;
  // neural study
  std::optional<ExperimentResult> run;
  std::vector<MotivatingWindow> windows;    // contiguous rows with v_mu_mean > v_pi_mean
};

/// env "chain-mdp": a uniform-random online actor logs transitions; at every
/// checkpoint the exact offline optimum and an expectile fit are computed from
/// the log alone. Any other env: trains the SAC reduction (gate off) and
/// reports windows where the concurrently fitted V^mu exceeds V^pi.
MotivatingResult run_motivating_example(const ExperimentPlan& plan);

/// Expectile factor and tolerance of the tabular motivating study.
inline constexpr double kMotivatingTau = 0.999;
inline constexpr double kMotivatingFitTolerance = 0.05;

/// Reads <run_dir>/<mode>/<seed>/log.csv for every mode directory and writes
/// <run_dir>/curves.csv with columns series,x,y,y_lo,y_hi. `expected_seeds`
/// lists seeds that must be present (errors name the absences); empty means
/// whatever is found, which must be at least one run.
std::string emit_learning_curves(const std::string& run_dir, const std::vector<std::uint64_t>& expected_seeds = {},
                                 const std::string& metric = "eval_return_mean");

}  // namespace obac
