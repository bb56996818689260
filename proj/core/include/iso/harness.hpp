#pragma once

// Experiment sweeps over sampled systems, behavior types and connection factors.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iso/mdp.hpp"
#include "iso/optimizer.hpp"
#include "iso/rng.hpp"

namespace iso {

struct SampledSystem {
  FiniteMdp mdp;
  RewardModel reward;
};

/// Uniform successor sets, Dirichlet(1) rows and start distribution, and exactly
/// round(density * n_states) rewarding states with one-hot features.
SampledSystem sample_system(int n_states, int n_actions, int cf, double density, double gamma, Rng& rng);

/// One column of the behavior grid.
struct BehaviorCell {
  BehaviorSpec behavior;
  Recoverer recoverer = Recoverer::MaxEnt;

  /// "optimal:0:maxent" style text used in config files.
  std::string key() const;
  friend bool operator==(const BehaviorCell& a, const BehaviorCell& b) {
    return a.behavior.kind == b.behavior.kind && a.behavior.nf == b.behavior.nf && a.recoverer == b.recoverer;
  }
};

BehaviorCell parse_behavior_cell(const std::string& text);

struct ExperimentConfig {
  int n_systems = 40;
  int n_states = 64;
  int n_actions = 4;
  std::vector<int> cf{2, 8, 32};
  double gamma = 0.9;
  double reward_density = 0.25;
  std::vector<BehaviorCell> behaviors = default_behaviors();
  IsoConfig iso;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs";
  int threads = 1;
  /// When false the elapsed_ms column is written as 0 so repeated runs are byte-identical.
  bool record_timing = false;

  static std::vector<BehaviorCell> default_behaviors();
  /// 40 systems, 15000 trajectories, 100 iterations, cf {2, 8, 32}.
  static ExperimentConfig paper();
  /// 10 systems, 2000 trajectories, 30 iterations, cf {2}.
  static ExperimentConfig desk();

  void check() const;
};

/// Plain `key = value` lines, `#` comments; keys are the leaf field names
/// (n_systems, cf, behaviors, max_outer_iters, n_trajectories, learning_rate, ...).
/// Unset keys keep the value from `base`.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
std::string format_config(const ExperimentConfig& cfg);

/// seed_i = hash(master_seed, i)
std::uint64_t system_seed(std::uint64_t master_seed, int system_id);
SampledSystem sample_experiment_system(const ExperimentConfig& cfg, int system_id, int cf);

struct CellResult {
  int system_id = 0;
  int cf = 0;
  BehaviorCell cell;
  std::uint64_t seed = 0;
  std::vector<IterationRecord> trace;
  std::optional<std::string> error;

  double initial_value() const { return trace.front().expected_value_true; }
  double final_value() const { return trace.back().expected_value_true; }
  /// First iteration that reaches 90% of the total change; 0 when nothing changed.
  int plateau_iteration() const;
};

struct CurvePoint {
  int cf = 0;
  BehaviorCell cell;
  int iteration = 0;
  int n_systems = 0;
  double mean = 0.0;
  double p10 = 0.0;
  double p90 = 0.0;
};

struct RunSummary {
  std::vector<CellResult> cells;
  std::vector<CurvePoint> curves;

  std::vector<const CellResult*> select(int cf, const BehaviorCell& cell) const;
};

/// Runs every (cf, system, behavior) cell, concurrently when cfg.threads > 1, and writes
/// iterations.csv, summary.csv, curves.csv, per-cell CSVs and optimized systems into
/// cfg.out_dir (skipped when out_dir is empty). Failed cells are recorded, never fatal.
RunSummary run_experiment(const ExperimentConfig& cfg);

/// Mean and central 80% band per iteration; shorter traces carry their last value.
std::vector<CurvePoint> aggregate_curves(const std::vector<CellResult>& cells);

inline constexpr const char* kIterationCsvHeader =
    "system_id,cf,behavior,nf,recoverer,iteration,expected_value_true,pearson_r,spearman_r,elapsed_ms,seed";

std::string format_iterations_csv(const std::vector<CellResult>& cells, bool record_timing);
std::string format_summary_csv(const std::vector<CellResult>& cells);
std::string format_curves_csv(const std::vector<CurvePoint>& curves);

struct ReportRow {
  std::string behavior;
  std::string nf;
  std::string recoverer;
  int cf = 0;
  int n_systems = 0;
  double median_initial = 0.0;
  double median_final = 0.0;
  /// Median over systems of (final - initial) / initial, in percent.
  double median_improvement_pct = 0.0;
};

struct ReportTable {
  std::vector<ReportRow> rows;
  /// One entry per unreadable or malformed CSV file.
  std::vector<std::string> errors;
};

/// Aggregates every per-iteration CSV directly inside `dir` and writes report.csv there
/// when at least one row was produced.
ReportTable report(const std::filesystem::path& dir);
std::string format_report(const ReportTable& table);

/// Linear-interpolation quantile of an unsorted sample.
double quantile(std::vector<double> xs, double q);
double median(std::vector<double> xs);

}  // namespace iso
