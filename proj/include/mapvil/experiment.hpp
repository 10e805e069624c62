#pragma once

#include "mapvil/config.hpp"
#include "mapvil/observability.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mapvil {

/// Simulation of Monte Carlo run `run` (seed cfg.seed + run). Every variant
/// of the same run sees the same data.
Simulation simulate_run(const ExperimentConfig &cfg, int run);

/// Truth trajectory (truth.tum), IMU samples (imu.csv), both map bundles
/// (map_truth/, map_noisy/) and the local landmarks (local_features.txt).
void write_simulation(const Simulation &sim, const std::filesystem::path &dir);

struct TimedRun {
  RunRecord record;
  double wall_seconds = 0.0;
};

using ProgressFn = std::function<void(const std::string &variant, std::uint64_t seed, int done, int total)>;

/// All (variant, run) pairs on a worker pool. Output order is run-major,
/// then the configured variant order, independent of scheduling.
std::vector<TimedRun> run_campaign(const ExperimentConfig &cfg, const ProgressFn &progress = {});

/// Aggregates of one variant. NaN marks quantities the variant does not have.
struct VariantSummary {
  std::string variant;
  ErrorChart chart = ErrorChart::Invariant;
  MapMode mode = MapMode::Imperfect;
  int runs = 0;
  double rmse_orientation = 0, rmse_position = 0, rmse_rel_orientation = 0, rmse_rel_position = 0;
  double nees_orientation = 0, nees_position = 0, nees_pose = 0, nees_rel_orientation = 0, nees_rel_position = 0;
  double ate_local = 0, ate_map = 0;
  int nees_skipped = 0, nees_regularized = 0;
  int map_updates = 0, map_gated = 0, msckf_updates = 0;
  std::vector<RpeResult> rpe;
};

/// Groups records by variant (first-appearance order) and evaluates them.
std::vector<VariantSummary> summarize(const std::vector<RunRecord> &records, const MetricOptions &opt);

/// Writes config.ini, summary.csv, rpe.csv, rpe_errors.csv, traces/ and
/// runs/<variant>/seed_<seed>/{record.csv, est.tum, truth.tum, timing.txt}.
/// Only timing.txt depends on the wall clock.
void write_artifacts(const ExperimentConfig &cfg, const std::vector<TimedRun> &runs,
                     const std::vector<VariantSummary> &summaries);

std::string summary_csv(const std::vector<VariantSummary> &s);

/// Simulate, run, evaluate and write everything under cfg.out.
std::vector<VariantSummary> run_experiment(const ExperimentConfig &cfg, const ProgressFn &progress = {});

/// Every runs/*/seed_*/record.csv under `dir`, sorted by variant and seed.
std::vector<RunRecord> load_records(const std::filesystem::path &dir);

struct TimingPoint {
  int m = 0;
  double schmidt_seconds = 0.0, full_seconds = 0.0;
};

/// Mean update cost against the number of keyframes. Slopes are least-squares
/// fits in log-log space over m > 0. The growth slopes use the cost added by
/// the keyframes, t(m) - t(0); the raw slopes use t(m) itself.
struct TimingReport {
  std::vector<TimingPoint> points;  ///< always includes m = 0
  double schmidt_slope = 0.0, full_slope = 0.0;
  double schmidt_slope_raw = 0.0, full_slope_raw = 0.0;
  int active_dim = 0, rows = 0;
};

TimingReport timing_report(const TimingOptions &opt, std::uint64_t seed = 1);
std::string timing_csv(const TimingReport &r);

/// Least-squares slope of log y against log x; NaN when fewer than two
/// positive points remain.
double loglog_slope(const std::vector<double> &x, const std::vector<double> &y);

std::string observability_csv(const std::vector<CaseReport> &reports);

}  // namespace mapvil
