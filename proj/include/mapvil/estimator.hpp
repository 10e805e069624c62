#pragma once

#include "mapvil/simulator.hpp"
#include "mapvil/update.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mapvil {

enum class Variant { Vio, MscEkf, MscSEkf, MscIkf, MsocSIkf };

struct VariantInfo {
  Variant variant;
  const char *name;
  ErrorChart chart;
  bool uses_map;
  MapUpdateMode map_mode;
};

const VariantInfo &variant_info(Variant v);
std::optional<Variant> parse_variant(std::string_view name);
std::vector<Variant> all_variants();

struct FilterOptions {
  int max_clones = 11;
  NoiseParams imu;  ///< densities the filter assumes
  UpdateOptions update;
  TriangulationOptions tri;
  int keyframe_retire_frames = 20;
  /// Pixel noise the filter assumes; 0 takes the simulated camera's.
  double pixel_sigma = 0.0;

  // Initial standard deviations of the nav state (standard chart).
  double init_theta = 1e-3, init_v = 2e-3, init_p = 1e-3;
  double init_bg = 1e-3, init_ba = 1e-2, init_ext = 0.005;
  /// Noise of the map-based pose fix that initializes the relative transform.
  double aug_theta = 0.01, aug_p = 0.1;
  /// Draw the initial estimate from the prior; off gives a truth start.
  bool perturb_init = true;
  /// Check the nuisance block and PSD-ness after every frame.
  bool audit = false;
};

/// One camera-rate record. Covariance is over [theta, p, p_G, theta_G] of
/// the variant's chart.
struct RecordStep {
  double t = 0.0;
  Pose truth, est;  ///< T_LI
  bool has_relative = false;
  Pose truth_LG, est_LG;
  Eigen::Matrix<double, 12, 12> P = Eigen::Matrix<double, 12, 12>::Zero();
};

struct RunStats {
  int frames = 0;
  int msckf_updates = 0, msckf_features = 0, msckf_gated = 0;
  int map_updates = 0, map_matches = 0, map_gated = 0;
  int keyframes_inserted = 0, keyframes_removed = 0;
  bool nuisance_intact = true;      ///< audit: keyframe means and P_nn unchanged
  /// audit: min over frames of lambda_min / lambda_max. The newest clone
  /// duplicates the current pose, so this sits at rounding level, not above 0.
  double min_eig_rel = 0.0;
  double update_seconds = 0.0;      ///< wall time spent in map updates
};

struct RunRecord {
  std::string variant;
  ErrorChart chart = ErrorChart::Invariant;
  std::uint64_t seed = 0;
  MapMode mode = MapMode::Imperfect;
  std::vector<RecordStep> steps;
  RunStats stats;
};

/// Runs one variant over a simulated sequence. `seed` drives the initial
/// estimate draw and the pose fix for the relative transform, shared by all
/// variants of the same seed.
RunRecord run_filter(const Simulation &sim, Variant v, const FilterOptions &opt, std::uint64_t seed);

/// Keyframe prior from the map's [rotation about G, translation] model into
/// the chart, evaluated at the keyframe estimate.
Mat6 keyframe_prior(const MapKeyframe &kf, ErrorChart chart);

/// Relative transform T_LG = T_LI * fix^-1 from a pose fix T_GI of the IMU in
/// G. Fix noise is modeled as R = R_true Exp(n_theta), p = p_true + n_p.
/// Jacobians map [theta_I, p_I] (chart) and [n_theta, n_p] to the
/// [p_G, theta_G] error of the result.
struct RelativeInit {
  Pose T_LG;
  Mat6 J_x = Mat6::Zero();
  Mat6 J_n = Mat6::Zero();
};
RelativeInit relative_from_fix(const Pose &T_LI, const Pose &fix_GI, ErrorChart chart);

}  // namespace mapvil
