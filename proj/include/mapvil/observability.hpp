#pragma once

#include "mapvil/measurement.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mapvil {

enum class MapSystem { Perfect, Imperfect };
enum class Linearization { Ideal, Estimated };

/// One analyzed combination. `oc` only applies to the imperfect invariant
/// system at estimated linearization points.
struct ObservabilityCase {
  MapSystem system = MapSystem::Perfect;
  ErrorChart chart = ErrorChart::Invariant;
  Linearization lin = Linearization::Ideal;
  bool oc = false;

  std::string name() const;
  /// Unobservable dimension the analysis predicts for this case.
  int claimed_null_dim() const;
};

/// Every system/chart/linearization combination plus the OC case (nine).
std::vector<ObservabilityCase> all_cases();

/// Ground truth for the analysis: IMU states at camera rate (ZOH motion
/// between samples), local features in L, the L-G transform, camera-pose
/// keyframes and map features in G.
struct ObservabilityScenario {
  double dt = 0.1;
  std::vector<Mat3> R;
  std::vector<Vec3> v, p;
  std::vector<Vec3> gyro, accel;  ///< bias-free IMU held over [k, k+1)
  std::vector<Vec3> local_features;
  Pose T_LG;
  std::vector<Pose> keyframes;
  std::vector<Vec3> map_features;

  int steps() const { return static_cast<int>(R.size()); }
  /// True when the motion has (numerically) no rotation or no acceleration
  /// change, for which the claimed dimensions do not hold.
  bool degenerate() const;
};

/// Random generic motion with the given number of camera-rate steps.
ObservabilityScenario random_scenario(std::uint64_t seed, int steps = 50, double dt = 0.1, int n_local = 3,
                                      int n_map = 4, int n_keyframes = 2);

/// Values a closed-form basis is evaluated at.
struct BasisValues {
  Mat3 R_I = Mat3::Identity();
  Vec3 v = Vec3::Zero(), p = Vec3::Zero();
  std::vector<Vec3> local_features;
  Pose T_LG;
  std::vector<Pose> keyframes;
  std::vector<Vec3> map_features;
};

BasisValues truth_values(const ObservabilityScenario &sc);

/// Error-state layout of the analysis. Standard order is
/// [q_I, v, p, p_f..., q_G, p_G | kf (q, p)..., F...]; invariant order is
/// [theta, v, p, p_f..., p_G, theta_G | kf (theta, p)..., F...].
struct ObservabilityLayout {
  int theta = 0, v = 3, p = 6, pf = 9;
  int pG = 0, thG = 0, kf = 0, F = 0, dim = 0;
  ObservabilityLayout(MapSystem sys, ErrorChart chart, int n_local, int n_keyframes, int n_map);
};

struct ObservabilityMatrix {
  MatX M;
  int rows_per_step = 0;
  bool degenerate = false;
  /// Values the OC basis was frozen at (anchor rotation, fixed map estimate).
  BasisValues oc_values;
};

/// Stacks H_k Phi_{k|0} for every step. Estimated linearization perturbs each
/// evaluation point independently with standard deviation `sigma`.
ObservabilityMatrix build_observability_matrix(const ObservabilityCase &c, const ObservabilityScenario &sc,
                                               double sigma = 1e-3, std::uint64_t seed = 7);

struct NullSpace {
  MatX basis;  ///< orthonormal columns
  int dim = 0;
  VecX singular_values;
};

/// dim counts singular values below tol * sigma_max (all of them for a zero matrix).
NullSpace null_space(const MatX &M, double tol = 1e-8);

/// Closed-form basis of the case's unobservable subspace (claimed_null_dim columns).
MatX theoretical_null_basis(const ObservabilityCase &c, const BasisValues &values);

struct CaseReport {
  std::string name;
  int claimed = 0;
  int numeric = 0;
  double basis_residual = 0.0;  ///< ||M N|| / ||M|| with unit-norm basis columns
  bool degenerate = false;
  bool pass = false;
};

CaseReport verify_case(const ObservabilityCase &c, const ObservabilityScenario &sc, double sigma = 1e-3,
                       std::uint64_t seed = 7);

/// Runs every case over `trajectories` random scenarios.
std::vector<CaseReport> run_observability_suite(std::uint64_t seed, int trajectories = 3, int steps = 50);

}  // namespace mapvil
