#pragma once

#include "mapvil/estimator.hpp"

#include <vector>

namespace mapvil {

/// Evaluated quantities. Local pose is T_LI, relative is T_LG.
enum class Variable { Orientation, Position, Pose, RelOrientation, RelPosition, RelPose };

const char *variable_name(Variable v);
/// Degrees of freedom of the NEES block.
int variable_dim(Variable v);
/// Offset of the variable's block inside RecordStep::P.
int variable_offset(Variable v);
bool is_relative(Variable v);

/// Error of one step in the record's own chart over the full record layout
/// [theta, p, p_G, theta_G]. Invariant charts use the exact group logarithm
/// of est * truth^-1; the standard chart uses local rotation and additive
/// position errors.
Eigen::Matrix<double, 12, 1> record_error(const RecordStep &s, ErrorChart chart);

struct Series {
  std::vector<double> t;
  std::vector<double> value;  ///< per step, over the runs that have it
  double aggregate = 0.0;     ///< time average of `value`
  int skipped = 0;            ///< terms left out (no relative yet, singular P)
  int regularized = 0;        ///< NEES terms that needed 1e-12 I added to P
};

/// Per step sqrt(mean over runs of |e|^2), orientation in degrees, position
/// in metres. Pose variables are not supported here.
Series rmse(const std::vector<RunRecord> &runs, Variable v);

/// Per step mean over runs of e^T P^-1 e / d in each record's chart.
Series nees(const std::vector<RunRecord> &runs, Variable v);

enum class AlignMode { None, FirstPose, Umeyama };

/// Transform S with S * est ~ truth. FirstPose uses the initial poses,
/// Umeyama least-squares rigid alignment of the positions.
Pose align(const std::vector<Pose> &est, const std::vector<Pose> &truth, AlignMode mode);

/// Per-run RMS position error over time, averaged over runs. The local
/// variant aligns each run first; the map variant compares T_GI directly over
/// the steps with a relative estimate. `planar` drops the z component of the
/// error (ground-vehicle evaluation).
double ate_local(const std::vector<RunRecord> &runs, AlignMode mode = AlignMode::Umeyama, bool planar = false);
double ate_map(const std::vector<RunRecord> &runs, bool planar = false);

struct RpeResult {
  double length = 0.0;
  std::vector<double> errors;  ///< one per segment per run, metres
  double mean = 0.0;
  bool skipped = false;        ///< trajectory shorter than the length
};

/// Consecutive segments of the given travelled length; the error of each is
/// the translation of (T_i^-1 T_j)^-1 (T^_i^-1 T^_j).
std::vector<RpeResult> rpe(const std::vector<RunRecord> &runs, const std::vector<double> &lengths);

}  // namespace mapvil
