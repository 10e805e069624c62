#pragma once

#include "mapvil/liegroup.hpp"

#include <deque>
#include <vector>

namespace mapvil {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// How errors are parameterized.
///  Invariant: right-invariant group errors (X_hat X^-1) for every group slot.
///  Standard:  local rotation error (R = R_hat Exp(-theta)) and additive vectors.
enum class ErrorChart { Invariant, Standard };

/// Error-slot layout of the active state. Nuisance keyframes are stored in a
/// separate block, 6 dims each as [theta, p].
namespace slot {
constexpr int kTheta = 0;
constexpr int kVel = 3;
constexpr int kPos = 6;
constexpr int kPosG = 9;
constexpr int kThetaG = 12;
constexpr int kBg = 15;
constexpr int kBa = 18;
constexpr int kThetaC = 21;
constexpr int kPosC = 24;
constexpr int kClones = 27;
constexpr int kNavDim = 21;  ///< nav + augmented variable + biases
constexpr int kGroupDim = 15;  ///< the group part of the nav block
constexpr int kPoseDim = 6;
}  // namespace slot

struct NavState {
  Mat3 R_LI = Mat3::Identity();
  Vec3 v_LI = Vec3::Zero();
  Vec3 p_LI = Vec3::Zero();
  Vec3 p_LG = Vec3::Zero();
  Mat3 R_LG = Mat3::Identity();
  Vec3 b_g = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();

  /// Group part as an element with K=0, M=1: vectors (v, p, p_LG), extra R_LG.
  GroupElement group() const;
  void set_group(const GroupElement &X);
};

struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 p = Vec3::Zero();

  Pose operator*(const Pose &o) const { return {R * o.R, R * o.p + p}; }
  Pose inverse() const { return {R.transpose(), -R.transpose() * p}; }
  Vec3 transform(const Vec3 &x) const { return R * x + p; }
};

struct ClonedPose {
  Mat3 R = Mat3::Identity();
  Vec3 p = Vec3::Zero();
  double timestamp = 0.0;
};

struct Extrinsic {
  Mat3 R_IC = Mat3::Identity();
  Vec3 p_IC = Vec3::Zero();
};

struct MapKeyframePose {
  int id = -1;
  Mat3 R_GKF = Mat3::Identity();
  Vec3 p_GKF = Vec3::Zero();
};

/// SE(3) exponential/logarithm in the [theta, p] ordering used by all pose slots.
Pose se3_exp(const Vec6 &xi);
Vec6 se3_log(const Pose &T);

/// Error of a pose estimate in the given chart.
Vec6 pose_error(const Pose &truth, const Pose &est, ErrorChart chart);
/// Applies a correction to a pose in the given chart.
Pose pose_retract(const Pose &est, const Vec6 &delta, ErrorChart chart);
/// First-order map from a standard-chart pose error to the invariant chart.
Mat6 pose_chart_jacobian(const Pose &T);

/// Active/nuisance filter state with partitioned covariance.
struct AugmentedState {
  ErrorChart chart = ErrorChart::Invariant;
  NavState nav;
  Extrinsic ext;
  std::deque<ClonedPose> clones;
  std::vector<MapKeyframePose> keyframes;

  MatX P_aa;
  MatX P_an;
  MatX P_nn;

  bool aug_initialized = false;
  Mat3 oc_anchor = Mat3::Identity();

  int num_clones() const { return static_cast<int>(clones.size()); }
  int num_keyframes() const { return static_cast<int>(keyframes.size()); }
  int active_dim() const { return slot::kClones + 6 * num_clones(); }
  int nuisance_dim() const { return 6 * num_keyframes(); }
  int dim() const { return active_dim() + nuisance_dim(); }
  static int clone_offset(int i) { return slot::kClones + 6 * i; }
  static int keyframe_offset(int j) { return 6 * j; }  ///< within the nuisance block
  int keyframe_index(int id) const;

  Pose imu_pose() const { return {nav.R_LI, nav.p_LI}; }
  Pose clone_pose(int i) const { return {clones.at(i).R, clones.at(i).p}; }
  Pose extrinsic_pose() const { return {ext.R_IC, ext.p_IC}; }
  Pose keyframe_pose(int j) const { return {keyframes.at(j).R_GKF, keyframes.at(j).p_GKF}; }
  Pose relative_transform() const { return {nav.R_LG, nav.p_LG}; }

  /// Joint covariance [[P_aa, P_an], [P_an^T, P_nn]].
  MatX covariance() const;
  void set_covariance(const MatX &P);
  /// Symmetrizes P_aa. P_nn is symmetric on entry and never rewritten.
  void symmetrize();
};

/// Creates a state with no clones and no keyframes. P0 is 27x27 over the
/// nav, bias and extrinsic slots.
AugmentedState make_state(ErrorChart chart, const NavState &nav, const Extrinsic &ext, const MatX &P0);

/// Error vector of est relative to truth, in est.chart, over the joint layout.
/// Keyframes are matched by position in the list; clones must align.
VecX state_error(const AugmentedState &truth, const AugmentedState &est);
/// Right-invariant error regardless of est.chart.
VecX right_invariant_error(const AugmentedState &truth, const AugmentedState &est);

/// Applies a correction. delta has active_dim() entries, or dim() when
/// update_nuisance is true.
void retract(AugmentedState &s, const VecX &delta, bool update_nuisance = false);

void augment_clone(AugmentedState &s, double timestamp);
void marginalize_clone(AugmentedState &s, int index);
inline void marginalize_oldest(AugmentedState &s) { marginalize_clone(s, 0); }

/// Inserts keyframes with per-keyframe prior covariances given in s.chart.
void insert_keyframes(AugmentedState &s, const std::vector<MapKeyframePose> &kfs, const std::vector<Mat6> &priors);
void remove_keyframe(AugmentedState &s, int id);

/// Sets the relative transform and its 6x6 covariance (ordered [p_LG, theta_LG]
/// as in the layout) and freezes the OC anchor.
void init_augmented_variable(AugmentedState &s, const Pose &T_LG, const Mat6 &cov);

/// Linear map taking a standard-chart error to the invariant chart at the
/// state's current estimate, over the active layout.
MatX active_chart_jacobian(const AugmentedState &s);

double min_eigenvalue(const MatX &P);

}  // namespace mapvil
