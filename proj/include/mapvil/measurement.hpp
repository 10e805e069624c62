#pragma once

#include "mapvil/state.hpp"

#include <optional>
#include <vector>

namespace mapvil {

using Vec2 = Eigen::Vector2d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

struct PinholeCamera {
  double fx = 458.0, fy = 458.0;
  double cx = 376.0, cy = 240.0;
  int width = 752, height = 480;
  double sigma_px = 1.0;
  double z_min = 0.05;

  /// Pixel of a camera-frame point and its 2x3 Jacobian. Empty when the point
  /// is closer than z_min along the optical axis.
  std::optional<Vec2> project(const Vec3 &p_C, Mat23 *J = nullptr) const;
  /// Perspective projection without the depth check.
  Vec2 project_unchecked(const Vec3 &p_C, Mat23 *J = nullptr) const;
  bool in_image(const Vec2 &uv) const;
  /// Normalized bearing (x/z, y/z, 1) of a pixel.
  Vec3 bearing(const Vec2 &uv) const;
};

/// One pixel observation of a local feature in a cloned frame.
struct TrackObservation {
  double timestamp = 0.0;  ///< clone timestamp
  Vec2 uv = Vec2::Zero();
};

struct FeatureTrack {
  int feature_id = -1;
  std::vector<TrackObservation> obs;
};

struct KeyframeObservation {
  int keyframe_id = -1;
  Vec2 uv = Vec2::Zero();
};

struct MapMatch {
  int feature_id = -1;
  Vec3 p_GF = Vec3::Zero();  ///< map feature prior, frame G
  Vec2 uv = Vec2::Zero();    ///< current-frame pixel
  std::vector<KeyframeObservation> keyframe_obs;
};

/// r ~ -[H_a H_n] xi + v over the active block and a subset of nuisance
/// keyframes (state indices in `keyframes`, 6 columns each).
struct StackedResidual {
  VecX r;
  MatX H_a;
  MatX H_n;
  std::vector<int> keyframes;
  MatX V;

  int rows() const { return static_cast<int>(r.size()); }
  bool empty() const { return r.size() == 0; }
};

/// Appends b to a, merging the nuisance column sets.
void append(StackedResidual &a, const StackedResidual &b);

// --- observation blocks -----------------------------------------------------
//
// Every Jacobian below is H in r = y - h(x_hat) ~ -H xi, i.e. the negative of
// the derivative of the predicted pixel, with xi = est (-) truth in the chart.

/// View of a local feature from an IMU pose, the feature chart anchored at
/// another pose's rotation (the anchor may be the viewing pose itself).
struct ViewJacobian {
  Vec2 uv;
  Mat23 theta, p;         ///< viewing pose
  Mat23 theta_anchor;     ///< anchor rotation (invariant chart only)
  Mat23 theta_c, p_c;     ///< extrinsic
  Mat23 f;                ///< feature
};

std::optional<ViewJacobian> local_view_jacobian(const PinholeCamera &cam, const Pose &T_LI, const Pose &T_IC,
                                                const Vec3 &p_Lf, ErrorChart chart, bool check_depth = true);

/// Current-frame observation of a map feature.
struct MapCurrentJacobian {
  Vec2 uv;
  Mat23 theta, p, p_G, theta_G;
  Mat23 theta_c, p_c;
  Mat23 F;
};

std::optional<MapCurrentJacobian> map_current_jacobian(const PinholeCamera &cam, const Pose &T_LI, const Pose &T_IC,
                                                       const Pose &T_LG, const Vec3 &p_GF, ErrorChart chart,
                                                       bool check_depth = true);

/// Keyframe observation of a map feature. Keyframe poses are camera poses in G.
struct MapKeyframeJacobian {
  Vec2 uv;
  Mat23 theta_kf, p_kf;
  Mat23 F;
};

std::optional<MapKeyframeJacobian> map_keyframe_jacobian(const PinholeCamera &cam, const Pose &T_GKF, const Vec3 &p_GF,
                                                         ErrorChart chart, bool check_depth = true);

// --- state-level row builders ----------------------------------------------

/// Rows over [active | feature] for a single-frame observation of a local
/// feature held in the chart anchored at the current IMU pose.
struct FeatureRows {
  VecX r;
  MatX H_x;
  MatX H_f;
};

std::optional<FeatureRows> local_obs_jacobian(const AugmentedState &s, const PinholeCamera &cam, const Vec3 &p_Lf,
                                              const Vec2 &uv);

/// Multi-state rows of a track over [active | feature], anchored at the
/// newest clone. Observations must reference clone timestamps.
std::optional<FeatureRows> msckf_feature_rows(const AugmentedState &s, const PinholeCamera &cam,
                                              const FeatureTrack &track, const Vec3 &p_Lf);

/// Current-frame map rows over [active | feature] (2 rows).
std::optional<FeatureRows> map_obs_jacobian_current(const AugmentedState &s, const PinholeCamera &cam,
                                                    const MapMatch &m);

/// Keyframe map rows over [keyframe slot (6) | feature] (2 rows).
std::optional<FeatureRows> map_obs_jacobian_keyframe(const AugmentedState &s, const PinholeCamera &cam,
                                                     const MapMatch &m, int kf_id);

// --- projections ------------------------------------------------------------

struct ProjectedRows {
  VecX r;
  MatX H;
  MatX V;
};

/// Left null-space projection of the feature columns. Returns nothing when
/// H_f is rank deficient or there are not more rows than feature columns.
std::optional<ProjectedRows> stack_and_project_feature(const MatX &H_x, const MatX &H_f, const VecX &r,
                                                       const MatX &V);

/// Observability-constrained basis (10 columns) over
/// [active | listed keyframes | listed features].
MatX oc_null_space(const AugmentedState &s, const std::vector<int> &keyframe_indices,
                   const std::vector<Vec3> &features);

/// Frobenius-nearest H* with H* N = 0.
MatX oc_project(const MatX &H, const MatX &N);

// --- triangulation ----------------------------------------------------------

struct TriangulationOptions {
  double max_condition = 1e4;
  int gauss_newton_iterations = 5;
  double min_depth = 0.1;
  double max_depth = 200.0;
};

/// Linear triangulation followed by Gauss-Newton on pixel error. Cameras are
/// given as world-from-camera poses.
std::optional<Vec3> triangulate(const PinholeCamera &cam, const std::vector<Pose> &T_WC, const std::vector<Vec2> &uv,
                                const TriangulationOptions &opt = {});

}  // namespace mapvil
