#include "mapvil/measurement.hpp"
#include "mapvil/propagation.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <stdexcept>

namespace mapvil {

Vec2 PinholeCamera::project_unchecked(const Vec3 &p_C, Mat23 *J) const {
  const double iz = 1.0 / p_C.z();
  const double x = p_C.x() * iz, y = p_C.y() * iz;
  if (J) {
    *J << fx * iz, 0.0, -fx * x * iz, 0.0, fy * iz, -fy * y * iz;
  }
  return {fx * x + cx, fy * y + cy};
}

std::optional<Vec2> PinholeCamera::project(const Vec3 &p_C, Mat23 *J) const {
  if (!(p_C.z() > z_min))
    return std::nullopt;
  return project_unchecked(p_C, J);
}

bool PinholeCamera::in_image(const Vec2 &uv) const {
  return uv.x() >= 0.0 && uv.y() >= 0.0 && uv.x() < width && uv.y() < height;
}

Vec3 PinholeCamera::bearing(const Vec2 &uv) const { return {(uv.x() - cx) / fx, (uv.y() - cy) / fy, 1.0}; }

void append(StackedResidual &a, const StackedResidual &b) {
  if (b.empty())
    return;
  if (a.empty()) {
    a = b;
    return;
  }
  // Union of nuisance column sets, keeping a's order and appending b's new ones.
  std::vector<int> kfs = a.keyframes;
  for (int k : b.keyframes)
    if (std::find(kfs.begin(), kfs.end(), k) == kfs.end())
      kfs.push_back(k);

  const int ra = a.rows(), rb = b.rows(), na = static_cast<int>(a.H_a.cols());
  StackedResidual out;
  out.keyframes = kfs;
  out.r.resize(ra + rb);
  out.r << a.r, b.r;
  out.H_a.resize(ra + rb, na);
  out.H_a << a.H_a, b.H_a;
  out.H_n = MatX::Zero(ra + rb, 6 * static_cast<Eigen::Index>(kfs.size()));
  out.H_n.topLeftCorner(ra, a.H_n.cols()) = a.H_n;
  for (size_t k = 0; k < b.keyframes.size(); ++k) {
    const auto col = std::find(kfs.begin(), kfs.end(), b.keyframes[k]) - kfs.begin();
    out.H_n.block(ra, 6 * col, rb, 6) = b.H_n.middleCols(6 * k, 6);
  }
  out.V = MatX::Zero(ra + rb, ra + rb);
  out.V.topLeftCorner(ra, ra) = a.V;
  out.V.bottomRightCorner(rb, rb) = b.V;
  a = std::move(out);
}

// ---------------------------------------------------------------------------

std::optional<ViewJacobian> local_view_jacobian(const PinholeCamera &cam, const Pose &T_LI, const Pose &T_IC,
                                                const Vec3 &p_Lf, ErrorChart chart, bool check_depth) {
  const Mat3 &R_I = T_LI.R, &R_C = T_IC.R;
  const Vec3 q = R_I.transpose() * (p_Lf - T_LI.p);
  const Vec3 p_C = R_C.transpose() * (q - T_IC.p);
  Mat23 dh;
  Vec2 uv;
  if (check_depth) {
    const auto proj = cam.project(p_C, &dh);
    if (!proj)
      return std::nullopt;
    uv = *proj;
  } else {
    uv = cam.project_unchecked(p_C, &dh);
  }

  const Mat3 RcRi = R_C.transpose() * R_I.transpose();
  const Mat23 G = -dh;
  ViewJacobian J;
  J.uv = uv;
  J.p = G * RcRi;
  J.f = -J.p;
  J.p_c = G * R_C.transpose();
  if (chart == ErrorChart::Invariant) {
    J.theta = -G * RcRi * skew(p_Lf);
    J.theta_anchor = -J.theta;
    J.theta_c = -G * R_C.transpose() * skew(q);
  } else {
    J.theta = -G * R_C.transpose() * skew(q);
    J.theta_anchor.setZero();
    J.theta_c = -G * skew(p_C);
  }
  return J;
}

std::optional<MapCurrentJacobian> map_current_jacobian(const PinholeCamera &cam, const Pose &T_LI, const Pose &T_IC,
                                                       const Pose &T_LG, const Vec3 &p_GF, ErrorChart chart,
                                                       bool check_depth) {
  const Mat3 &R_I = T_LI.R, &R_C = T_IC.R, &R_G = T_LG.R;
  const Vec3 RpF = R_G * p_GF;
  const Vec3 q = R_I.transpose() * (RpF + T_LG.p - T_LI.p);
  const Vec3 p_C = R_C.transpose() * (q - T_IC.p);
  Mat23 dh;
  Vec2 uv;
  if (check_depth) {
    const auto proj = cam.project(p_C, &dh);
    if (!proj)
      return std::nullopt;
    uv = *proj;
  } else {
    uv = cam.project_unchecked(p_C, &dh);
  }

  const Mat3 RcRi = R_C.transpose() * R_I.transpose();
  const Mat23 G = -dh;
  MapCurrentJacobian J;
  J.uv = uv;
  J.p = G * RcRi;
  J.p_G = -J.p;
  J.F = -G * RcRi * R_G;
  J.p_c = G * R_C.transpose();
  if (chart == ErrorChart::Invariant) {
    J.theta = -G * RcRi * skew(RpF);
    J.theta_G = -J.theta;
    J.theta_c = -G * R_C.transpose() * skew(q);
  } else {
    J.theta = -G * R_C.transpose() * skew(q);
    J.theta_G = G * RcRi * R_G * skew(p_GF);
    J.theta_c = -G * skew(p_C);
  }
  return J;
}

std::optional<MapKeyframeJacobian> map_keyframe_jacobian(const PinholeCamera &cam, const Pose &T_GKF,
                                                         const Vec3 &p_GF, ErrorChart chart, bool check_depth) {
  const Mat3 &R = T_GKF.R;
  const Vec3 p_K = R.transpose() * (p_GF - T_GKF.p);
  Mat23 dh;
  Vec2 uv;
  if (check_depth) {
    const auto proj = cam.project(p_K, &dh);
    if (!proj)
      return std::nullopt;
    uv = *proj;
  } else {
    uv = cam.project_unchecked(p_K, &dh);
  }
  const Mat23 G = -dh;
  MapKeyframeJacobian J;
  J.uv = uv;
  J.p_kf = G * R.transpose();
  J.F = -J.p_kf;
  if (chart == ErrorChart::Invariant)
    J.theta_kf = -G * R.transpose() * skew(p_GF);
  else
    J.theta_kf = -G * skew(p_K);
  return J;
}

// ---------------------------------------------------------------------------

std::optional<FeatureRows> local_obs_jacobian(const AugmentedState &s, const PinholeCamera &cam, const Vec3 &p_Lf,
                                              const Vec2 &uv) {
  const auto J = local_view_jacobian(cam, s.imu_pose(), s.extrinsic_pose(), p_Lf, s.chart);
  if (!J)
    return std::nullopt;
  FeatureRows rows;
  rows.r = uv - J->uv;
  rows.H_x = MatX::Zero(2, s.active_dim());
  rows.H_x.middleCols<3>(slot::kTheta) = J->theta + J->theta_anchor;
  rows.H_x.middleCols<3>(slot::kPos) = J->p;
  rows.H_x.middleCols<3>(slot::kThetaC) = J->theta_c;
  rows.H_x.middleCols<3>(slot::kPosC) = J->p_c;
  rows.H_f = J->f;
  return rows;
}

std::optional<FeatureRows> msckf_feature_rows(const AugmentedState &s, const PinholeCamera &cam,
                                              const FeatureTrack &track, const Vec3 &p_Lf) {
  if (s.clones.empty())
    return std::nullopt;
  const int anchor = s.num_clones() - 1;
  const int anchor_col = AugmentedState::clone_offset(anchor);
  const int m = static_cast<int>(track.obs.size());

  FeatureRows rows;
  rows.r.resize(2 * m);
  rows.H_x = MatX::Zero(2 * m, s.active_dim());
  rows.H_f.resize(2 * m, 3);
  for (int k = 0; k < m; ++k) {
    const auto &ob = track.obs[k];
    int i = -1;
    for (int c = 0; c < s.num_clones(); ++c)
      if (s.clones[c].timestamp == ob.timestamp) {
        i = c;
        break;
      }
    if (i < 0)
      return std::nullopt;
    const auto J = local_view_jacobian(cam, s.clone_pose(i), s.extrinsic_pose(), p_Lf, s.chart);
    if (!J)
      return std::nullopt;
    const int col = AugmentedState::clone_offset(i);
    rows.r.segment<2>(2 * k) = ob.uv - J->uv;
    rows.H_x.block<2, 3>(2 * k, col) += J->theta;
    rows.H_x.block<2, 3>(2 * k, anchor_col) += J->theta_anchor;
    rows.H_x.block<2, 3>(2 * k, col + 3) = J->p;
    rows.H_x.block<2, 3>(2 * k, slot::kThetaC) = J->theta_c;
    rows.H_x.block<2, 3>(2 * k, slot::kPosC) = J->p_c;
    rows.H_f.middleRows<2>(2 * k) = J->f;
  }
  return rows;
}

std::optional<FeatureRows> map_obs_jacobian_current(const AugmentedState &s, const PinholeCamera &cam,
                                                    const MapMatch &m) {
  if (!s.aug_initialized)
    throw std::logic_error("map_obs_jacobian_current: augmented variable not initialized");
  const auto J = map_current_jacobian(cam, s.imu_pose(), s.extrinsic_pose(), s.relative_transform(), m.p_GF, s.chart);
  if (!J)
    return std::nullopt;
  FeatureRows rows;
  rows.r = m.uv - J->uv;
  rows.H_x = MatX::Zero(2, s.active_dim());
  rows.H_x.middleCols<3>(slot::kTheta) = J->theta;
  rows.H_x.middleCols<3>(slot::kPos) = J->p;
  rows.H_x.middleCols<3>(slot::kPosG) = J->p_G;
  rows.H_x.middleCols<3>(slot::kThetaG) = J->theta_G;
  rows.H_x.middleCols<3>(slot::kThetaC) = J->theta_c;
  rows.H_x.middleCols<3>(slot::kPosC) = J->p_c;
  rows.H_f = J->F;
  return rows;
}

std::optional<FeatureRows> map_obs_jacobian_keyframe(const AugmentedState &s, const PinholeCamera &cam,
                                                     const MapMatch &m, int kf_id) {
  const int j = s.keyframe_index(kf_id);
  if (j < 0)
    throw std::invalid_argument("map_obs_jacobian_keyframe: keyframe not in state");
  const auto it = std::find_if(m.keyframe_obs.begin(), m.keyframe_obs.end(),
                               [&](const KeyframeObservation &o) { return o.keyframe_id == kf_id; });
  if (it == m.keyframe_obs.end())
    throw std::invalid_argument("map_obs_jacobian_keyframe: match has no observation in this keyframe");
  const auto J = map_keyframe_jacobian(cam, s.keyframe_pose(j), m.p_GF, s.chart);
  if (!J)
    return std::nullopt;
  FeatureRows rows;
  rows.r = it->uv - J->uv;
  rows.H_x.resize(2, 6);
  rows.H_x << J->theta_kf, J->p_kf;
  rows.H_f = J->F;
  return rows;
}

// ---------------------------------------------------------------------------

std::optional<ProjectedRows> stack_and_project_feature(const MatX &H_x, const MatX &H_f, const VecX &r,
                                                       const MatX &V) {
  const int rows = static_cast<int>(H_f.rows()), fc = static_cast<int>(H_f.cols());
  if (rows <= fc)
    return std::nullopt;
  Eigen::JacobiSVD<MatX> svd(H_f);
  const auto &sv = svd.singularValues();
  if (sv(fc - 1) <= 1e-9 * sv(0))
    return std::nullopt;

  Eigen::HouseholderQR<MatX> qr(H_f);
  MatX M(rows, H_x.cols() + 1);
  M << H_x, r;
  M.applyOnTheLeft(qr.householderQ().transpose());

  ProjectedRows out;
  const int m = rows - fc;
  out.H = M.bottomLeftCorner(m, H_x.cols());
  out.r = M.bottomRightCorner(m, 1);

  const double s2 = V(0, 0);
  const bool spherical = (V - s2 * MatX::Identity(rows, rows)).cwiseAbs().maxCoeff() == 0.0;
  if (spherical) {
    out.V = s2 * MatX::Identity(m, m);
  } else {
    MatX QtV = V;
    QtV.applyOnTheLeft(qr.householderQ().transpose());
    QtV.applyOnTheRight(qr.householderQ());
    out.V = QtV.bottomRightCorner(m, m);
  }
  return out;
}

MatX oc_null_space(const AugmentedState &s, const std::vector<int> &keyframe_indices,
                   const std::vector<Vec3> &features) {
  const int a = s.active_dim(), nk = static_cast<int>(keyframe_indices.size());
  const int rows = a + 6 * nk + 3 * static_cast<int>(features.size());
  const Mat3 I = Mat3::Identity();
  const Mat3 &RG0 = s.oc_anchor;
  const Vec3 g = gravity();
  MatX N = MatX::Zero(rows, 10);

  N.block<3, 1>(slot::kTheta, 0) = g;
  N.block<3, 1>(slot::kThetaG, 0) = g;
  N.block<3, 3>(slot::kPos, 1) = I;
  N.block<3, 3>(slot::kPosG, 1) = I;
  N.block<3, 3>(slot::kPosG, 4) = -RG0;
  N.block<3, 3>(slot::kThetaG, 7) = I;
  for (int i = 0; i < s.num_clones(); ++i) {
    const int o = AugmentedState::clone_offset(i);
    N.block<3, 1>(o, 0) = g;
    N.block<3, 3>(o + 3, 1) = I;
  }
  for (int k = 0; k < nk; ++k) {
    const int o = a + 6 * k;
    N.block<3, 3>(o, 7) = -RG0.transpose();
    N.block<3, 3>(o + 3, 4) = I;
  }
  for (size_t f = 0; f < features.size(); ++f) {
    const int o = a + 6 * nk + 3 * static_cast<int>(f);
    N.block<3, 3>(o, 4) = I;
    N.block<3, 3>(o, 7) = skew(features[f]) * RG0.transpose();
  }
  return N;
}

MatX oc_project(const MatX &H, const MatX &N) {
  if (H.cols() != N.rows())
    throw std::invalid_argument("oc_project: column count of H must match rows of N");
  Eigen::JacobiSVD<MatX> svd(N, Eigen::ComputeThinU);
  const auto &sv = svd.singularValues();
  int rank = 0;
  while (rank < sv.size() && sv(rank) > 1e-12 * std::max(sv(0), 1e-300))
    ++rank;
  const MatX U = svd.matrixU().leftCols(rank);
  return H - (H * U) * U.transpose();
}

// ---------------------------------------------------------------------------

std::optional<Vec3> triangulate(const PinholeCamera &cam, const std::vector<Pose> &T_WC, const std::vector<Vec2> &uv,
                                const TriangulationOptions &opt) {
  const size_t n = T_WC.size();
  if (n < 2 || uv.size() != n)
    return std::nullopt;

  Mat3 A = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    const Vec3 d = (T_WC[i].R * cam.bearing(uv[i])).normalized();
    const Mat3 P = Mat3::Identity() - d * d.transpose();
    A += P;
    b += P * T_WC[i].p;
  }
  Eigen::JacobiSVD<Mat3> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (sv(2) <= 0.0 || sv(0) / sv(2) > opt.max_condition)
    return std::nullopt;
  Vec3 p = svd.solve(b);

  for (int it = 0; it < opt.gauss_newton_iterations; ++it) {
    Mat3 JtJ = Mat3::Zero();
    Vec3 Jte = Vec3::Zero();
    for (size_t i = 0; i < n; ++i) {
      const Vec3 p_C = T_WC[i].R.transpose() * (p - T_WC[i].p);
      Mat23 dh;
      const auto proj = cam.project(p_C, &dh);
      if (!proj)
        return std::nullopt;
      const Mat23 J = dh * T_WC[i].R.transpose();
      JtJ += J.transpose() * J;
      Jte += J.transpose() * (uv[i] - *proj);
    }
    const Vec3 dp = JtJ.ldlt().solve(Jte);
    p += dp;
    if (dp.norm() < 1e-10)
      break;
  }
  for (size_t i = 0; i < n; ++i) {
    const double z = (T_WC[i].R.transpose() * (p - T_WC[i].p)).z();
    if (z < opt.min_depth || z > opt.max_depth)
      return std::nullopt;
  }
  return p;
}

}  // namespace mapvil
