#include "mapvil/state.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <stdexcept>
#include <string>

namespace mapvil {

GroupElement NavState::group() const { return GroupElement(R_LI, {v_LI, p_LI, p_LG}, {R_LG}); }

void NavState::set_group(const GroupElement &X) {
  R_LI = X.rotation();
  v_LI = X.vector(0);
  p_LI = X.vector(1);
  p_LG = X.vector(2);
  R_LG = X.extra_rotation(0);
}

Pose se3_exp(const Vec6 &xi) {
  const Vec3 theta = xi.head<3>();
  return {so3_exp(theta), so3_left_jacobian(theta) * xi.tail<3>()};
}

Vec6 se3_log(const Pose &T) {
  Vec6 xi;
  xi.head<3>() = so3_log(T.R);
  xi.tail<3>() = so3_left_jacobian_inverse(xi.head<3>()) * T.p;
  return xi;
}

Vec6 pose_error(const Pose &truth, const Pose &est, ErrorChart chart) {
  if (chart == ErrorChart::Invariant)
    return se3_log(est * truth.inverse());
  Vec6 e;
  e.head<3>() = so3_log(truth.R.transpose() * est.R);
  e.tail<3>() = est.p - truth.p;
  return e;
}

Pose pose_retract(const Pose &est, const Vec6 &delta, ErrorChart chart) {
  if (chart == ErrorChart::Invariant)
    return se3_exp(delta) * est;
  return {est.R * so3_exp(delta.head<3>()), est.p + delta.tail<3>()};
}

Mat6 pose_chart_jacobian(const Pose &T) {
  Mat6 J = Mat6::Zero();
  J.block<3, 3>(0, 0) = T.R;
  J.block<3, 3>(3, 0) = skew(T.p) * T.R;
  J.block<3, 3>(3, 3).setIdentity();
  return J;
}

// ---------------------------------------------------------------------------

int AugmentedState::keyframe_index(int id) const {
  for (int j = 0; j < num_keyframes(); ++j)
    if (keyframes[j].id == id)
      return j;
  return -1;
}

MatX AugmentedState::covariance() const {
  const int a = active_dim(), n = nuisance_dim();
  MatX P(a + n, a + n);
  P.topLeftCorner(a, a) = P_aa;
  P.topRightCorner(a, n) = P_an;
  P.bottomLeftCorner(n, a) = P_an.transpose();
  P.bottomRightCorner(n, n) = P_nn;
  return P;
}

void AugmentedState::set_covariance(const MatX &P) {
  const int a = active_dim(), n = nuisance_dim();
  if (P.rows() != a + n || P.cols() != a + n)
    throw std::invalid_argument("set_covariance: size mismatch");
  const MatX Ps = 0.5 * (P + P.transpose());
  P_aa = Ps.topLeftCorner(a, a);
  P_an = Ps.topRightCorner(a, n);
  P_nn = Ps.bottomRightCorner(n, n);
}

void AugmentedState::symmetrize() { P_aa = 0.5 * (P_aa + P_aa.transpose()).eval(); }

AugmentedState make_state(ErrorChart chart, const NavState &nav, const Extrinsic &ext, const MatX &P0) {
  if (P0.rows() != slot::kClones || P0.cols() != slot::kClones)
    throw std::invalid_argument("make_state: P0 must be 27x27");
  AugmentedState s;
  s.chart = chart;
  s.nav = nav;
  s.ext = ext;
  s.P_aa = 0.5 * (P0 + P0.transpose());
  s.P_an.resize(slot::kClones, 0);
  s.P_nn.resize(0, 0);
  return s;
}

namespace {

void check_layout(const AugmentedState &a, const AugmentedState &b) {
  if (a.num_clones() != b.num_clones() || a.num_keyframes() != b.num_keyframes())
    throw std::invalid_argument("state_error: layout mismatch");
}

VecX error_impl(const AugmentedState &truth, const AugmentedState &est, ErrorChart chart) {
  check_layout(truth, est);
  VecX e(est.dim());
  if (chart == ErrorChart::Invariant) {
    e.head<slot::kGroupDim>() = (est.nav.group() * truth.nav.group().inverse()).log();
  } else {
    e.segment<3>(slot::kTheta) = so3_log(truth.nav.R_LI.transpose() * est.nav.R_LI);
    e.segment<3>(slot::kVel) = est.nav.v_LI - truth.nav.v_LI;
    e.segment<3>(slot::kPos) = est.nav.p_LI - truth.nav.p_LI;
    e.segment<3>(slot::kPosG) = est.nav.p_LG - truth.nav.p_LG;
    e.segment<3>(slot::kThetaG) = so3_log(truth.nav.R_LG.transpose() * est.nav.R_LG);
  }
  e.segment<3>(slot::kBg) = est.nav.b_g - truth.nav.b_g;
  e.segment<3>(slot::kBa) = est.nav.b_a - truth.nav.b_a;
  e.segment<6>(slot::kThetaC) = pose_error(truth.extrinsic_pose(), est.extrinsic_pose(), chart);
  for (int i = 0; i < est.num_clones(); ++i)
    e.segment<6>(AugmentedState::clone_offset(i)) = pose_error(truth.clone_pose(i), est.clone_pose(i), chart);
  const int a = est.active_dim();
  for (int j = 0; j < est.num_keyframes(); ++j)
    e.segment<6>(a + AugmentedState::keyframe_offset(j)) =
        pose_error(truth.keyframe_pose(j), est.keyframe_pose(j), chart);
  return e;
}

}  // namespace

VecX state_error(const AugmentedState &truth, const AugmentedState &est) {
  return error_impl(truth, est, est.chart);
}

VecX right_invariant_error(const AugmentedState &truth, const AugmentedState &est) {
  return error_impl(truth, est, ErrorChart::Invariant);
}

void retract(AugmentedState &s, const VecX &delta, bool update_nuisance) {
  const int a = s.active_dim();
  if (delta.size() != (update_nuisance ? s.dim() : a))
    throw std::invalid_argument("retract: correction length " + std::to_string(delta.size()) + " does not match");
  if (s.chart == ErrorChart::Invariant) {
    s.nav.set_group(GroupElement::exp(delta.head<slot::kGroupDim>(), 0, 1) * s.nav.group());
  } else {
    s.nav.R_LI = s.nav.R_LI * so3_exp(delta.segment<3>(slot::kTheta));
    s.nav.v_LI += delta.segment<3>(slot::kVel);
    s.nav.p_LI += delta.segment<3>(slot::kPos);
    s.nav.p_LG += delta.segment<3>(slot::kPosG);
    s.nav.R_LG = s.nav.R_LG * so3_exp(delta.segment<3>(slot::kThetaG));
  }
  s.nav.b_g += delta.segment<3>(slot::kBg);
  s.nav.b_a += delta.segment<3>(slot::kBa);

  const Pose ext = pose_retract(s.extrinsic_pose(), delta.segment<6>(slot::kThetaC), s.chart);
  s.ext.R_IC = ext.R;
  s.ext.p_IC = ext.p;
  for (int i = 0; i < s.num_clones(); ++i) {
    const Pose c = pose_retract(s.clone_pose(i), delta.segment<6>(AugmentedState::clone_offset(i)), s.chart);
    s.clones[i].R = c.R;
    s.clones[i].p = c.p;
  }
  if (update_nuisance) {
    for (int j = 0; j < s.num_keyframes(); ++j) {
      const Pose k = pose_retract(s.keyframe_pose(j), delta.segment<6>(a + AugmentedState::keyframe_offset(j)), s.chart);
      s.keyframes[j].R_GKF = k.R;
      s.keyframes[j].p_GKF = k.p;
    }
  }
}

void augment_clone(AugmentedState &s, double timestamp) {
  if (!s.clones.empty() && timestamp <= s.clones.back().timestamp)
    throw std::invalid_argument("augment_clone: timestamp not increasing");
  const int a = s.active_dim(), n = s.nuisance_dim();

  // The clone error equals the current pose error in either chart, so the
  // augmentation Jacobian is a selection of the (theta, p) slots.
  MatX P_aa(a + 6, a + 6);
  P_aa.topLeftCorner(a, a) = s.P_aa;
  MatX rows(6, a);
  rows.topRows<3>() = s.P_aa.middleRows<3>(slot::kTheta);
  rows.bottomRows<3>() = s.P_aa.middleRows<3>(slot::kPos);
  P_aa.bottomLeftCorner(6, a) = rows;
  P_aa.topRightCorner(a, 6) = rows.transpose();
  P_aa.block<3, 3>(a, a) = s.P_aa.block<3, 3>(slot::kTheta, slot::kTheta);
  P_aa.block<3, 3>(a, a + 3) = s.P_aa.block<3, 3>(slot::kTheta, slot::kPos);
  P_aa.block<3, 3>(a + 3, a) = s.P_aa.block<3, 3>(slot::kPos, slot::kTheta);
  P_aa.block<3, 3>(a + 3, a + 3) = s.P_aa.block<3, 3>(slot::kPos, slot::kPos);

  MatX P_an(a + 6, n);
  P_an.topRows(a) = s.P_an;
  P_an.middleRows<3>(a) = s.P_an.middleRows<3>(slot::kTheta);
  P_an.bottomRows<3>() = s.P_an.middleRows<3>(slot::kPos);

  s.P_aa = std::move(P_aa);
  s.P_an = std::move(P_an);
  s.clones.push_back({s.nav.R_LI, s.nav.p_LI, timestamp});
}

namespace {

// Removes `count` rows/cols starting at `start` from a square matrix.
MatX drop_symmetric(const MatX &P, int start, int count) {
  const int n = static_cast<int>(P.rows()), rest = n - start - count;
  MatX out(n - count, n - count);
  out.topLeftCorner(start, start) = P.topLeftCorner(start, start);
  out.topRightCorner(start, rest) = P.topRightCorner(start, rest);
  out.bottomLeftCorner(rest, start) = P.bottomLeftCorner(rest, start);
  out.bottomRightCorner(rest, rest) = P.bottomRightCorner(rest, rest);
  return out;
}

MatX drop_rows(const MatX &M, int start, int count) {
  const int rest = static_cast<int>(M.rows()) - start - count;
  MatX out(M.rows() - count, M.cols());
  out.topRows(start) = M.topRows(start);
  out.bottomRows(rest) = M.bottomRows(rest);
  return out;
}

MatX drop_cols(const MatX &M, int start, int count) {
  const int rest = static_cast<int>(M.cols()) - start - count;
  MatX out(M.rows(), M.cols() - count);
  out.leftCols(start) = M.leftCols(start);
  out.rightCols(rest) = M.rightCols(rest);
  return out;
}

}  // namespace

void marginalize_clone(AugmentedState &s, int index) {
  if (index < 0 || index >= s.num_clones())
    throw std::out_of_range("marginalize_clone: no such clone");
  const int o = AugmentedState::clone_offset(index);
  s.P_aa = drop_symmetric(s.P_aa, o, 6);
  s.P_an = drop_rows(s.P_an, o, 6);
  s.clones.erase(s.clones.begin() + index);
}

void insert_keyframes(AugmentedState &s, const std::vector<MapKeyframePose> &kfs, const std::vector<Mat6> &priors) {
  if (kfs.size() != priors.size())
    throw std::invalid_argument("insert_keyframes: one prior per keyframe required");
  for (size_t k = 0; k < kfs.size(); ++k) {
    if (s.keyframe_index(kfs[k].id) >= 0)
      throw std::invalid_argument("insert_keyframes: duplicate keyframe id " + std::to_string(kfs[k].id));
    for (size_t l = 0; l < k; ++l)
      if (kfs[l].id == kfs[k].id)
        throw std::invalid_argument("insert_keyframes: duplicate keyframe id " + std::to_string(kfs[k].id));
  }
  if (kfs.empty())
    return;
  const int a = s.active_dim(), n = s.nuisance_dim(), add = 6 * static_cast<int>(kfs.size());
  MatX P_an = MatX::Zero(a, n + add);
  P_an.leftCols(n) = s.P_an;
  MatX P_nn = MatX::Zero(n + add, n + add);
  P_nn.topLeftCorner(n, n) = s.P_nn;
  for (size_t k = 0; k < kfs.size(); ++k)
    P_nn.block<6, 6>(n + 6 * k, n + 6 * k) = 0.5 * (priors[k] + priors[k].transpose());
  s.P_an = std::move(P_an);
  s.P_nn = std::move(P_nn);
  s.keyframes.insert(s.keyframes.end(), kfs.begin(), kfs.end());
}

void remove_keyframe(AugmentedState &s, int id) {
  const int j = s.keyframe_index(id);
  if (j < 0)
    throw std::invalid_argument("remove_keyframe: unknown id " + std::to_string(id));
  const int o = AugmentedState::keyframe_offset(j);
  s.P_nn = drop_symmetric(s.P_nn, o, 6);
  s.P_an = drop_cols(s.P_an, o, 6);
  s.keyframes.erase(s.keyframes.begin() + j);
}

void init_augmented_variable(AugmentedState &s, const Pose &T_LG, const Mat6 &cov) {
  if (s.aug_initialized)
    throw std::logic_error("init_augmented_variable: already initialized");
  s.nav.R_LG = T_LG.R;
  s.nav.p_LG = T_LG.p;
  s.P_aa.middleRows<6>(slot::kPosG).setZero();
  s.P_aa.middleCols<6>(slot::kPosG).setZero();
  s.P_aa.block<6, 6>(slot::kPosG, slot::kPosG) = 0.5 * (cov + cov.transpose());
  s.P_an.middleRows<6>(slot::kPosG).setZero();
  s.oc_anchor = T_LG.R;
  s.aug_initialized = true;
}

MatX active_chart_jacobian(const AugmentedState &s) {
  const int a = s.active_dim();
  MatX J = MatX::Identity(a, a);
  const Mat3 &R = s.nav.R_LI;
  J.block<3, 3>(slot::kTheta, slot::kTheta) = R;
  J.block<3, 3>(slot::kVel, slot::kTheta) = skew(s.nav.v_LI) * R;
  J.block<3, 3>(slot::kPos, slot::kTheta) = skew(s.nav.p_LI) * R;
  J.block<3, 3>(slot::kPosG, slot::kTheta) = skew(s.nav.p_LG) * R;
  J.block<3, 3>(slot::kThetaG, slot::kThetaG) = s.nav.R_LG;
  J.block<6, 6>(slot::kThetaC, slot::kThetaC) = pose_chart_jacobian(s.extrinsic_pose());
  for (int i = 0; i < s.num_clones(); ++i) {
    const int o = AugmentedState::clone_offset(i);
    J.block<6, 6>(o, o) = pose_chart_jacobian(s.clone_pose(i));
  }
  return J;
}

double min_eigenvalue(const MatX &P) {
  if (P.size() == 0)
    return 0.0;
  Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (P + P.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace mapvil
