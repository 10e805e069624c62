#include "mapvil/update.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <array>
#include <mutex>

namespace mapvil {

double chi2_threshold(int dof, double probability) {
  if (dof <= 0)
    return 0.0;
  if (probability == 0.95 && dof <= 1000) {
    static std::array<double, 1001> table{};
    static std::once_flag once;
    std::call_once(once, [] {
      for (int k = 1; k <= 1000; ++k)
        table[k] = boost::math::quantile(boost::math::chi_squared(k), 0.95);
    });
    return table[dof];
  }
  return boost::math::quantile(boost::math::chi_squared(dof), probability);
}

namespace {

struct NuisanceBlocks {
  MatX P_an;  ///< active x involved
  MatX P_nn;  ///< involved x involved
};

NuisanceBlocks involved_blocks(const AugmentedState &s, const StackedResidual &sr) {
  const int k = static_cast<int>(sr.keyframes.size());
  NuisanceBlocks b;
  b.P_an.resize(s.active_dim(), 6 * k);
  b.P_nn.resize(6 * k, 6 * k);
  for (int i = 0; i < k; ++i) {
    const int oi = AugmentedState::keyframe_offset(sr.keyframes[i]);
    b.P_an.middleCols<6>(6 * i) = s.P_an.middleCols<6>(oi);
    for (int j = 0; j < k; ++j)
      b.P_nn.block<6, 6>(6 * i, 6 * j) = s.P_nn.block<6, 6>(oi, AugmentedState::keyframe_offset(sr.keyframes[j]));
  }
  return b;
}

void check_shapes(const AugmentedState &s, const StackedResidual &sr) {
  if (sr.H_a.rows() != sr.rows() || sr.H_a.cols() != s.active_dim() ||
      sr.H_n.cols() != 6 * static_cast<Eigen::Index>(sr.keyframes.size()) ||
      (sr.H_n.cols() > 0 && sr.H_n.rows() != sr.rows()) || sr.V.rows() != sr.rows() || sr.V.cols() != sr.rows())
    throw std::invalid_argument("update: residual does not match the state layout");
  for (int k : sr.keyframes)
    if (k < 0 || k >= s.num_keyframes())
      throw std::invalid_argument("update: residual references a keyframe outside the state");
}

// H P restricted to the active columns, and the S matrix.
struct Innovation {
  MatX HPa;
  MatX HPn_involved;
  MatX S;
};

Innovation innovation(const AugmentedState &s, const StackedResidual &sr) {
  check_shapes(s, sr);
  Innovation in;
  in.HPa = sr.H_a * s.P_aa;
  if (!sr.keyframes.empty()) {
    const NuisanceBlocks b = involved_blocks(s, sr);
    in.HPa.noalias() += sr.H_n * b.P_an.transpose();
    in.HPn_involved = sr.H_a * b.P_an + sr.H_n * b.P_nn;
    in.S = in.HPa * sr.H_a.transpose() + in.HPn_involved * sr.H_n.transpose() + sr.V;
  } else {
    in.S = in.HPa * sr.H_a.transpose() + sr.V;
  }
  in.S = 0.5 * (in.S + in.S.transpose()).eval();
  return in;
}

bool well_conditioned(const Eigen::LLT<MatX> &llt, double max_condition) {
  return llt.info() == Eigen::Success && llt.rcond() * max_condition >= 1.0;
}

bool gate_ok(const Eigen::LLT<MatX> &llt, const VecX &r, const UpdateOptions &opt) {
  const double m = r.dot(llt.solve(r));
  return m <= opt.chi2_multiplier * chi2_threshold(static_cast<int>(r.size()), opt.chi2_probability);
}

}  // namespace

MatX innovation_covariance(const AugmentedState &s, const StackedResidual &sr) { return innovation(s, sr).S; }

bool passes_gate(const AugmentedState &s, const StackedResidual &sr, const UpdateOptions &opt) {
  const Eigen::LLT<MatX> llt(innovation(s, sr).S);
  if (llt.info() != Eigen::Success)
    return false;
  return gate_ok(llt, sr.r, opt);
}

UpdateStatus schmidt_update(AugmentedState &s, const StackedResidual &sr, const UpdateOptions &opt) {
  if (sr.empty())
    return UpdateStatus::Empty;
  const Innovation in = innovation(s, sr);
  const Eigen::LLT<MatX> llt(in.S);
  if (!well_conditioned(llt, opt.max_condition))
    return UpdateStatus::IllConditioned;
  if (opt.gate && !gate_ok(llt, sr.r, opt))
    return UpdateStatus::Gated;

  // H P_{., n} over every nuisance column; cost is linear in the nuisance size.
  MatX HPn = sr.H_a * s.P_an;
  for (size_t k = 0; k < sr.keyframes.size(); ++k)
    HPn.noalias() += sr.H_n.middleCols<6>(6 * k) * s.P_nn.middleRows<6>(AugmentedState::keyframe_offset(sr.keyframes[k]));

  const MatX KaT = llt.solve(in.HPa);  // S^-1 H P_{., a}
  const VecX delta = KaT.transpose() * sr.r;
  s.P_aa.noalias() -= KaT.transpose() * in.HPa;
  if (s.nuisance_dim() > 0)
    s.P_an.noalias() -= KaT.transpose() * HPn;
  s.symmetrize();
  retract(s, delta, false);
  return UpdateStatus::Applied;
}

UpdateStatus full_update(AugmentedState &s, const StackedResidual &sr, const UpdateOptions &opt) {
  if (sr.empty())
    return UpdateStatus::Empty;
  check_shapes(s, sr);
  const int a = s.active_dim(), n = s.nuisance_dim();

  MatX H = MatX::Zero(sr.rows(), a + n);
  H.leftCols(a) = sr.H_a;
  for (size_t k = 0; k < sr.keyframes.size(); ++k)
    H.middleCols<6>(a + AugmentedState::keyframe_offset(sr.keyframes[k])) = sr.H_n.middleCols<6>(6 * k);

  const MatX P = s.covariance();
  const MatX HP = H * P;
  MatX S = HP * H.transpose() + sr.V;
  S = 0.5 * (S + S.transpose()).eval();
  const Eigen::LLT<MatX> llt(S);
  if (!well_conditioned(llt, opt.max_condition))
    return UpdateStatus::IllConditioned;
  if (opt.gate && !gate_ok(llt, sr.r, opt))
    return UpdateStatus::Gated;

  const MatX KT = llt.solve(HP);  // K^T
  const MatX KHP = KT.transpose() * HP;
  const MatX KSK = KT.transpose() * (S * KT);
  MatX Pn = P - KHP - KHP.transpose() + KSK;
  Pn = 0.5 * (Pn + Pn.transpose()).eval();
  const VecX delta = KT.transpose() * sr.r;
  s.set_covariance(Pn);
  retract(s, delta, true);
  return UpdateStatus::Applied;
}

void compress(StackedResidual &sr) {
  const int rows = sr.rows(), cols = static_cast<int>(sr.H_a.cols());
  if (rows <= cols || !sr.keyframes.empty())
    return;
  const double s2 = sr.V(0, 0);
  if ((sr.V - s2 * MatX::Identity(rows, rows)).cwiseAbs().maxCoeff() != 0.0)
    return;
  MatX M(rows, cols + 1);
  M << sr.H_a, sr.r;
  Eigen::HouseholderQR<MatX> qr(sr.H_a);
  M.applyOnTheLeft(qr.householderQ().transpose());
  sr.H_a = M.topLeftCorner(cols, cols).triangularView<Eigen::Upper>();
  sr.r = M.topRightCorner(cols, 1);
  sr.V = s2 * MatX::Identity(cols, cols);
  sr.H_n.resize(cols, 0);
}

UpdateStats msckf_local_update(AugmentedState &s, const PinholeCamera &cam, const std::vector<FeatureTrack> &tracks,
                               bool schmidt, const UpdateOptions &opt, const TriangulationOptions &tri) {
  UpdateStats st;
  StackedResidual stacked;
  const double s2 = cam.sigma_px * cam.sigma_px;
  const Pose T_IC = s.extrinsic_pose();

  for (const auto &track : tracks) {
    ++st.candidates;
    FeatureTrack in_window{track.feature_id, {}};
    std::vector<Pose> cams;
    std::vector<Vec2> uvs;
    for (const auto &ob : track.obs) {
      for (int c = 0; c < s.num_clones(); ++c) {
        if (s.clones[c].timestamp == ob.timestamp) {
          in_window.obs.push_back(ob);
          cams.push_back(s.clone_pose(c) * T_IC);
          uvs.push_back(ob.uv);
          break;
        }
      }
    }
    if (in_window.obs.size() < 3) {
      ++st.dropped;
      continue;
    }
    const auto p_f = triangulate(cam, cams, uvs, tri);
    if (!p_f) {
      ++st.dropped;
      continue;
    }
    const auto rows = msckf_feature_rows(s, cam, in_window, *p_f);
    if (!rows) {
      ++st.dropped;
      continue;
    }
    const int m = static_cast<int>(rows->r.size());
    const auto proj = stack_and_project_feature(rows->H_x, rows->H_f, rows->r, s2 * MatX::Identity(m, m));
    if (!proj) {
      ++st.dropped;
      continue;
    }
    StackedResidual sr;
    sr.r = proj->r;
    sr.H_a = proj->H;
    sr.H_n.resize(sr.r.size(), 0);
    sr.V = proj->V;
    if (opt.gate && !passes_gate(s, sr, opt)) {
      ++st.gated;
      continue;
    }
    ++st.used;
    append(stacked, sr);
  }
  if (stacked.empty())
    return st;
  compress(stacked);
  st.rows = stacked.rows();
  UpdateOptions no_gate = opt;
  no_gate.gate = false;
  st.status = schmidt ? schmidt_update(s, stacked, no_gate) : full_update(s, stacked, no_gate);
  return st;
}

std::optional<StackedResidual> map_match_residual(const AugmentedState &s, const PinholeCamera &cam,
                                                  const MapMatch &m, MapUpdateMode mode) {
  const double s2 = cam.sigma_px * cam.sigma_px;
  const auto cur = map_obs_jacobian_current(s, cam, m);
  if (!cur)
    return std::nullopt;
  const int a = s.active_dim();

  if (mode == MapUpdateMode::ExactMap) {
    StackedResidual sr;
    sr.r = cur->r;
    sr.H_a = cur->H_x;
    sr.H_n.resize(2, 0);
    sr.V = s2 * MatX::Identity(2, 2);
    return sr;
  }

  std::vector<int> kf_idx;
  std::vector<FeatureRows> kf_rows;
  for (const auto &ob : m.keyframe_obs) {
    const int j = s.keyframe_index(ob.keyframe_id);
    if (j < 0 || std::find(kf_idx.begin(), kf_idx.end(), j) != kf_idx.end())
      continue;
    auto rows = map_obs_jacobian_keyframe(s, cam, m, ob.keyframe_id);
    if (!rows)
      continue;
    kf_idx.push_back(j);
    kf_rows.push_back(std::move(*rows));
  }
  const int k = static_cast<int>(kf_idx.size());
  const int rows = 2 + 2 * k, cols = a + 6 * k;

  MatX H_x = MatX::Zero(rows, cols);
  MatX H_f(rows, 3);
  VecX r(rows);
  H_x.topLeftCorner(2, a) = cur->H_x;
  H_f.topRows<2>() = cur->H_f;
  r.head<2>() = cur->r;
  for (int i = 0; i < k; ++i) {
    H_x.block<2, 6>(2 + 2 * i, a + 6 * i) = kf_rows[i].H_x;
    H_f.middleRows<2>(2 + 2 * i) = kf_rows[i].H_f;
    r.segment<2>(2 + 2 * i) = kf_rows[i].r;
  }

  if (mode == MapUpdateMode::SchmidtOC) {
    const MatX N = oc_null_space(s, kf_idx, {m.p_GF});
    MatX Hc(2, cols + 3);
    Hc << H_x.topRows<2>(), H_f.topRows<2>();
    const MatX Hs = oc_project(Hc, N);
    H_x.topRows<2>() = Hs.leftCols(cols);
    H_f.topRows<2>() = Hs.rightCols<3>();
  }

  const auto proj = stack_and_project_feature(H_x, H_f, r, s2 * MatX::Identity(rows, rows));
  if (!proj)
    return std::nullopt;
  StackedResidual sr;
  sr.r = proj->r;
  sr.H_a = proj->H.leftCols(a);
  sr.H_n = proj->H.rightCols(6 * k);
  sr.keyframes = kf_idx;
  sr.V = proj->V;
  return sr;
}

UpdateStats map_update(AugmentedState &s, const PinholeCamera &cam, const std::vector<MapMatch> &matches,
                       MapUpdateMode mode, const UpdateOptions &opt) {
  UpdateStats st;
  if (!s.aug_initialized)
    return st;
  StackedResidual stacked;
  for (const auto &m : matches) {
    ++st.candidates;
    const auto sr = map_match_residual(s, cam, m, mode);
    if (!sr) {
      ++st.dropped;
      continue;
    }
    if (opt.gate && !passes_gate(s, *sr, opt)) {
      ++st.gated;
      continue;
    }
    ++st.used;
    append(stacked, *sr);
  }
  if (stacked.empty())
    return st;
  st.rows = stacked.rows();
  UpdateOptions no_gate = opt;
  no_gate.gate = false;
  st.status = mode == MapUpdateMode::ExactMap ? full_update(s, stacked, no_gate) : schmidt_update(s, stacked, no_gate);
  return st;
}

}  // namespace mapvil
