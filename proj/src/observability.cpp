#include "mapvil/observability.hpp"

#include "mapvil/propagation.hpp"

#include <Eigen/SVD>

#include <random>
#include <stdexcept>

namespace mapvil {

std::string ObservabilityCase::name() const {
  std::string n = chart == ErrorChart::Standard ? "standard" : "invariant";
  n += system == MapSystem::Perfect ? "/perfect-map" : "/imperfect-map";
  n += lin == Linearization::Ideal ? "/ideal" : "/estimated";
  if (oc)
    n += "/oc";
  return n;
}

int ObservabilityCase::claimed_null_dim() const {
  if (oc)
    return 10;
  if (lin == Linearization::Ideal)
    return system == MapSystem::Perfect ? 4 : 10;
  return chart == ErrorChart::Standard ? 3 : 4;
}

std::vector<ObservabilityCase> all_cases() {
  using C = ObservabilityCase;
  const auto S = ErrorChart::Standard, I = ErrorChart::Invariant;
  const auto P = MapSystem::Perfect, Q = MapSystem::Imperfect;
  const auto id = Linearization::Ideal, est = Linearization::Estimated;
  return {C{P, S, id}, C{P, S, est}, C{P, I, id}, C{P, I, est},
          C{Q, S, id}, C{Q, S, est}, C{Q, I, id}, C{Q, I, est}, C{Q, I, est, true}};
}

bool ObservabilityScenario::degenerate() const {
  double w = 0.0, da = 0.0;
  for (size_t k = 0; k < gyro.size(); ++k) {
    w = std::max(w, gyro[k].norm());
    if (k > 0)
      da = std::max(da, (R[k] * accel[k] - R[k - 1] * accel[k - 1]).norm());
  }
  return w < 1e-6 || da < 1e-6;
}

ObservabilityScenario random_scenario(std::uint64_t seed, int steps, double dt, int n_local, int n_map,
                                      int n_keyframes) {
  if (steps < 2 || dt <= 0.0)
    throw std::invalid_argument("random_scenario: need at least two steps and dt > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto randn3 = [&]() -> Vec3 { return {n01(rng), n01(rng), n01(rng)}; };
  const Vec3 g = gravity();

  ObservabilityScenario sc;
  sc.dt = dt;
  Mat3 R = so3_exp(0.3 * randn3());
  Vec3 v = randn3(), p = randn3();
  for (int k = 0; k < steps; ++k) {
    sc.R.push_back(R);
    sc.v.push_back(v);
    sc.p.push_back(p);
    const Vec3 w = 0.4 * randn3();
    const Vec3 acc_L = 0.8 * randn3();
    const Vec3 a = R.transpose() * (acc_L - g);
    sc.gyro.push_back(w);
    sc.accel.push_back(a);
    const Vec3 phi = w * dt;
    const Vec3 dv = R * so3_left_jacobian(phi) * a * dt;
    const Vec3 dp = R * so3_gamma2(phi) * a * dt * dt;
    p = p + v * dt + 0.5 * g * dt * dt + dp;
    v = v + g * dt + dv;
    R = R * so3_exp(phi);
  }

  Vec3 centre = Vec3::Zero();
  for (const auto &x : sc.p)
    centre += x;
  centre /= steps;

  // Features far enough from every camera centre that no projection nears
  // zero depth.
  auto far_point = [&](const Vec3 &c) -> Vec3 {
    for (;;) {
      const Vec3 x = c + 15.0 * randn3();
      bool ok = true;
      for (int k = 0; k < steps && ok; ++k)
        ok = std::abs((sc.R[k].transpose() * (x - sc.p[k])).z()) > 1.0;
      if (ok)
        return x;
    }
  };
  for (int i = 0; i < n_local; ++i)
    sc.local_features.push_back(far_point(centre));

  sc.T_LG = Pose{so3_exp(0.5 * randn3()), 2.0 * randn3()};
  std::vector<Vec3> map_L;
  for (int i = 0; i < n_map; ++i) {
    map_L.push_back(far_point(centre));
    sc.map_features.push_back(sc.T_LG.inverse().transform(map_L.back()));
  }
  for (int i = 0; i < n_keyframes; ++i) {
    for (;;) {
      const Pose T{so3_exp(1.0 * randn3()), sc.T_LG.inverse().transform(centre + 5.0 * randn3())};
      bool ok = true;
      for (const auto &f : sc.map_features)
        ok = ok && std::abs((T.inverse().transform(f)).z()) > 1.0;
      if (ok) {
        sc.keyframes.push_back(T);
        break;
      }
    }
  }
  return sc;
}

BasisValues truth_values(const ObservabilityScenario &sc) {
  BasisValues b;
  b.R_I = sc.R.front();
  b.v = sc.v.front();
  b.p = sc.p.front();
  b.local_features = sc.local_features;
  b.T_LG = sc.T_LG;
  b.keyframes = sc.keyframes;
  b.map_features = sc.map_features;
  return b;
}

ObservabilityLayout::ObservabilityLayout(MapSystem sys, ErrorChart chart, int n_local, int n_keyframes, int n_map) {
  const int g = pf + 3 * n_local;
  if (chart == ErrorChart::Standard) {
    thG = g;
    pG = g + 3;
  } else {
    pG = g;
    thG = g + 3;
  }
  kf = g + 6;
  F = kf + (sys == MapSystem::Imperfect ? 6 * n_keyframes : 0);
  dim = F + (sys == MapSystem::Imperfect ? 3 * n_map : 0);
}

namespace {

// Camera with unit focal length so pixel and bearing scales coincide.
PinholeCamera normalized_camera() {
  PinholeCamera c;
  c.fx = c.fy = 1.0;
  c.cx = c.cy = 0.0;
  return c;
}

struct Perturber {
  std::mt19937_64 rng;
  std::normal_distribution<double> n01{0.0, 1.0};
  double sigma;
  bool active;

  Vec3 vec(const Vec3 &x) {
    if (!active)
      return x;
    return x + sigma * Vec3(n01(rng), n01(rng), n01(rng));
  }
  Mat3 rot(const Mat3 &R) {
    if (!active)
      return R;
    return R * so3_exp(sigma * Vec3(n01(rng), n01(rng), n01(rng)));
  }
  Pose pose(const Pose &T) { return {rot(T.R), vec(T.p)}; }
};

// Standard-chart transition of the nav block over one ZOH interval, from the
// states at both ends.
Eigen::Matrix<double, 9, 9> standard_phi(const Mat3 &R0, const Mat3 &R1, const Vec3 &v0, const Vec3 &v1,
                                         const Vec3 &p0, const Vec3 &p1, double dt) {
  const Vec3 g = gravity();
  const Vec3 dv = v1 - v0 - g * dt;
  const Vec3 dp = p1 - p0 - v0 * dt - 0.5 * g * dt * dt;
  Eigen::Matrix<double, 9, 9> F = Eigen::Matrix<double, 9, 9>::Identity();
  F.block<3, 3>(0, 0) = R1.transpose() * R0;
  F.block<3, 3>(3, 0) = -skew(dv) * R0;
  F.block<3, 3>(6, 0) = -skew(dp) * R0;
  F.block<3, 3>(6, 3) = dt * Mat3::Identity();
  return F;
}

}  // namespace

ObservabilityMatrix build_observability_matrix(const ObservabilityCase &c, const ObservabilityScenario &sc,
                                               double sigma, std::uint64_t seed) {
  if (c.oc && (c.chart != ErrorChart::Invariant || c.system != MapSystem::Imperfect))
    throw std::invalid_argument("observability: OC applies to the imperfect invariant system only");
  const int T = sc.steps();
  const int nl = static_cast<int>(sc.local_features.size());
  const int nk = static_cast<int>(sc.keyframes.size());
  const int nm = static_cast<int>(sc.map_features.size());
  const bool imperfect = c.system == MapSystem::Imperfect;
  const ObservabilityLayout L(c.system, c.chart, nl, nk, nm);
  const PinholeCamera cam = normalized_camera();
  const Pose I_pose;
  const double dt = sc.dt;
  Perturber pert{std::mt19937_64(seed), {}, sigma, c.lin == Linearization::Estimated};

  // With OC the nuisance map keeps one estimate for the whole window and the
  // constraint basis is frozen at it together with an anchor rotation.
  ObservabilityMatrix out;
  BasisValues frozen = truth_values(sc);
  MatX N_oc;
  if (c.oc) {
    frozen.T_LG = pert.pose(sc.T_LG);
    for (auto &k : frozen.keyframes)
      k = pert.pose(k);
    for (auto &f : frozen.map_features)
      f = pert.vec(f);
    out.oc_values = frozen;
    N_oc = theoretical_null_basis(c, frozen);
  }

  const int rows_per_step = 2 * nl + 2 * nm + (imperfect ? 2 * nk * nm : 0);
  out.rows_per_step = rows_per_step;
  out.degenerate = sc.degenerate();
  out.M = MatX::Zero(static_cast<Eigen::Index>(rows_per_step) * T, L.dim);

  // Invariant transition is state independent: exp(A dt) on the nav block.
  MatX phi_inv_step;
  if (c.chart == ErrorChart::Invariant) {
    MatX A = MatX::Zero(9, 9);
    A.block<3, 3>(3, 0) = skew(gravity());
    A.block<3, 3>(6, 3) = Mat3::Identity();
    phi_inv_step = expm(A * dt);
  }

  MatX Phi = MatX::Identity(L.dim, L.dim);
  for (int k = 0; k < T; ++k) {
    MatX H = MatX::Zero(rows_per_step, L.dim);
    const Pose T_LI{pert.rot(sc.R[k]), pert.vec(sc.p[k])};
    const Pose T_LG = c.oc ? Pose{pert.rot(sc.T_LG.R), pert.vec(sc.T_LG.p)} : pert.pose(sc.T_LG);
    int row = 0;

    for (int i = 0; i < nl; ++i) {
      const auto J = local_view_jacobian(cam, T_LI, I_pose, pert.vec(sc.local_features[i]), c.chart, false);
      H.block<2, 3>(row, L.theta) = J->theta + J->theta_anchor;
      H.block<2, 3>(row, L.p) = J->p;
      H.block<2, 3>(row, L.pf + 3 * i) = J->f;
      row += 2;
    }

    for (int j = 0; j < nm; ++j) {
      const Vec3 p_F = !imperfect ? sc.map_features[j] : c.oc ? frozen.map_features[j] : pert.vec(sc.map_features[j]);
      const auto J = map_current_jacobian(cam, T_LI, I_pose, T_LG, p_F, c.chart, false);
      MatX Hc = MatX::Zero(2, L.dim);
      Hc.block<2, 3>(0, L.theta) = J->theta;
      Hc.block<2, 3>(0, L.p) = J->p;
      Hc.block<2, 3>(0, L.pG) = J->p_G;
      Hc.block<2, 3>(0, L.thG) = J->theta_G;
      if (imperfect)
        Hc.block<2, 3>(0, L.F + 3 * j) = J->F;
      H.middleRows(row, 2) = c.oc ? oc_project(Hc, N_oc) : Hc;
      row += 2;
    }

    if (imperfect) {
      for (int l = 0; l < nk; ++l) {
        for (int j = 0; j < nm; ++j) {
          const Pose T_KF = c.oc ? frozen.keyframes[l] : pert.pose(sc.keyframes[l]);
          const Vec3 p_F = c.oc ? frozen.map_features[j] : pert.vec(sc.map_features[j]);
          const auto J = map_keyframe_jacobian(cam, T_KF, p_F, c.chart, false);
          H.block<2, 3>(row, L.kf + 6 * l) = J->theta_kf;
          H.block<2, 3>(row, L.kf + 6 * l + 3) = J->p_kf;
          H.block<2, 3>(row, L.F + 3 * j) = J->F;
          row += 2;
        }
      }
    }

    out.M.middleRows(static_cast<Eigen::Index>(rows_per_step) * k, rows_per_step) = H * Phi;

    if (k + 1 < T) {
      // Only the nav block evolves; everything else is static.
      if (c.chart == ErrorChart::Invariant) {
        Phi.topRows(9) = (phi_inv_step * Phi.topRows(9)).eval();
      } else {
        const auto F = standard_phi(pert.rot(sc.R[k]), pert.rot(sc.R[k + 1]), pert.vec(sc.v[k]),
                                    pert.vec(sc.v[k + 1]), pert.vec(sc.p[k]), pert.vec(sc.p[k + 1]), dt);
        Phi.topRows(9) = (F * Phi.topRows(9)).eval();
      }
    }
  }
  return out;
}

NullSpace null_space(const MatX &M, double tol) {
  NullSpace ns;
  const int n = static_cast<int>(M.cols());
  if (M.rows() == 0 || M.norm() == 0.0) {
    ns.basis = MatX::Identity(n, n);
    ns.dim = n;
    ns.singular_values = VecX::Zero(std::min<Eigen::Index>(M.rows(), n));
    return ns;
  }
  Eigen::BDCSVD<MatX> svd(M, Eigen::ComputeFullV);
  ns.singular_values = svd.singularValues();
  const double cut = tol * ns.singular_values(0);
  int rank = 0;
  while (rank < ns.singular_values.size() && ns.singular_values(rank) > cut)
    ++rank;
  ns.dim = n - rank;
  ns.basis = svd.matrixV().rightCols(ns.dim);
  return ns;
}

MatX theoretical_null_basis(const ObservabilityCase &c, const BasisValues &b) {
  const int nl = static_cast<int>(b.local_features.size());
  const int nk = static_cast<int>(b.keyframes.size());
  const int nm = static_cast<int>(b.map_features.size());
  const ObservabilityLayout L(c.system, c.chart, nl, nk, nm);
  const int cols = c.claimed_null_dim();
  const Vec3 g = gravity();
  const Mat3 I = Mat3::Identity();
  const Mat3 &RG = b.T_LG.R;
  MatX N = MatX::Zero(L.dim, cols);

  // Columns are [yaw?, translation (3), map translation (3), map rotation (3)].
  const bool yaw = cols != 3;
  const int t0 = yaw ? 1 : 0;
  N.block<3, 3>(L.p, t0) = I;
  for (int i = 0; i < nl; ++i)
    N.block<3, 3>(L.pf + 3 * i, t0) = I;
  N.block<3, 3>(L.pG, t0) = I;

  if (c.chart == ErrorChart::Invariant) {
    if (yaw) {
      N.block<3, 1>(L.theta, 0) = g;
      N.block<3, 1>(L.thG, 0) = g;
    }
    if (cols == 10) {
      N.block<3, 3>(L.pG, 4) = -RG;
      N.block<3, 3>(L.thG, 7) = I;
      for (int l = 0; l < nk; ++l) {
        N.block<3, 3>(L.kf + 6 * l, 7) = -RG.transpose();
        N.block<3, 3>(L.kf + 6 * l + 3, 4) = I;
      }
      for (int j = 0; j < nm; ++j) {
        N.block<3, 3>(L.F + 3 * j, 4) = I;
        N.block<3, 3>(L.F + 3 * j, 7) = skew(b.map_features[j]) * RG.transpose();
      }
    }
  } else {
    if (yaw) {
      N.block<3, 1>(L.theta, 0) = b.R_I.transpose() * g;
      N.block<3, 1>(L.v, 0) = -skew(b.v) * g;
      N.block<3, 1>(L.p, 0) = -skew(b.p) * g;
      for (int i = 0; i < nl; ++i)
        N.block<3, 1>(L.pf + 3 * i, 0) = -skew(b.local_features[i]) * g;
      N.block<3, 1>(L.thG, 0) = RG.transpose() * g;
      N.block<3, 1>(L.pG, 0) = -skew(b.T_LG.p) * g;
    }
    if (cols == 10) {
      N.block<3, 3>(L.pG, 4) = -RG;
      N.block<3, 3>(L.thG, 7) = -I;
      for (int l = 0; l < nk; ++l) {
        N.block<3, 3>(L.kf + 6 * l, 7) = b.keyframes[l].R.transpose();
        N.block<3, 3>(L.kf + 6 * l + 3, 4) = I;
        N.block<3, 3>(L.kf + 6 * l + 3, 7) = -skew(b.keyframes[l].p);
      }
      for (int j = 0; j < nm; ++j) {
        N.block<3, 3>(L.F + 3 * j, 4) = I;
        N.block<3, 3>(L.F + 3 * j, 7) = -skew(b.map_features[j]);
      }
    }
  }
  return N;
}

CaseReport verify_case(const ObservabilityCase &c, const ObservabilityScenario &sc, double sigma,
                       std::uint64_t seed) {
  const auto om = build_observability_matrix(c, sc, sigma, seed);
  const auto ns = null_space(om.M);
  MatX N = theoretical_null_basis(c, c.oc ? om.oc_values : truth_values(sc));
  N.colwise().normalize();

  CaseReport r;
  r.name = c.name();
  r.claimed = c.claimed_null_dim();
  r.numeric = ns.dim;
  r.degenerate = om.degenerate;
  const double mnorm = ns.singular_values(0);
  const double rn = Eigen::JacobiSVD<MatX>(om.M * N).singularValues()(0);
  r.basis_residual = mnorm > 0.0 ? rn / mnorm : rn;
  const int basis_rank = static_cast<int>(Eigen::FullPivLU<MatX>(N).rank());
  r.pass = !r.degenerate && r.numeric == r.claimed && basis_rank == r.claimed && r.basis_residual <= 1e-6;
  return r;
}

std::vector<CaseReport> run_observability_suite(std::uint64_t seed, int trajectories, int steps) {
  std::vector<CaseReport> out;
  for (int t = 0; t < trajectories; ++t) {
    const auto sc = random_scenario(seed + 1000 * t, steps);
    for (const auto &c : all_cases())
      out.push_back(verify_case(c, sc, 1e-3, seed + 1000 * t + 1));
  }
  return out;
}

}  // namespace mapvil
