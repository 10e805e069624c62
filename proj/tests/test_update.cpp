#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"

using namespace mapvil;
using namespace mapvil::testing;

namespace {

UpdateOptions no_gate() {
  UpdateOptions o;
  o.gate = false;
  return o;
}

StackedResidual random_residual(Rng &rng, const AugmentedState &s, int rows, std::vector<int> kfs) {
  StackedResidual sr;
  sr.r = randn_vec(rng, rows, 0.1);
  sr.H_a = randn_vec(rng, rows * s.active_dim()).reshaped(rows, s.active_dim());
  sr.H_n = randn_vec(rng, rows * 6 * kfs.size()).reshaped(rows, 6 * kfs.size());
  sr.keyframes = std::move(kfs);
  sr.V = 0.5 * MatX::Identity(rows, rows);
  return sr;
}

MatX dense_H(const AugmentedState &s, const StackedResidual &sr) {
  const int a = s.active_dim();
  MatX H = MatX::Zero(sr.rows(), s.dim());
  H.leftCols(a) = sr.H_a;
  for (size_t k = 0; k < sr.keyframes.size(); ++k)
    H.middleCols(a + 6 * sr.keyframes[k], 6) = sr.H_n.middleCols(6 * k, 6);
  return H;
}

}  // namespace

TEST_CASE("chi2 threshold") {
  CHECK(chi2_threshold(1) == doctest::Approx(3.841458820694124));
  CHECK(chi2_threshold(2) == doctest::Approx(5.991464547107979));
  CHECK(chi2_threshold(10) == doctest::Approx(18.30703805327515));
  CHECK(chi2_threshold(4, 0.99) == doctest::Approx(13.276704135987622));
  CHECK(chi2_threshold(0) == 0.0);
}

TEST_CASE("schmidt update against the dense oracle") {
  Rng rng(41);
  for (ErrorChart chart : {ErrorChart::Invariant, ErrorChart::Standard}) {
    AugmentedState s = random_state(rng, chart, 2, 4);
    const AugmentedState s0 = s;
    const StackedResidual sr = random_residual(rng, s, 5, {1, 3});

    const MatX P = s.covariance(), H = dense_H(s, sr);
    const int a = s.active_dim();
    const MatX S = H * P * H.transpose() + sr.V;
    const MatX Ka = P.topRows(a) * H.transpose() * S.inverse();
    const VecX delta = Ka * sr.r;
    const MatX Paa = s.P_aa - Ka * S * Ka.transpose();
    const MatX Pan = s.P_an - Ka * H * P.rightCols(s.nuisance_dim());

    CHECK(rel_err(innovation_covariance(s, sr), S) < 1e-12);
    REQUIRE(schmidt_update(s, sr, no_gate()) == UpdateStatus::Applied);
    CHECK(rel_err(s.P_aa, Paa) < 1e-10);
    CHECK(rel_err(s.P_an, Pan) < 1e-10);
    AugmentedState expect = s0;
    retract(expect, delta);
    CHECK(state_error(expect, s).norm() < 1e-10);

    // nuisance never touched
    CHECK(s.P_nn == s0.P_nn);
    for (int j = 0; j < s.num_keyframes(); ++j) {
      CHECK(s.keyframes[j].R_GKF == s0.keyframes[j].R_GKF);
      CHECK(s.keyframes[j].p_GKF == s0.keyframes[j].p_GKF);
    }
    CHECK(s.P_aa.trace() <= s0.P_aa.trace());
    CHECK(min_eigenvalue(s.covariance()) > -1e-12);
  }
}

TEST_CASE("schmidt update reduces to a plain update when decoupled") {
  Rng rng(42);
  AugmentedState s = random_state(rng, ErrorChart::Invariant, 1, 2);
  s.P_an.setZero();
  AugmentedState t = s;
  StackedResidual sr = random_residual(rng, s, 4, {});
  CHECK(schmidt_update(s, sr, no_gate()) == UpdateStatus::Applied);
  CHECK(full_update(t, sr, no_gate()) == UpdateStatus::Applied);
  CHECK(rel_err(s.P_aa, t.P_aa) < 1e-12);
  CHECK(state_error(t, s).norm() < 1e-12);
  CHECK(max_abs(s.P_an) == 0.0);
}

TEST_CASE("full update") {
  Rng rng(43);
  // zero residual: mean unchanged, covariance shrinks
  AugmentedState s = random_state(rng, ErrorChart::Invariant, 2, 2);
  const AugmentedState s0 = s;
  StackedResidual sr = random_residual(rng, s, 6, {0, 1});
  sr.r.setZero();
  CHECK(full_update(s, sr, no_gate()) == UpdateStatus::Applied);
  CHECK(state_error(s0, s).norm() < 1e-14);
  CHECK(s.covariance().trace() <= s0.covariance().trace());

  // Joseph form equals (I - K H) P for the optimal gain
  s = s0;
  sr = random_residual(rng, s, 6, {1});
  const MatX P = s.covariance(), H = dense_H(s, sr);
  const MatX K = P * H.transpose() * (H * P * H.transpose() + sr.V).inverse();
  const MatX expect = (MatX::Identity(s.dim(), s.dim()) - K * H) * P;
  full_update(s, sr, no_gate());
  CHECK(rel_err(s.covariance(), expect) < 1e-9);
  AugmentedState m = s0;
  retract(m, K * sr.r, true);
  CHECK(state_error(m, s).norm() < 1e-12);

  // scalar textbook case on one bias component
  AugmentedState b = make_state(ErrorChart::Standard, NavState{}, {}, MatX::Identity(27, 27) * 1e-6);
  b.P_aa(slot::kBg, slot::kBg) = 4.0;
  StackedResidual one;
  one.r = VecX::Constant(1, 0.3);
  one.H_a = MatX::Zero(1, 27);
  one.H_a(0, slot::kBg) = 1.0;
  one.H_n.resize(1, 0);
  one.V = MatX::Constant(1, 1, 1.0);
  full_update(b, one, no_gate());
  CHECK(b.nav.b_g.x() == doctest::Approx(0.3 * 4.0 / 5.0).epsilon(1e-12));
  CHECK(b.P_aa(slot::kBg, slot::kBg) == doctest::Approx(4.0 / 5.0).epsilon(1e-12));
}

TEST_CASE("gating and conditioning") {
  Rng rng(44);
  AugmentedState s = random_state(rng, ErrorChart::Invariant, 1, 1);
  const AugmentedState s0 = s;
  StackedResidual sr = random_residual(rng, s, 3, {0});
  sr.r = VecX::Constant(3, 1e4);
  CHECK_FALSE(passes_gate(s, sr, {}));
  CHECK(schmidt_update(s, sr) == UpdateStatus::Gated);
  CHECK(full_update(s, sr) == UpdateStatus::Gated);
  CHECK(s.P_aa == s0.P_aa);

  sr.r.setZero();
  CHECK(passes_gate(s, sr, {}));

  StackedResidual bad = random_residual(rng, s, 2, {});
  bad.H_a.row(1) = bad.H_a.row(0);
  bad.V.setZero();
  CHECK(schmidt_update(s, bad, no_gate()) == UpdateStatus::IllConditioned);
  CHECK(full_update(s, bad, no_gate()) == UpdateStatus::IllConditioned);
  CHECK(s.P_aa == s0.P_aa);

  CHECK(schmidt_update(s, StackedResidual{}) == UpdateStatus::Empty);
  StackedResidual wrong = random_residual(rng, s, 2, {5});
  CHECK_THROWS_AS(schmidt_update(s, wrong), std::invalid_argument);
}

TEST_CASE("compress keeps the posterior") {
  Rng rng(45);
  AugmentedState s = random_state(rng, ErrorChart::Invariant, 1, 0);
  StackedResidual sr = random_residual(rng, s, 80, {});
  StackedResidual c = sr;
  compress(c);
  CHECK(c.rows() == s.active_dim());
  CHECK(rel_err(c.H_a.transpose() * c.H_a, sr.H_a.transpose() * sr.H_a) < 1e-12);
  CHECK(rel_err(c.H_a.transpose() * c.r, sr.H_a.transpose() * sr.r) < 1e-12);
  AugmentedState t = s;
  full_update(s, sr, no_gate());
  full_update(t, c, no_gate());
  CHECK(rel_err(s.P_aa, t.P_aa) < 1e-10);
  CHECK(state_error(s, t).norm() < 1e-10);
}

TEST_CASE("msckf local update") {
  Rng rng(46);
  for (ErrorChart chart : {ErrorChart::Invariant, ErrorChart::Standard}) {
    Scene sc = make_scene(rng, chart, 4, 0, 0.0);
    const AugmentedState s0 = sc.s;
    FeatureTrack partial = sc.track;
    partial.obs.resize(2);
    FeatureTrack stray = sc.track;
    for (auto &o : stray.obs)
      o.timestamp += 50.0;
    const UpdateStats st = msckf_local_update(sc.s, sc.cam, {sc.track, partial, stray}, false);
    CHECK(st.candidates == 3);
    CHECK(st.used == 1);
    CHECK(st.dropped == 2);
    CHECK(st.status == UpdateStatus::Applied);
    CHECK(st.rows == 2 * 4 - 3);
    CHECK(state_error(s0, sc.s).norm() < 1e-6);  // noise-free track: essentially no correction
    CHECK(sc.s.P_aa.trace() < s0.P_aa.trace());
  }
}

TEST_CASE("map update modes") {
  Rng rng(47);
  Scene sc = make_scene(rng, ErrorChart::Invariant, 2, 2, 1.0);
  const AugmentedState s0 = sc.s;

  const auto exact = map_match_residual(sc.s, sc.cam, sc.match, MapUpdateMode::ExactMap);
  CHECK(exact->rows() == 2);
  CHECK(exact->keyframes.empty());
  const auto sch = map_match_residual(sc.s, sc.cam, sc.match, MapUpdateMode::Schmidt);
  CHECK(sch->rows() == 2 + 4 - 3);
  CHECK(sch->keyframes.size() == 2);

  AugmentedState s = sc.s;
  const UpdateStats st = map_update(s, sc.cam, {sc.match}, MapUpdateMode::SchmidtOC);
  CHECK(st.used == 1);
  CHECK(s.P_nn == s0.P_nn);

  AugmentedState u = sc.s;
  u.aug_initialized = false;
  CHECK(map_update(u, sc.cam, {sc.match}, MapUpdateMode::Schmidt).candidates == 0);

  // keyframes missing from the state are skipped
  MapMatch m = sc.match;
  m.keyframe_obs.push_back({999, Vec2(100, 100)});
  CHECK(map_match_residual(sc.s, sc.cam, m, MapUpdateMode::Schmidt)->keyframes.size() == 2);
}

TEST_CASE("exact map and vanishing map noise agree") {
  // With exact keyframes and noise-free keyframe pixels, projecting the
  // feature out of [current; keyframe] rows recovers the exact-map update.
  Rng rng(48);
  for (int t = 0; t < 5; ++t) {
    Scene sc = make_scene(rng, ErrorChart::Invariant, 1, 2, 0.0);
    AugmentedState &s = sc.s;
    s.P_an.setZero();
    s.P_nn.setZero();
    sc.match.uv += randn_vec(rng, 2, 1.0);  // only the current pixel is noisy
    const int a = s.active_dim();

    const auto cur = map_obs_jacobian_current(s, sc.cam, sc.match);
    MatX Hx = MatX::Zero(6, a + 12), Hf(6, 3);
    VecX r(6);
    Hx.topLeftCorner(2, a) = cur->H_x;
    Hf.topRows<2>() = cur->H_f;
    r.head<2>() = cur->r;
    for (int j = 0; j < 2; ++j) {
      const auto kr = map_obs_jacobian_keyframe(s, sc.cam, sc.match, s.keyframes[j].id);
      Hx.block(2 + 2 * j, a + 6 * j, 2, 6) = kr->H_x;
      Hf.middleRows<2>(2 + 2 * j) = kr->H_f;
      r.segment<2>(2 + 2 * j) = kr->r;
    }
    const MatX N = oc_null_space(s, {0, 1}, {sc.match.p_GF});
    MatX Hc(2, a + 15);
    Hc << Hx.topRows<2>(), Hf.topRows<2>();
    CHECK(max_abs(oc_project(Hc, N) - Hc) < 1e-9 * max_abs(Hc));  // already feasible at the ideal point

    VecX vd = VecX::Constant(6, 1e-12);
    vd.head<2>().setConstant(1.0);
    const auto proj = stack_and_project_feature(Hx, Hf, r, vd.asDiagonal().toDenseMatrix());
    StackedResidual sr;
    sr.r = proj->r;
    sr.H_a = proj->H.leftCols(a);
    sr.H_n = proj->H.rightCols(12);
    sr.keyframes = {0, 1};
    sr.V = proj->V;
    AugmentedState oc = s, ex = s;
    UpdateOptions loose = no_gate();
    loose.max_condition = 1e30;
    REQUIRE(schmidt_update(oc, sr, loose) == UpdateStatus::Applied);
    map_update(ex, sc.cam, {sc.match}, MapUpdateMode::ExactMap, no_gate());
    CHECK(state_error(ex, oc).norm() < 1e-6);
    CHECK(max_abs(ex.P_aa - oc.P_aa) < 1e-6 * max_abs(ex.P_aa));
  }
}
