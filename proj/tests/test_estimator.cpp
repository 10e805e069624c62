#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"

#include "mapvil/estimator.hpp"

using namespace mapvil;
using namespace mapvil::testing;

namespace {

SimConfig quiet_config(double duration) {
  SimConfig c;
  c.duration = duration;
  c.imu = NoiseParams{0.0, 0.0, 0.0, 0.0};
  c.cam.sigma_px = 0.0;
  c.map_sigma_p = 0.0;
  c.map_sigma_o_deg = 0.0;
  return c;
}

double max_position_error(const RunRecord &r) {
  double worst = 0.0;
  for (const auto &s : r.steps)
    worst = std::max(worst, (s.est.p - s.truth.p).norm());
  return worst;
}

}  // namespace

TEST_CASE("variant names round-trip") {
  for (Variant v : all_variants()) {
    const auto &i = variant_info(v);
    REQUIRE(parse_variant(i.name).has_value());
    CHECK(*parse_variant(i.name) == v);
  }
  CHECK(all_variants().size() == 5);
  CHECK_FALSE(parse_variant("msckf").has_value());
  CHECK(variant_info(Variant::Vio).uses_map == false);
  CHECK(variant_info(Variant::MsocSIkf).map_mode == MapUpdateMode::SchmidtOC);
  CHECK(variant_info(Variant::MscSEkf).chart == ErrorChart::Standard);
}

TEST_CASE("keyframe prior follows the chart") {
  Rng rng(3);
  MapKeyframe kf;
  kf.pose = {7, random_rotation(rng), randn3(rng, 10.0)};
  kf.cov = random_spd(rng, 6, 1e-3);

  // Standard chart: rotation about G becomes a body-frame perturbation.
  const Mat3 &R = kf.pose.R_GKF;
  const Mat6 std_prior = keyframe_prior(kf, ErrorChart::Standard);
  CHECK(max_abs(std_prior.topLeftCorner<3, 3>() - R.transpose() * kf.cov.topLeftCorner<3, 3>() * R) < 1e-15);
  CHECK(max_abs(std_prior.bottomRightCorner<3, 3>() - kf.cov.bottomRightCorner<3, 3>()) < 1e-15);

  const Pose T{kf.pose.R_GKF, kf.pose.p_GKF};
  const Mat6 J = pose_chart_jacobian(T);
  CHECK(max_abs(keyframe_prior(kf, ErrorChart::Invariant) - J * std_prior * J.transpose()) < 1e-12);
}

TEST_CASE("relative transform Jacobians match finite differences") {
  Rng rng(5);
  for (ErrorChart chart : {ErrorChart::Invariant, ErrorChart::Standard})
    for (int i = 0; i < 5; ++i)
      CHECK(relative_init_fd(rng, chart) < 1e-5);
}

TEST_CASE("noise-free data with a truth start stays on the truth") {
  const auto c = quiet_config(25.0);
  auto sim = simulate(c, MapMode::Perfect);
  sim.cfg.cam.sigma_px = 1.0;  // the filter still assumes pixel noise
  FilterOptions opt;
  opt.perturb_init = false;
  opt.aug_theta = 1e-9;
  opt.aug_p = 1e-9;
  opt.audit = true;
  for (Variant v : all_variants()) {
    const auto r = run_filter(sim, v, opt, 1);
    INFO(r.variant);
    CHECK(r.steps.size() == sim.meas.frames.size());
    CHECK(max_position_error(r) < 1e-3);
    CHECK(r.stats.nuisance_intact);
    CHECK(r.stats.min_eig_rel > -1e-12);  // the newest clone duplicates the pose
    CHECK(r.stats.msckf_updates > 0);
    if (variant_info(v).uses_map) {
      CHECK(r.stats.map_updates > 0);
      CHECK(r.steps.back().has_relative);
    }
    if (v == Variant::MscSEkf || v == Variant::MsocSIkf)
      CHECK(r.stats.keyframes_inserted > 0);
    else
      CHECK(r.stats.keyframes_inserted == 0);
  }
}

TEST_CASE("noisy run: Schmidt audit holds and runs are deterministic") {
  SimConfig c;
  c.duration = 30.0;
  const auto sim = simulate(c, MapMode::Imperfect);
  FilterOptions opt;
  opt.audit = true;
  for (Variant v : {Variant::MscSEkf, Variant::MsocSIkf}) {
    const auto a = run_filter(sim, v, opt, 4), b = run_filter(sim, v, opt, 4);
    INFO(a.variant);
    CHECK(a.stats.nuisance_intact);
    CHECK(a.stats.min_eig_rel > -1e-12);
    CHECK(a.stats.keyframes_removed > 0);
    REQUIRE(a.steps.size() == b.steps.size());
    bool same = true;
    for (size_t i = 0; i < a.steps.size() && same; ++i)
      same = a.steps[i].est.p == b.steps[i].est.p && a.steps[i].P == b.steps[i].P;
    CHECK(same);
    CHECK(max_position_error(a) < 2.0);
  }
}

TEST_CASE("empty sequences are rejected") {
  Simulation sim;
  CHECK_THROWS_AS(run_filter(sim, Variant::Vio, FilterOptions{}, 1), std::invalid_argument);
}
