#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "test_support.hpp"

#include "mapvil/simulator.hpp"

#include <map>
#include <numbers>

using namespace mapvil;
using namespace mapvil::testing;

namespace {

TrajectorySpec straight_line() {
  TrajectorySpec spec;
  spec.roll_amplitude = spec.pitch_amplitude = 0.0;
  spec.sway_lateral = spec.sway_vertical = 0.0;
  for (int i = 0; i < 6; ++i)
    spec.waypoints.push_back(Waypoint{2.0 * i, Vec3(3.0 * i, 1.0 * i, 0.5), 0.3});
  return spec;
}

SimConfig quiet_config() {
  SimConfig c;
  c.duration = 20.0;
  c.imu = NoiseParams{0.0, 0.0, 0.0, 0.0};
  c.cam.sigma_px = 0.0;
  c.map_sigma_p = 0.0;
  c.map_sigma_o_deg = 0.0;
  return c;
}

}  // namespace

TEST_CASE("constant velocity segment has zero rate and gravity-only specific force") {
  const Trajectory tr(straight_line());
  for (double t : {0.5, 3.3, 7.9}) {
    const auto s = tr.at(t);
    CHECK(s.gyro.norm() < 1e-12);
    CHECK((s.accel + s.R.transpose() * gravity()).norm() < 1e-10);
    CHECK((s.v - Vec3(1.5, 0.5, 0.0)).norm() < 1e-10);
  }
}

TEST_CASE("waypoint validation") {
  auto spec = straight_line();
  spec.waypoints.resize(3);
  CHECK_THROWS_AS(Trajectory{spec}, std::invalid_argument);
  spec = straight_line();
  spec.waypoints[2].p = spec.waypoints[1].p;
  CHECK_THROWS_AS(Trajectory{spec}, std::invalid_argument);
  spec = straight_line();
  spec.waypoints[2].t = spec.waypoints[1].t;
  CHECK_THROWS_AS(Trajectory{spec}, std::invalid_argument);
}

TEST_CASE("analytic derivatives match numeric differentiation") {
  const Trajectory tr(saddle_spec());
  const double h = 1e-4;
  for (double t : {1.0, 17.3, 42.0, 88.8, 110.0}) {
    const auto s = tr.at(t), a = tr.at(t - h), b = tr.at(t + h);
    CHECK((s.v - (b.p - a.p) / (2 * h)).norm() < 1e-6);
    const Vec3 w = so3_log(a.R.transpose() * b.R) / (2 * h);
    CHECK((s.gyro - w).norm() < 1e-6);
    const Vec3 acc = (b.v - a.v) / (2 * h);
    CHECK((s.accel - s.R.transpose() * (acc - gravity())).norm() < 1e-5);
  }
}

TEST_CASE("saddle loop length") {
  const double len = Trajectory(saddle_spec()).length();
  CHECK(len > 630.0 * 0.95);
  CHECK(len < 630.0 * 1.05);
  const double map_len = Trajectory(saddle_spec(true)).length();
  CHECK(std::abs(map_len - len) < 20.0);
}

TEST_CASE("integrating the generated IMU re-tracks the spline") {
  auto spec = saddle_spec();
  const auto truth = gen_trajectory(spec);
  const auto imu = gen_imu(truth, NoiseParams{0.0, 0.0, 0.0, 0.0}, 1);
  NavState nav;
  nav.R_LI = truth[0].R;
  nav.v_LI = truth[0].v;
  nav.p_LI = truth[0].p;
  const size_t n = static_cast<size_t>(60.0 * spec.imu_rate);
  double worst = 0.0;
  for (size_t k = 0; k < n; ++k) {
    propagate_mean(nav, imu.samples[k], imu.samples[k + 1]);
    worst = std::max(worst, (nav.p_LI - truth[k + 1].p).norm());
  }
  INFO("worst position gap ", worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("imu noise statistics and determinism") {
  auto spec = straight_line();
  spec.waypoints.clear();
  for (int i = 0; i < 6; ++i)
    spec.waypoints.push_back(Waypoint{120.0 * i, Vec3(3.0 * i, 0.0, 0.0), 0.0});
  spec.imu_rate = 200.0;
  const auto truth = gen_trajectory(spec);
  REQUIRE(truth.size() > 100000);

  const auto exact = gen_imu(truth, NoiseParams{0.0, 0.0, 0.0, 0.0}, 3);
  CHECK((exact.samples[500].gyro - truth[500].gyro).norm() == 0.0);
  CHECK((exact.samples[500].accel - truth[500].accel).norm() == 0.0);

  NoiseParams np;
  np.sigma_bg = np.sigma_ba = 0.0;
  const auto noisy = gen_imu(truth, np, 3);
  const double dt = 1.0 / spec.imu_rate;
  double ss = 0.0;
  const size_t n = 100000;
  for (size_t k = 0; k < n; ++k)
    ss += (noisy.samples[k].gyro - truth[k].gyro).squaredNorm();
  const double var = ss / (3.0 * n);
  const double expect = np.sigma_g * np.sigma_g / dt;
  CHECK(std::abs(var / expect - 1.0) < 0.05);

  const auto again = gen_imu(truth, NoiseParams{}, 9), once = gen_imu(truth, NoiseParams{}, 9);
  bool same = true;
  for (size_t k = 0; k < again.samples.size() && same; ++k)
    same = again.samples[k].gyro == once.samples[k].gyro && again.samples[k].accel == once.samples[k].accel;
  CHECK(same);
}

TEST_CASE("noise-free map equals the true map") {
  auto c = quiet_config();
  auto run = saddle_spec(true, c.duration);
  const auto maps = gen_map(c, gen_trajectory(run), 5);
  REQUIRE(maps.truth.features.size() == maps.noisy.features.size());
  REQUIRE(maps.truth.features.size() > 20);
  for (size_t i = 0; i < maps.truth.keyframes.size(); ++i) {
    CHECK(max_abs(maps.truth.keyframes[i].pose.R_GKF - maps.noisy.keyframes[i].pose.R_GKF) == 0.0);
    CHECK((maps.truth.keyframes[i].pose.p_GKF - maps.noisy.keyframes[i].pose.p_GKF).norm() == 0.0);
  }
  double worst = 0.0;
  for (size_t i = 0; i < maps.truth.features.size(); ++i)
    worst = std::max(worst, (maps.truth.features[i].p_G - maps.noisy.features[i].p_G).norm());
  CHECK(worst < 1e-6);
}

TEST_CASE("map bundle reprojection and perturbation size") {
  SimConfig c;
  const auto maps = gen_map(c, gen_trajectory(saddle_spec(true, c.duration)), 11);
  CHECK_NOTHROW(maps.truth.validate());
  double worst = 0.0;
  std::map<int, int> per_feature;
  for (const auto &o : maps.truth.observations) {
    const auto &kf = maps.truth.keyframe(o.keyframe_id)->pose;
    const Pose T{kf.R_GKF, kf.p_GKF};
    worst = std::max(worst, (c.cam.project_unchecked(T.inverse().transform(maps.truth.feature(o.feature_id)->p_G)) -
                             o.uv).norm());
    ++per_feature[o.feature_id];
  }
  CHECK(worst < 1e-9);
  for (const auto &[id, n] : per_feature)
    CHECK(n >= 2);

  double ep = 0.0, eo = 0.0;
  const size_t n = maps.truth.keyframes.size();
  for (size_t i = 0; i < n; ++i) {
    const auto &a = maps.truth.keyframes[i].pose, &b = maps.noisy.keyframes[i].pose;
    ep += (a.p_GKF - b.p_GKF).squaredNorm();
    const double deg = so3_log(b.R_GKF * a.R_GKF.transpose()).norm() * 180.0 / std::numbers::pi;
    eo += deg * deg;
  }
  // Nominal RMSE of an isotropic 3-D draw is sqrt(3) sigma.
  const double rp = std::sqrt(ep / n) / (std::sqrt(3.0) * c.map_sigma_p);
  const double ro = std::sqrt(eo / n) / (std::sqrt(3.0) * c.map_sigma_o_deg);
  CHECK(rp > 0.5);
  CHECK(rp < 2.0);
  CHECK(ro > 0.5);
  CHECK(ro < 2.0);
  CHECK(maps.noisy.keyframes[0].cov(0, 0) > 0.0);
}

TEST_CASE("noise-free measurements are exact at the truth") {
  auto c = quiet_config();
  const auto sim = simulate(c, MapMode::Perfect);
  const Pose T_IC{c.ext.R_IC, c.ext.p_IC};
  double worst = 0.0;
  int matches = 0;
  for (const auto &f : sim.meas.frames) {
    const auto &s = sim.truth[f.imu_index];
    CHECK(std::abs(s.t - f.t) < 1e-12);
    const Pose T_CL = (Pose{s.R, s.p} * T_IC).inverse();
    for (const auto &m : f.matches) {
      const Vec2 uv = c.cam.project_unchecked(T_CL.transform(c.T_LG.transform(m.p_GF)));
      worst = std::max(worst, (uv - m.uv).norm());
      ++matches;
    }
    for (const auto &o : f.local)
      worst = std::max(worst, (c.cam.project_unchecked(T_CL.transform(sim.meas.local_features[o.feature_id])) -
                               o.uv).norm());
  }
  CHECK(matches > 100);
  CHECK(worst < 1e-8);
}

TEST_CASE("default measurements: track lengths, schedule and determinism") {
  SimConfig c;
  c.duration = 40.0;
  c.match_dropout = {{10.0, 15.0}};
  const auto a = simulate(c, MapMode::Imperfect);
  std::map<int, int> len;
  for (const auto &f : a.meas.frames) {
    for (const auto &o : f.local)
      ++len[o.feature_id];
    if (f.t >= 10.0 && f.t < 15.0)
      CHECK(f.matches.empty());
  }
  double total = 0.0;
  for (const auto &[id, n] : len)
    total += n;
  CHECK(total / len.size() >= 4.0);

  const auto b = simulate(c, MapMode::Imperfect);
  REQUIRE(a.meas.frames.size() == b.meas.frames.size());
  bool same = true;
  for (size_t i = 0; i < a.meas.frames.size() && same; ++i) {
    const auto &x = a.meas.frames[i], &y = b.meas.frames[i];
    same = x.local.size() == y.local.size() && x.matches.size() == y.matches.size();
    for (size_t j = 0; same && j < x.local.size(); ++j)
      same = x.local[j].uv == y.local[j].uv && x.local[j].feature_id == y.local[j].feature_id;
    for (size_t j = 0; same && j < x.matches.size(); ++j)
      same = x.matches[j].uv == y.matches[j].uv && x.matches[j].p_GF == y.matches[j].p_GF;
  }
  CHECK(same);

  c.seed = 2;
  const auto d = simulate(c, MapMode::Imperfect);
  CHECK(d.meas.frames[3].local.front().uv != a.meas.frames[3].local.front().uv);
}

TEST_CASE("config validation names the field") {
  SimConfig c;
  c.depth_min = 40.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("depth_min"), std::invalid_argument);
  c = SimConfig{};
  c.cam_rate = 7.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
