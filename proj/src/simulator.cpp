#include "mapvil/simulator.hpp"

#include <unsupported/Eigen/Splines>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

namespace mapvil {

namespace {

using Spline4 = Eigen::Spline<double, 4>;

Mat3 rot_x(double a) { return so3_exp(Vec3(a, 0.0, 0.0)); }
Mat3 rot_y(double a) { return so3_exp(Vec3(0.0, a, 0.0)); }
Mat3 rot_z(double a) { return so3_exp(Vec3(0.0, 0.0, a)); }

Vec3 randn3(std::mt19937_64 &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double x = n(rng), y = n(rng), z = n(rng);
  return {x, y, z};
}

}  // namespace

struct Trajectory::Impl {
  Spline4 spline;
};

Trajectory::Trajectory(const TrajectorySpec &spec) : impl_(std::make_unique<Impl>()), spec_(spec) {
  const auto &w = spec.waypoints;
  if (w.size() < 4)
    throw std::invalid_argument("trajectory: need at least 4 waypoints");
  for (size_t i = 1; i < w.size(); ++i) {
    if (!(w[i].t > w[i - 1].t))
      throw std::invalid_argument("trajectory: waypoint times must be strictly increasing");
    if ((w[i].p - w[i - 1].p).norm() < 1e-9)
      throw std::invalid_argument("trajectory: coincident waypoints " + std::to_string(i - 1) + " and " +
                                  std::to_string(i));
  }
  if (!(spec.imu_rate > 0.0) || !(spec.cam_rate > 0.0))
    throw std::invalid_argument("trajectory: rates must be positive");
  for (double period : {spec.roll_period, spec.pitch_period, spec.sway_lateral_period, spec.sway_vertical_period})
    if (!(period > 0.0))
      throw std::invalid_argument("trajectory: oscillation periods must be positive");
  t0_ = w.front().t;
  t1_ = w.back().t;
  Eigen::Matrix<double, 4, Eigen::Dynamic> pts(4, w.size());
  Eigen::RowVectorXd knots(w.size());
  for (size_t i = 0; i < w.size(); ++i) {
    pts.col(i) << w[i].p, w[i].yaw;
    knots(i) = (w[i].t - t0_) / (t1_ - t0_);
  }
  impl_->spline = Eigen::SplineFitting<Spline4>::Interpolate(pts, 3, knots);
}

Trajectory::~Trajectory() = default;
Trajectory::Trajectory(Trajectory &&) noexcept = default;
Trajectory &Trajectory::operator=(Trajectory &&) noexcept = default;

TruthSample Trajectory::at(double t) const {
  const double span = t1_ - t0_;
  const double u = std::clamp((t - t0_) / span, 0.0, 1.0);
  const auto d = impl_->spline.derivatives(u, 2);
  const Vec3 p = d.col(0).head<3>();
  const Vec3 v = d.col(1).head<3>() / span;
  const Vec3 acc = d.col(2).head<3>() / (span * span);
  const double yaw = d(3, 0), yaw_rate = d(3, 1) / span, yaw_acc = d(3, 2) / (span * span);

  const double two_pi = 2.0 * std::numbers::pi;
  const double wr = two_pi / spec_.roll_period, wp = two_pi / spec_.pitch_period;
  const double roll = spec_.roll_amplitude * std::sin(wr * t);
  const double roll_rate = spec_.roll_amplitude * wr * std::cos(wr * t);
  const double pitch = spec_.pitch_amplitude * std::sin(wp * t + 1.0);
  const double pitch_rate = spec_.pitch_amplitude * wp * std::cos(wp * t + 1.0);

  // Sway: sideways along the heading's left axis and vertical.
  const double wl = two_pi / spec_.sway_lateral_period, wv = two_pi / spec_.sway_vertical_period;
  const double al = spec_.sway_lateral * std::sin(wl * t);
  const double al1 = spec_.sway_lateral * wl * std::cos(wl * t);
  const double al2 = -wl * wl * al;
  const double av = spec_.sway_vertical * std::sin(wv * t + 0.5);
  const double av1 = spec_.sway_vertical * wv * std::cos(wv * t + 0.5);
  const double av2 = -wv * wv * av;
  const Vec3 fwd(std::cos(yaw), std::sin(yaw), 0.0), left(-std::sin(yaw), std::cos(yaw), 0.0);
  const Vec3 left1 = -yaw_rate * fwd;
  const Vec3 left2 = -yaw_acc * fwd - yaw_rate * yaw_rate * left;
  const Vec3 up = Vec3::UnitZ();

  const Mat3 Rx = rot_x(roll), Ry = rot_y(pitch);
  TruthSample s;
  s.t = t;
  s.R = rot_z(yaw) * Ry * Rx;
  s.p = p + al * left + av * up;
  s.v = v + al1 * left + al * left1 + av1 * up;
  const Vec3 a_total = acc + al2 * left + 2.0 * al1 * left1 + al * left2 + av2 * up;
  s.gyro = Rx.transpose() * (Ry.transpose() * Vec3(0.0, 0.0, yaw_rate) + Vec3(0.0, pitch_rate, 0.0)) +
           Vec3(roll_rate, 0.0, 0.0);
  s.accel = s.R.transpose() * (a_total - gravity());
  return s;
}

double Trajectory::length(double step) const {
  double len = 0.0;
  Vec3 prev = at(t0_).p;
  for (double t = t0_ + step; t <= t1_ + 1e-12; t += step) {
    const Vec3 p = at(t).p;
    len += (p - prev).norm();
    prev = p;
  }
  return len;
}

std::vector<TruthSample> gen_trajectory(const TrajectorySpec &spec) {
  const Trajectory traj(spec);
  const int n = static_cast<int>(std::floor((traj.end() - traj.start()) * spec.imu_rate + 1e-9)) + 1;
  std::vector<TruthSample> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k)
    out.push_back(traj.at(traj.start() + k / spec.imu_rate));
  return out;
}

TrajectorySpec saddle_spec(bool map_run, double duration) {
  // The map run is the same loop driven with slightly different axes,
  // height and phase.
  const double A = map_run ? 121.5 : 120.0;
  const double B = map_run ? 79.0 : 80.0;
  const double h = map_run ? 3.4 : 3.0;
  const double z0 = map_run ? 0.6 : 0.0;
  const double phase = map_run ? -0.01 : 0.0;
  const double two_pi = 2.0 * std::numbers::pi;

  TrajectorySpec spec;
  const int n = static_cast<int>(std::ceil(duration)) + 1;
  double prev_yaw = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = duration * i / (n - 1);
    const double s = two_pi * t / duration + phase;
    Waypoint w;
    w.t = t;
    w.p = Vec3(A * std::cos(s), B * std::sin(s), z0 + h * std::cos(2.0 * s));
    double yaw = std::atan2(B * std::cos(s), -A * std::sin(s));
    if (i > 0)
      yaw = prev_yaw + std::remainder(yaw - prev_yaw, two_pi);
    w.yaw = prev_yaw = yaw;
    spec.waypoints.push_back(w);
  }
  return spec;
}

ImuStream gen_imu(const std::vector<TruthSample> &truth, const NoiseParams &noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ImuStream out;
  out.samples.reserve(truth.size());
  Vec3 bg = Vec3::Zero(), ba = Vec3::Zero();
  for (size_t k = 0; k < truth.size(); ++k) {
    const double dt = k + 1 < truth.size() ? truth[k + 1].t - truth[k].t : truth[k].t - truth[k - 1].t;
    ImuSample s;
    s.t = truth[k].t;
    s.gyro = truth[k].gyro + bg + noise.sigma_g / std::sqrt(dt) * randn3(rng);
    s.accel = truth[k].accel + ba + noise.sigma_a / std::sqrt(dt) * randn3(rng);
    out.samples.push_back(s);
    out.bias_g.push_back(bg);
    out.bias_a.push_back(ba);
    bg += noise.sigma_bg * std::sqrt(dt) * randn3(rng);
    ba += noise.sigma_ba * std::sqrt(dt) * randn3(rng);
  }
  return out;
}

const MapKeyframe *MapBundle::keyframe(int id) const {
  const auto it = std::lower_bound(keyframes.begin(), keyframes.end(), id,
                                   [](const MapKeyframe &k, int v) { return k.pose.id < v; });
  return it != keyframes.end() && it->pose.id == id ? &*it : nullptr;
}

const MapFeature *MapBundle::feature(int id) const {
  const auto it =
      std::lower_bound(features.begin(), features.end(), id, [](const MapFeature &f, int v) { return f.id < v; });
  return it != features.end() && it->id == id ? &*it : nullptr;
}

void MapBundle::validate() const {
  for (size_t i = 1; i < keyframes.size(); ++i)
    if (keyframes[i].pose.id <= keyframes[i - 1].pose.id)
      throw std::invalid_argument("map: keyframe ids must be strictly increasing");
  for (size_t i = 1; i < features.size(); ++i)
    if (features[i].id <= features[i - 1].id)
      throw std::invalid_argument("map: feature ids must be strictly increasing");
  for (const auto &o : observations)
    if (!keyframe(o.keyframe_id) || !feature(o.feature_id))
      throw std::invalid_argument("map: observation references keyframe " + std::to_string(o.keyframe_id) +
                                  " / feature " + std::to_string(o.feature_id) + " which does not exist");
}

SimConfig::SimConfig() {
  T_LG = Pose{so3_exp(Vec3(0.08, -0.05, 0.6)), Vec3(3.0, -2.0, 1.0)};
  // Forward-looking camera: optical axis along body x, image x along -y.
  ext.R_IC << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  ext.p_IC = Vec3(0.1, 0.0, 0.05);
}

void SimConfig::validate() const {
  auto require = [](bool ok, const char *what) {
    if (!ok)
      throw std::invalid_argument(what);
  };
  require(duration > 1.0, "duration must exceed 1 s");
  require(imu_rate > 0.0 && cam_rate > 0.0, "imu_rate and cam_rate must be positive");
  const double ratio = imu_rate / cam_rate;
  require(std::abs(ratio - std::round(ratio)) < 1e-9 && ratio >= 1.0, "imu_rate must be an integer multiple of cam_rate");
  require(imu.sigma_g >= 0 && imu.sigma_a >= 0 && imu.sigma_bg >= 0 && imu.sigma_ba >= 0,
          "imu noise densities must be nonnegative");
  require(cam.sigma_px >= 0.0, "sigma_px must be nonnegative");
  require(map_sigma_p >= 0.0 && map_sigma_o_deg >= 0.0, "map perturbation must be nonnegative");
  require(perfect_map_sigma_p >= 0.0 && perfect_map_sigma_o_deg >= 0.0, "perfect_map_sigma_p and perfect_map_sigma_o_deg must be nonnegative");
  require(keyframe_interval > 0.0, "keyframe_interval must be positive");
  require(map_density >= 0.0 && local_density >= 0.0, "feature densities must be nonnegative");
  require(depth_min > 0.0 && depth_max > depth_min, "need 0 < depth_min < depth_max");
  require(keyframes_per_frame >= 1, "keyframes_per_frame must be at least 1");
  require(max_map_matches >= 0, "max_map_matches must be nonnegative");
  require(keyframe_retire_frames >= 1, "keyframe_retire_frames must be at least 1");
  for (const auto &[a, b] : match_dropout)
    require(b > a, "match_dropout windows need t1 > t0");
}

namespace {

bool visible(const PinholeCamera &cam, const Vec3 &p_C, double max_depth, Vec2 *uv) {
  if (p_C.z() < 1.0 || p_C.z() > max_depth)
    return false;
  const Vec2 px = cam.project_unchecked(p_C);
  if (!cam.in_image(px))
    return false;
  if (uv)
    *uv = px;
  return true;
}

Vec3 spawn_in_frustum(std::mt19937_64 &rng, const PinholeCamera &cam, const Pose &T_WC, double dmin, double dmax) {
  const double margin = 10.0;
  std::uniform_real_distribution<double> u(margin, cam.width - margin), v(margin, cam.height - margin),
      d(dmin, dmax);
  const double uu = u(rng), vv = v(rng), depth = d(rng);
  return T_WC.transform(depth * cam.bearing(Vec2(uu, vv)));
}

Vec2 pixel_noise(std::mt19937_64 &rng, double sigma) {
  std::normal_distribution<double> n(0.0, sigma > 0.0 ? sigma : 1.0);
  const double a = n(rng), b = n(rng);
  return sigma > 0.0 ? Vec2(a, b) : Vec2::Zero();
}

Pose camera_pose(const TruthSample &s, const Extrinsic &ext) { return Pose{s.R, s.p} * Pose{ext.R_IC, ext.p_IC}; }

}  // namespace

MapPair gen_map(const SimConfig &cfg, const std::vector<TruthSample> &map_run, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const PinholeCamera &cam = cfg.cam;
  const Pose T_GL = cfg.T_LG.inverse();
  const int stride = std::max(1, static_cast<int>(std::lround(cfg.keyframe_interval * cfg.imu_rate)));

  MapPair out;
  std::vector<Pose> kf_true;
  double travelled = 0.0;
  for (size_t k = 0, last = 0; k < map_run.size(); k += stride) {
    if (k > 0)
      for (size_t j = last + 1; j <= k; ++j)
        travelled += (map_run[j].p - map_run[j - 1].p).norm();
    last = k;
    const Pose T_GC = T_GL * camera_pose(map_run[k], cfg.ext);
    kf_true.push_back(T_GC);

    std::poisson_distribution<int> pois(std::max(cfg.map_density * travelled, 1e-12));
    const int n_new = k == 0 ? static_cast<int>(std::lround(cfg.map_density * cfg.depth_max)) : pois(rng);
    travelled = 0.0;
    for (int i = 0; i < n_new; ++i)
      out.truth.features.push_back(
          MapFeature{static_cast<int>(out.truth.features.size()),
                     spawn_in_frustum(rng, cam, T_GC, cfg.depth_min, cfg.depth_max)});
  }

  // Observations of every feature by every keyframe that sees it.
  std::vector<std::vector<MapObservation>> obs_of(out.truth.features.size());
  for (size_t j = 0; j < kf_true.size(); ++j) {
    const Pose T_CG = kf_true[j].inverse();
    for (const auto &f : out.truth.features) {
      Vec2 uv;
      if (visible(cam, T_CG.transform(f.p_G), 1.5 * cfg.depth_max, &uv))
        obs_of[f.id].push_back(MapObservation{static_cast<int>(j), f.id, uv});
    }
  }

  // Noisy keyframes: rotation about G axes plus additive translation.
  const double so = cfg.map_sigma_o_deg * std::numbers::pi / 180.0, sp = cfg.map_sigma_p;
  Mat6 cov = Mat6::Zero();
  cov.topLeftCorner<3, 3>() = so * so * Mat3::Identity();
  cov.bottomRightCorner<3, 3>() = sp * sp * Mat3::Identity();
  // The perfect map still carries a tiny prior so Schmidt variants run on it.
  const double so_t = cfg.perfect_map_sigma_o_deg * std::numbers::pi / 180.0, sp_t = cfg.perfect_map_sigma_p;
  Mat6 cov_t = Mat6::Zero();
  cov_t.topLeftCorner<3, 3>() = so_t * so_t * Mat3::Identity();
  cov_t.bottomRightCorner<3, 3>() = sp_t * sp_t * Mat3::Identity();
  std::vector<Pose> kf_noisy;
  for (size_t j = 0; j < kf_true.size(); ++j) {
    const Vec3 dth = so * randn3(rng), dp = sp * randn3(rng);
    kf_noisy.push_back(Pose{so3_exp(dth) * kf_true[j].R, kf_true[j].p + dp});
    MapKeyframe t, n;
    t.pose = MapKeyframePose{static_cast<int>(j), kf_true[j].R, kf_true[j].p};
    n.pose = MapKeyframePose{static_cast<int>(j), kf_noisy[j].R, kf_noisy[j].p};
    n.cov = cov;
    t.cov = cov_t;
    out.truth.keyframes.push_back(t);
    out.noisy.keyframes.push_back(n);
  }

  // Re-triangulate from noisy pixels and noisy keyframes. Features seen by
  // fewer than two keyframes or failing triangulation are dropped from both.
  TriangulationOptions tri;
  tri.max_depth = 3.0 * cfg.depth_max;
  tri.max_condition = 1e6;
  std::vector<MapFeature> kept;
  for (const auto &f : out.truth.features) {
    const auto &obs = obs_of[f.id];
    if (obs.size() < 2)
      continue;
    std::vector<Pose> poses;
    std::vector<Vec2> px;
    std::vector<MapObservation> noisy_obs;
    for (const auto &o : obs) {
      MapObservation n = o;
      n.uv += pixel_noise(rng, cam.sigma_px);
      noisy_obs.push_back(n);
      poses.push_back(kf_noisy[o.keyframe_id]);
      px.push_back(n.uv);
    }
    const auto p = triangulate(cam, poses, px, tri);
    if (!p)
      continue;
    kept.push_back(f);
    out.noisy.features.push_back(MapFeature{f.id, *p});
    out.truth.observations.insert(out.truth.observations.end(), obs.begin(), obs.end());
    out.noisy.observations.insert(out.noisy.observations.end(), noisy_obs.begin(), noisy_obs.end());
  }
  out.truth.features = std::move(kept);
  out.truth.validate();
  out.noisy.validate();
  return out;
}

Measurements gen_measurements(const SimConfig &cfg, const std::vector<TruthSample> &truth, const MapPair &maps,
                              MapMode mode, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const PinholeCamera &cam = cfg.cam;
  const MapBundle &prior = mode == MapMode::Perfect ? maps.truth : maps.noisy;
  const int stride = static_cast<int>(std::lround(cfg.imu_rate / cfg.cam_rate));

  // Which features each keyframe observes, from the true bundle.
  std::map<int, std::set<int>> seen_by;
  for (const auto &o : maps.truth.observations)
    seen_by[o.keyframe_id].insert(o.feature_id);

  Measurements out;
  std::vector<int> alive;
  std::map<int, int> last_used;  // keyframe id -> frame index
  std::set<int> retired;
  double travelled = 0.0;

  for (size_t k = 0, frame = 0; k < truth.size(); k += stride, ++frame) {
    const TruthSample &s = truth[k];
    if (k > 0)
      for (size_t j = k - stride + 1; j <= k; ++j)
        travelled += (truth[j].p - truth[j - 1].p).norm();
    const Pose T_LC = camera_pose(s, cfg.ext);
    const Pose T_CL = T_LC.inverse();

    CameraFrame f;
    f.t = s.t;
    f.imu_index = static_cast<int>(k);

    // Local features: spawn in proportion to distance, track while visible.
    std::poisson_distribution<int> pois(std::max(cfg.local_density * travelled, 1e-12));
    const int n_new = k == 0 ? static_cast<int>(std::lround(cfg.local_density * cfg.depth_max)) : pois(rng);
    travelled = 0.0;
    for (int i = 0; i < n_new; ++i) {
      alive.push_back(static_cast<int>(out.local_features.size()));
      out.local_features.push_back(spawn_in_frustum(rng, cam, T_LC, cfg.depth_min, cfg.depth_max));
    }
    std::vector<int> still;
    for (int id : alive) {
      Vec2 uv;
      if (visible(cam, T_CL.transform(out.local_features[id]), 1.5 * cfg.depth_max, &uv)) {
        f.local.push_back(LocalObservation{id, uv + pixel_noise(rng, cam.sigma_px)});
        still.push_back(id);
      }
    }
    alive.swap(still);

    // Map matches against the nearest keyframes still in use.
    const bool dropped = std::any_of(cfg.match_dropout.begin(), cfg.match_dropout.end(),
                                     [&](const auto &w) { return s.t >= w.first && s.t < w.second; });
    for (const auto &[id, used] : last_used)
      if (static_cast<int>(frame) - used > cfg.keyframe_retire_frames)
        retired.insert(id);
    if (!dropped && cfg.max_map_matches > 0) {
      const Pose T_GC = cfg.T_LG.inverse() * T_LC;
      std::vector<std::pair<double, int>> by_dist;
      for (const auto &kf : maps.truth.keyframes)
        if (!retired.count(kf.pose.id))
          by_dist.emplace_back((kf.pose.p_GKF - T_GC.p).squaredNorm(), kf.pose.id);
      const size_t nk = std::min<size_t>(cfg.keyframes_per_frame, by_dist.size());
      std::partial_sort(by_dist.begin(), by_dist.begin() + nk, by_dist.end());
      std::vector<int> kfs;
      for (size_t i = 0; i < nk; ++i)
        kfs.push_back(by_dist[i].second);

      std::vector<int> candidates;
      if (!kfs.empty())
        for (int fid : seen_by[kfs.front()]) {
          bool all = true;
          for (size_t i = 1; i < kfs.size() && all; ++i)
            all = seen_by[kfs[i]].count(fid) > 0;
          if (all && maps.truth.feature(fid))
            candidates.push_back(fid);
        }
      std::shuffle(candidates.begin(), candidates.end(), rng);
      const Pose T_CG = T_GC.inverse();
      for (int fid : candidates) {
        if (static_cast<int>(f.matches.size()) >= cfg.max_map_matches)
          break;
        Vec2 uv;
        if (!visible(cam, T_CG.transform(maps.truth.feature(fid)->p_G), 1.5 * cfg.depth_max, &uv))
          continue;
        MapMatch m;
        m.feature_id = fid;
        m.p_GF = prior.feature(fid)->p_G;
        m.uv = uv + pixel_noise(rng, cam.sigma_px);
        for (int kid : kfs) {
          const Pose T_GKF{maps.truth.keyframe(kid)->pose.R_GKF, maps.truth.keyframe(kid)->pose.p_GKF};
          const Vec2 kuv = cam.project_unchecked(T_GKF.inverse().transform(maps.truth.feature(fid)->p_G));
          m.keyframe_obs.push_back(KeyframeObservation{kid, kuv + pixel_noise(rng, cam.sigma_px)});
        }
        f.matches.push_back(std::move(m));
      }
      if (!f.matches.empty())
        for (int kid : kfs)
          last_used[kid] = static_cast<int>(frame);
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t v[2];
  seq.generate(v, v + 2);
  return (static_cast<std::uint64_t>(v[0]) << 32) | v[1];
}

Simulation simulate(const SimConfig &cfg, MapMode mode) {
  cfg.validate();
  Simulation sim;
  sim.cfg = cfg;
  sim.mode = mode;
  auto run = saddle_spec(false, cfg.duration), map_run = saddle_spec(true, cfg.duration);
  run.imu_rate = map_run.imu_rate = cfg.imu_rate;
  run.cam_rate = map_run.cam_rate = cfg.cam_rate;
  sim.truth = gen_trajectory(run);
  sim.imu = gen_imu(sim.truth, cfg.imu, derive_seed(cfg.seed, 1));
  sim.maps = gen_map(cfg, gen_trajectory(map_run), derive_seed(cfg.seed, 2));
  sim.meas = gen_measurements(cfg, sim.truth, sim.maps, mode, derive_seed(cfg.seed, 3));
  return sim;
}

}  // namespace mapvil
