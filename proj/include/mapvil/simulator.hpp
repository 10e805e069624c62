#pragma once

#include "mapvil/measurement.hpp"
#include "mapvil/propagation.hpp"

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

namespace mapvil {

struct Waypoint {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  double yaw = 0.0;  ///< rad, unwrapped
};

/// Waypoints interpolated by a C2 cubic spline in (x, y, z, yaw). Roll and
/// pitch follow small sinusoids so that every rotation axis is excited.
struct TrajectorySpec {
  std::vector<Waypoint> waypoints;
  double imu_rate = 200.0;
  double cam_rate = 10.0;
  double roll_amplitude = 0.02, roll_period = 12.0;
  double pitch_amplitude = 0.015, pitch_period = 17.0;
  /// Position sway (m, s) that keeps the accelerometer excited so metric
  /// scale stays observable for a monocular camera.
  double sway_lateral = 0.5, sway_lateral_period = 8.0;
  double sway_vertical = 0.3, sway_vertical_period = 6.0;
};

struct TruthSample {
  double t = 0.0;
  Mat3 R = Mat3::Identity();  ///< R_LI
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 gyro = Vec3::Zero();   ///< body angular rate
  Vec3 accel = Vec3::Zero();  ///< body specific force R^T (a - g)
};

class Trajectory {
 public:
  explicit Trajectory(const TrajectorySpec &spec);
  ~Trajectory();
  Trajectory(Trajectory &&) noexcept;
  Trajectory &operator=(Trajectory &&) noexcept;

  double start() const { return t0_; }
  double end() const { return t1_; }
  TruthSample at(double t) const;
  /// Arc length by fine sampling.
  double length(double step = 0.01) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  TrajectorySpec spec_;
  double t0_ = 0.0, t1_ = 0.0;
};

/// Dense truth at spec.imu_rate over the waypoint span.
std::vector<TruthSample> gen_trajectory(const TrajectorySpec &spec);

/// Saddle-shaped loop (ellipse with a doubly periodic height). `map_run`
/// selects the offset copy the map is built from.
TrajectorySpec saddle_spec(bool map_run = false, double duration = 120.0);

struct ImuStream {
  std::vector<ImuSample> samples;
  std::vector<Vec3> bias_g, bias_a;  ///< true biases per sample
};

/// Measured = truth + bias + white noise; biases follow sampled random walks
/// starting at zero.
ImuStream gen_imu(const std::vector<TruthSample> &truth, const NoiseParams &noise, std::uint64_t seed);

struct MapKeyframe {
  MapKeyframePose pose;  ///< camera pose in G
  /// Covariance of [rotation about G axes, translation], the perturbation model.
  Mat6 cov = Mat6::Zero();
};

struct MapFeature {
  int id = -1;
  Vec3 p_G = Vec3::Zero();
};

struct MapObservation {
  int keyframe_id = -1;
  int feature_id = -1;
  Vec2 uv = Vec2::Zero();
};

struct MapBundle {
  std::vector<MapKeyframe> keyframes;
  std::vector<MapFeature> features;
  std::vector<MapObservation> observations;

  const MapKeyframe *keyframe(int id) const;
  const MapFeature *feature(int id) const;
  /// Throws when an observation references a missing keyframe or feature.
  void validate() const;
};

enum class MapMode { Perfect, Imperfect };

struct SimConfig {
  double duration = 120.0;
  double imu_rate = 200.0;
  double cam_rate = 10.0;
  NoiseParams imu;
  PinholeCamera cam;
  Extrinsic ext;
  Pose T_LG;

  double map_sigma_p = 0.1;        ///< m
  double map_sigma_o_deg = 0.9;    ///< deg
  /// Keyframe prior attached to the perfect map.
  double perfect_map_sigma_p = 1e-4, perfect_map_sigma_o_deg = 0.01;
  double keyframe_interval = 0.5;  ///< s along the map run
  double map_density = 0.7;        ///< features per metre of map run
  double local_density = 3.0;      ///< features per metre travelled
  double depth_min = 3.0, depth_max = 30.0;
  int keyframes_per_frame = 2;
  int max_map_matches = 15;
  int keyframe_retire_frames = 20;
  /// [t0, t1) windows without map matches.
  std::vector<std::pair<double, double>> match_dropout;
  std::uint64_t seed = 1;

  SimConfig();
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct MapPair {
  MapBundle truth;
  MapBundle noisy;
};

/// Keyframes along the map run, features spawned in their frusta and kept
/// when seen by two keyframes. The noisy bundle perturbs keyframes and pixels
/// and re-triangulates every feature.
MapPair gen_map(const SimConfig &cfg, const std::vector<TruthSample> &map_run, std::uint64_t seed);

struct LocalObservation {
  int feature_id = -1;
  Vec2 uv = Vec2::Zero();
};

struct CameraFrame {
  double t = 0.0;
  int imu_index = 0;  ///< index of the IMU sample at t
  std::vector<LocalObservation> local;
  std::vector<MapMatch> matches;
};

struct Measurements {
  std::vector<CameraFrame> frames;
  std::vector<Vec3> local_features;  ///< ground truth, frame L
};

/// Camera-rate observations of local features and matches against `map`.
/// Keyframe pixels come from the true map geometry with fresh noise, the
/// feature prior from `map`.
Measurements gen_measurements(const SimConfig &cfg, const std::vector<TruthSample> &truth, const MapPair &maps,
                              MapMode mode, std::uint64_t seed);

struct Simulation {
  SimConfig cfg;
  MapMode mode = MapMode::Imperfect;
  std::vector<TruthSample> truth;
  ImuStream imu;
  MapPair maps;
  Measurements meas;

  const MapBundle &map() const { return mode == MapMode::Perfect ? maps.truth : maps.noisy; }
};

/// Everything for one Monte Carlo seed. Each part draws from its own stream
/// derived from cfg.seed, so changing one part leaves the others intact.
Simulation simulate(const SimConfig &cfg, MapMode mode);

/// Deterministic per-purpose seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace mapvil
