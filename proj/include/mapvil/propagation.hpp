#pragma once

#include "mapvil/state.hpp"

namespace mapvil {

using Mat21 = Eigen::Matrix<double, 21, 21>;

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   ///< rad/s
  Vec3 accel = Vec3::Zero();  ///< m/s^2
};

/// Continuous-time noise densities: white gyro/accel noise and bias random walks.
struct NoiseParams {
  double sigma_g = 1.6968e-4;   ///< rad/s/sqrt(Hz)
  double sigma_a = 2.0e-3;      ///< m/s^2/sqrt(Hz)
  double sigma_bg = 1.9393e-5;  ///< rad/s^2/sqrt(Hz)
  double sigma_ba = 3.0e-3;     ///< m/s^3/sqrt(Hz)
};

inline Vec3 gravity() { return {0.0, 0.0, -9.8}; }

/// Error-state dynamics of the 21-dim nav block: xi_dot = A xi + W w, with
/// w = [w_g, w_a, 0_9, w_bg, w_ba].
struct ErrorDynamics {
  Mat21 A = Mat21::Zero();
  Mat21 W = Mat21::Zero();
};

/// Integrates the nav mean from s0.t to s1.t with RK4, the IMU signal being
/// interpolated linearly between the two samples.
void propagate_mean(NavState &nav, const ImuSample &s0, const ImuSample &s1);
/// Same with the sample held constant over dt.
void propagate_mean(NavState &nav, const ImuSample &imu, double dt);

ErrorDynamics error_dynamics(const NavState &nav);
/// Standard-chart (local angle, additive vector) linearization at (gyro, accel).
ErrorDynamics std_ekf_error_dynamics(const NavState &nav, const Vec3 &gyro, const Vec3 &accel);

/// diag(sg^2 I, sa^2 I, 0_9, sbg^2 I, sba^2 I).
Mat21 continuous_noise_cov(const NoiseParams &noise);

/// exp(M) for a square matrix, by scaled Taylor series.
MatX expm(const MatX &M);

/// P' = Phi P Phi^T + Q_d over the nav rows, identity on every other slot.
void propagate_covariance(AugmentedState &s, const ErrorDynamics &dyn, const NoiseParams &noise, double dt);

/// Mean and covariance propagation from s0.t to s1.t in s.chart. The
/// linearization uses the bias-corrected midpoint signal.
void propagate(AugmentedState &s, const ImuSample &s0, const ImuSample &s1, const NoiseParams &noise);

}  // namespace mapvil
