#include "mapvil/propagation.hpp"

#include <cmath>
#include <stdexcept>

namespace mapvil {

namespace {

struct Kinematics {
  Mat3 R;
  Vec3 v, p;
};

Kinematics derivative(const Kinematics &x, const Vec3 &w, const Vec3 &a) {
  return {x.R * skew(w), x.R * a + gravity(), x.v};
}

Kinematics step(const Kinematics &x, const Kinematics &k, double h) {
  return {x.R + h * k.R, x.v + h * k.v, x.p + h * k.p};
}

}  // namespace

void propagate_mean(NavState &nav, const ImuSample &s0, const ImuSample &s1) {
  const double dt = s1.t - s0.t;
  if (!(dt > 0.0))
    throw std::invalid_argument("propagate_mean: non-positive dt");

  const Vec3 w0 = s0.gyro - nav.b_g, w1 = s1.gyro - nav.b_g;
  const Vec3 a0 = s0.accel - nav.b_a, a1 = s1.accel - nav.b_a;
  const Vec3 wm = 0.5 * (w0 + w1), am = 0.5 * (a0 + a1);

  const Kinematics x{nav.R_LI, nav.v_LI, nav.p_LI};
  const Kinematics k1 = derivative(x, w0, a0);
  const Kinematics k2 = derivative(step(x, k1, 0.5 * dt), wm, am);
  const Kinematics k3 = derivative(step(x, k2, 0.5 * dt), wm, am);
  const Kinematics k4 = derivative(step(x, k3, dt), w1, a1);

  nav.R_LI = x.R + dt / 6.0 * (k1.R + 2.0 * k2.R + 2.0 * k3.R + k4.R);
  nav.v_LI = x.v + dt / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v);
  nav.p_LI = x.p + dt / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p);
  if (!is_rotation(nav.R_LI, 1e-9))
    nav.R_LI = nearest_rotation(nav.R_LI);
}

void propagate_mean(NavState &nav, const ImuSample &imu, double dt) {
  ImuSample next = imu;
  next.t = imu.t + dt;
  propagate_mean(nav, imu, next);
}

ErrorDynamics error_dynamics(const NavState &nav) {
  using namespace slot;
  ErrorDynamics d;
  const Mat3 &R = nav.R_LI;
  const Mat3 I = Mat3::Identity();

  d.A.block<3, 3>(kVel, kTheta) = skew(gravity());
  d.A.block<3, 3>(kPos, kVel) = I;
  d.A.block<3, 3>(kTheta, kBg) = -R;
  d.A.block<3, 3>(kVel, kBg) = -skew(nav.v_LI) * R;
  d.A.block<3, 3>(kPos, kBg) = -skew(nav.p_LI) * R;
  d.A.block<3, 3>(kPosG, kBg) = -skew(nav.p_LG) * R;
  d.A.block<3, 3>(kVel, kBa) = -R;

  d.W.topLeftCorner<kGroupDim, kGroupDim>() = nav.group().adjoint();
  d.W.block<6, 6>(kBg, kBg).setIdentity();
  return d;
}

ErrorDynamics std_ekf_error_dynamics(const NavState &nav, const Vec3 &gyro, const Vec3 &accel) {
  using namespace slot;
  ErrorDynamics d;
  const Mat3 &R = nav.R_LI;
  const Mat3 I = Mat3::Identity();
  const Vec3 w = gyro - nav.b_g, a = accel - nav.b_a;

  d.A.block<3, 3>(kTheta, kTheta) = -skew(w);
  d.A.block<3, 3>(kTheta, kBg) = -I;
  d.A.block<3, 3>(kVel, kTheta) = -R * skew(a);
  d.A.block<3, 3>(kVel, kBa) = -R;
  d.A.block<3, 3>(kPos, kVel) = I;

  d.W.block<3, 3>(kTheta, kTheta) = I;
  d.W.block<3, 3>(kVel, kVel) = R;
  d.W.block<6, 6>(kBg, kBg).setIdentity();
  return d;
}

Mat21 continuous_noise_cov(const NoiseParams &noise) {
  using namespace slot;
  Mat21 Q = Mat21::Zero();
  Q.diagonal().segment<3>(kTheta).setConstant(noise.sigma_g * noise.sigma_g);
  Q.diagonal().segment<3>(kVel).setConstant(noise.sigma_a * noise.sigma_a);
  Q.diagonal().segment<3>(kBg).setConstant(noise.sigma_bg * noise.sigma_bg);
  Q.diagonal().segment<3>(kBa).setConstant(noise.sigma_ba * noise.sigma_ba);
  return Q;
}

MatX expm(const MatX &M) {
  if (M.rows() != M.cols())
    throw std::invalid_argument("expm: square matrix required");
  const double norm = M.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5)
    squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const MatX X = M / std::ldexp(1.0, squarings);

  MatX result = MatX::Identity(M.rows(), M.cols());
  MatX term = result;
  for (int k = 1; k <= 30; ++k) {
    term = (term * X / static_cast<double>(k)).eval();
    result += term;
    if (term.cwiseAbs().maxCoeff() < 1e-18)
      break;
  }
  for (int i = 0; i < squarings; ++i)
    result = (result * result).eval();
  return result;
}

void propagate_covariance(AugmentedState &s, const ErrorDynamics &dyn, const NoiseParams &noise, double dt) {
  if (!(dt > 0.0))
    throw std::invalid_argument("propagate_covariance: non-positive dt");
  constexpr int n = slot::kNavDim;
  const Mat21 Phi = expm(dyn.A * dt);
  const Mat21 Qc = dyn.W * continuous_noise_cov(noise) * dyn.W.transpose();
  const Mat21 Qd = 0.5 * dt * (Phi * Qc * Phi.transpose() + Qc);

  const int a = s.active_dim();
  const int rest = a - n;
  const Mat21 P11 = s.P_aa.topLeftCorner<n, n>();
  s.P_aa.topLeftCorner<n, n>() = Phi * P11 * Phi.transpose() + Qd;
  if (rest > 0) {
    const MatX P12 = Phi * s.P_aa.topRightCorner(n, rest);
    s.P_aa.topRightCorner(n, rest) = P12;
    s.P_aa.bottomLeftCorner(rest, n) = P12.transpose();
  }
  if (s.nuisance_dim() > 0)
    s.P_an.topRows<n>() = (Phi * s.P_an.topRows<n>()).eval();
  s.symmetrize();
}

void propagate(AugmentedState &s, const ImuSample &s0, const ImuSample &s1, const NoiseParams &noise) {
  const double dt = s1.t - s0.t;
  const ErrorDynamics dyn = s.chart == ErrorChart::Invariant
                                ? error_dynamics(s.nav)
                                : std_ekf_error_dynamics(s.nav, 0.5 * (s0.gyro + s1.gyro), 0.5 * (s0.accel + s1.accel));
  propagate_mean(s.nav, s0, s1);
  propagate_covariance(s, dyn, noise, dt);
}

}  // namespace mapvil
