#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mapvil/propagation.hpp"
#include "test_support.hpp"

using namespace mapvil;
using namespace mapvil::testing;

namespace {

NavState perturb_nav(const NavState &nav, const VecX &xi, ErrorChart chart) {
  AugmentedState s = make_state(chart, nav, {}, MatX::Zero(27, 27));
  VecX d = VecX::Zero(27);
  d.head<21>() = xi;
  retract(s, d);
  return s.nav;
}

VecX nav_error(const NavState &truth, const NavState &est, ErrorChart chart) {
  AugmentedState t = make_state(chart, truth, {}, MatX::Zero(27, 27));
  AugmentedState e = make_state(chart, est, {}, MatX::Zero(27, 27));
  return state_error(t, e).head<21>();
}

// Exact mean for gyro/accel held constant over dt.
NavState closed_form(const NavState &nav, const Vec3 &gyro, const Vec3 &accel, double dt) {
  NavState out = nav;
  const Vec3 w = (gyro - nav.b_g) * dt, a = accel - nav.b_a;
  out.R_LI = nav.R_LI * so3_exp(w);
  out.v_LI = nav.v_LI + gravity() * dt + nav.R_LI * so3_left_jacobian(w) * a * dt;
  out.p_LI = nav.p_LI + nav.v_LI * dt + 0.5 * gravity() * dt * dt + nav.R_LI * so3_gamma2(w) * a * dt * dt;
  return out;
}

// RK4 on dP/dt = A P + P A^T + Q with a fine fixed step.
MatX riccati_reference(const MatX &P0, const MatX &A, const MatX &Q, double T, int steps) {
  const double h = T / steps;
  auto f = [&](const MatX &P) -> MatX { return A * P + P * A.transpose() + Q; };
  MatX P = P0;
  for (int i = 0; i < steps; ++i) {
    const MatX k1 = f(P), k2 = f(P + 0.5 * h * k1), k3 = f(P + 0.5 * h * k2), k4 = f(P + h * k3);
    P += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return P;
}

}  // namespace

TEST_CASE("propagate_mean: static hover") {
  Rng rng(21);
  NavState nav = random_nav(rng);
  nav.v_LI.setZero();
  const NavState before = nav;
  const ImuSample imu{0.0, nav.b_g, nav.b_a - nav.R_LI.transpose() * gravity()};
  for (int i = 0; i < 200; ++i)
    propagate_mean(nav, imu, 0.005);
  CHECK(max_abs(nav.R_LI - before.R_LI) < 1e-12);
  CHECK(nav.v_LI.norm() < 1e-12);
  CHECK((nav.p_LI - before.p_LI).norm() < 1e-12);
  CHECK_THROWS_AS(propagate_mean(nav, imu, 0.0), std::invalid_argument);
}

TEST_CASE("propagate_mean: constant inputs against the closed form") {
  Rng rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    NavState nav = random_nav(rng);
    const Vec3 gyro = randn3(rng, 0.5), accel = randn3(rng, 3.0);
    const NavState ref = closed_form(nav, gyro, accel, 1.0);
    const NavState before = nav;
    for (int i = 0; i < 200; ++i)
      propagate_mean(nav, {i * 0.005, gyro, accel}, {(i + 1) * 0.005, gyro, accel});
    CHECK(max_abs(nav.R_LI - ref.R_LI) < 1e-7);
    CHECK((nav.v_LI - ref.v_LI).norm() < 1e-7);
    CHECK((nav.p_LI - ref.p_LI).norm() < 1e-7);
    CHECK(max_abs(nav.R_LG - before.R_LG) == 0.0);
    CHECK((nav.p_LG - before.p_LG).norm() == 0.0);
    CHECK((nav.b_g - before.b_g).norm() == 0.0);
  }
}

TEST_CASE("error_dynamics: invariant core is state independent") {
  Rng rng(23);
  const ErrorDynamics d0 = error_dynamics(random_nav(rng));
  for (int i = 0; i < 20; ++i) {
    const ErrorDynamics d = error_dynamics(random_nav(rng));
    CHECK(d.A.topLeftCorner<9, 9>() == d0.A.topLeftCorner<9, 9>());
  }
  const ErrorDynamics id = error_dynamics(NavState{});
  CHECK(max_abs(id.A.block<3, 3>(slot::kTheta, slot::kBg) + Mat3::Identity()) == 0.0);
  CHECK(max_abs(id.A.block<3, 3>(slot::kVel, slot::kBa) + Mat3::Identity()) == 0.0);
  CHECK(max_abs(id.A.block<9, 3>(slot::kVel, slot::kBg)) == 0.0);
  const ErrorDynamics sd = std_ekf_error_dynamics(NavState{}, Vec3::Zero(), Vec3::Zero());
  CHECK(sd.A.block<3, 3>(slot::kTheta, slot::kBg) == id.A.block<3, 3>(slot::kTheta, slot::kBg));
  CHECK(sd.A.block<3, 3>(slot::kVel, slot::kBa) == id.A.block<3, 3>(slot::kVel, slot::kBa));
}

TEST_CASE("error_dynamics: finite-difference flow") {
  Rng rng(24);
  for (ErrorChart chart : {ErrorChart::Invariant, ErrorChart::Standard}) {
    for (int trial = 0; trial < 20; ++trial) {
      const NavState truth = random_nav(rng);
      const Vec3 gyro = randn3(rng, 0.5), accel = randn3(rng, 3.0);
      const VecX xi = randn_vec(rng, 21).normalized() * 1e-4;
      const NavState est = perturb_nav(truth, xi, chart);
      const ErrorDynamics d =
          chart == ErrorChart::Invariant ? error_dynamics(est) : std_ekf_error_dynamics(est, gyro, accel);

      const double h = 1e-5;
      NavState t1 = truth, e1 = est;
      propagate_mean(t1, {0.0, gyro, accel}, {h, gyro, accel});
      propagate_mean(e1, {0.0, gyro, accel}, {h, gyro, accel});
      const VecX rate = (nav_error(t1, e1, chart) - nav_error(truth, est, chart)) / h;
      CHECK(max_abs(rate - d.A * nav_error(truth, est, chart)) < 1e-6);
    }
  }
}

TEST_CASE("propagate_covariance") {
  Rng rng(25);
  AugmentedState s = random_state(rng, ErrorChart::Invariant, 2, 1);
  const MatX P0 = s.covariance();
  ErrorDynamics zero;
  zero.A.setZero();
  zero.W.setIdentity();
  propagate_covariance(s, zero, NoiseParams{0, 0, 0, 0}, 0.01);
  CHECK(max_abs(s.covariance() - P0) < 1e-18);

  // bias random walk only
  AugmentedState b = make_state(ErrorChart::Invariant, NavState{}, {}, MatX::Zero(27, 27));
  NoiseParams walk{0, 0, 0.02, 0};
  propagate_covariance(b, zero, walk, 0.005);
  CHECK(b.P_aa(slot::kBg, slot::kBg) == doctest::Approx(0.02 * 0.02 * 0.005).epsilon(1e-14));
  CHECK(b.P_aa(slot::kBa, slot::kBa) == 0.0);

  // against a fine-step Riccati solution with fixed dynamics
  for (ErrorChart chart : {ErrorChart::Invariant, ErrorChart::Standard}) {
    AugmentedState r = random_state(rng, chart);
    const ErrorDynamics d = chart == ErrorChart::Invariant ? error_dynamics(r.nav)
                                                           : std_ekf_error_dynamics(r.nav, randn3(rng), randn3(rng));
    const NoiseParams noise{0.01, 0.05, 0.001, 0.01};
    const MatX Q = d.W * continuous_noise_cov(noise) * d.W.transpose();
    const MatX ref = riccati_reference(r.P_aa.topLeftCorner<21, 21>(), d.A, Q, 1.0, 10000);
    for (int i = 0; i < 1000; ++i)
      propagate_covariance(r, d, noise, 1e-3);
    CHECK(rel_err(r.P_aa.topLeftCorner<21, 21>(), ref) < 1e-6);
  }
}

TEST_CASE("propagation keeps P PSD and nuisance static") {
  Rng rng(26);
  for (ErrorChart chart : {ErrorChart::Invariant, ErrorChart::Standard}) {
    AugmentedState s = random_state(rng, chart, 3, 2);
    s.nav.v_LI = Vec3(5, 0, 0);
    const MatX P_nn = s.P_nn;
    const MatX clone_block = s.P_aa.bottomRightCorner(18, 18);
    const MatX clone_an = s.P_an.bottomRows(18);
    const NoiseParams noise;
    ImuSample prev{0.0, randn3(rng, 0.2), Vec3(0, 0, 9.8) + randn3(rng, 0.5)};
    for (int k = 1; k <= 10000; ++k) {
      ImuSample cur{k * 0.005, randn3(rng, 0.2), Vec3(0, 0, 9.8) + randn3(rng, 0.5)};
      propagate(s, prev, cur, noise);
      prev = cur;
    }
    CHECK(min_eigenvalue(s.covariance()) >= -1e-8);
    CHECK(s.P_nn == P_nn);
    CHECK(s.P_aa.bottomRightCorner(18, 18) == clone_block);
    CHECK(s.P_an.bottomRows(18) == clone_an);
    CHECK(max_abs(s.P_aa - s.P_aa.transpose()) == 0.0);
  }
}

TEST_CASE("expm") {
  Rng rng(27);
  for (double scale : {1e-3, 0.1, 1.0, 3.0}) {
    const MatX A = randn_vec(rng, 36).reshaped(6, 6) * scale;
    const MatX E = expm(A);
    // exp(A) exp(-A) = I and exp(A/2)^2 = exp(A)
    CHECK(rel_err(E * expm(-A), MatX::Identity(6, 6)) < 1e-9);
    const MatX H = expm(0.5 * A);
    CHECK(rel_err(H * H, E) < 1e-10);
  }
  CHECK(rel_err(expm(Eigen::Vector3d(1, 2, 3).asDiagonal().toDenseMatrix()),
                Eigen::Vector3d(std::exp(1), std::exp(2), std::exp(3)).asDiagonal().toDenseMatrix()) < 1e-13);
}
