#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "test_support.hpp"

#include <Eigen/Eigenvalues>

using namespace mapvil;
using namespace mapvil::testing;

namespace {

GroupElement random_element(Rng &rng, int K, int M) {
  std::vector<Vec3> vecs;
  for (int i = 0; i < 2 + K + M; ++i)
    vecs.push_back(randn3(rng, 3.0));
  std::vector<Mat3> extra;
  for (int j = 0; j < M; ++j)
    extra.push_back(random_rotation(rng));
  return GroupElement(random_rotation(rng), vecs, extra);
}

}  // namespace

TEST_CASE("so3_exp") {
  CHECK(max_abs(so3_exp(Vec3::Zero()) - Mat3::Identity()) == 0.0);

  const Vec3 w(0, 0, M_PI / 2);
  const Mat3 R = so3_exp(w);
  CHECK(rel_err(R, series_exp(skew(w), 20)) < 1e-12);
  CHECK((R * Vec3::UnitX() - Vec3::UnitY()).norm() < 1e-12);

  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 v = randn3(rng).normalized() * randu(rng, 0.0, M_PI - 1e-3);
    CHECK((so3_log(so3_exp(v)) - v).norm() < 1e-9);
  }
  // tiny angles go through the series branch
  const Vec3 t(1e-9, -2e-9, 3e-9);
  CHECK(rel_err(so3_exp(t), Mat3::Identity() + skew(t)) < 1e-17);
}

TEST_CASE("so3_log") {
  CHECK(so3_log(Mat3::Identity()).norm() == 0.0);
  const Vec3 w(0.3, -0.2, 0.1);
  CHECK((so3_log(so3_exp(w)) - w).norm() < 1e-9);

  // rotation by pi about z, checked against the eigenvector of the unit eigenvalue
  Mat3 Rz = Mat3::Identity();
  Rz(0, 0) = Rz(1, 1) = -1;
  const Vec3 got = so3_log(Rz);
  Eigen::EigenSolver<Mat3> es(Rz);
  int k = 0;
  for (int i = 0; i < 3; ++i)
    if (std::abs(es.eigenvalues()(i).real() - 1.0) < 1e-12)
      k = i;
  const Vec3 axis = es.eigenvectors().col(k).real().normalized();
  CHECK(std::abs(got.norm() - M_PI) < 1e-12);
  CHECK(std::abs(std::abs(got.normalized().dot(axis)) - 1.0) < 1e-12);
  CHECK((got - Vec3(0, 0, M_PI)).norm() < 1e-12);

  // near pi in both directions
  for (double eps : {1e-4, 1e-7}) {
    const Vec3 v = Vec3(1, 2, -0.5).normalized() * (M_PI - eps);
    CHECK((so3_log(so3_exp(v)) - v).norm() < 1e-7);
  }

  Mat3 bad = Mat3::Identity();
  bad(0, 1) = 1e-3;
  CHECK_THROWS_AS(so3_log(bad), InvalidElement);
  CHECK_THROWS_AS(so3_log(-Mat3::Identity()), InvalidElement);
}

TEST_CASE("left jacobian and gamma") {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Vec3 w = randn3(rng);
    // J_l = sum_k W^k/(k+1)!, Gamma2 = sum_k W^k/(k+2)!
    Mat3 J = Mat3::Zero(), G = Mat3::Zero(), term = Mat3::Identity();
    double f1 = 1.0, f2 = 2.0;
    for (int k = 0; k < 30; ++k) {
      J += term / f1;
      G += term / f2;
      term = term * skew(w);
      f1 *= k + 2;
      f2 *= k + 3;
    }
    CHECK(rel_err(so3_left_jacobian(w), J) < 1e-12);
    CHECK(rel_err(so3_gamma2(w), G) < 1e-12);
    CHECK(rel_err(so3_left_jacobian_inverse(w) * J, Mat3::Identity()) < 1e-12);
  }
  for (double a : {1e-9, 1e-5, 1e-3, 1e-2}) {
    const Vec3 w = Vec3(0.3, -0.4, 0.5).normalized() * a;
    CHECK(rel_err(so3_left_jacobian(w), Mat3::Identity() + 0.5 * skew(w)) < a * a);
    CHECK(rel_err(so3_left_jacobian_inverse(w) * so3_left_jacobian(w), Mat3::Identity()) < 1e-13);
    CHECK(rel_err(so3_gamma2(w), 0.5 * Mat3::Identity() + skew(w) / 6.0) < a * a);
  }
}

TEST_CASE("group_exp") {
  for (auto [K, M] : {std::pair{0, 1}, std::pair{1, 1}, std::pair{2, 3}, std::pair{0, 0}}) {
    const int n = GroupElement::tangent_dim(K, M);
    const GroupElement I = GroupElement::exp(VecX::Zero(n), K, M);
    CHECK(max_abs(I.matrix() - MatX::Identity(I.matrix_size(), I.matrix_size())) == 0.0);

    Rng rng(3 + K + M);
    const VecX small = randn_vec(rng, n).normalized() * 1e-6;
    const MatX first = MatX::Identity(I.matrix_size(), I.matrix_size()) + GroupElement::hat(small, K, M);
    CHECK(max_abs(GroupElement::exp(small, K, M).matrix() - first) < 1e-11);

    for (int i = 0; i < 20; ++i) {
      const VecX xi = randn_vec(rng, n).normalized() * randu(rng, 0.0, 1.0);
      const MatX ref = series_exp(GroupElement::hat(xi, K, M), 30);
      CHECK(max_abs(GroupElement::exp(xi, K, M).matrix() - ref) < 1e-10);
    }
  }
  CHECK_THROWS_AS(GroupElement::exp(VecX::Zero(14), 0, 1), std::invalid_argument);
}

TEST_CASE("group_log") {
  const GroupElement I = GroupElement::identity(1, 2);
  CHECK(I.log().norm() == 0.0);

  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const int K = i % 3, M = 1 + i % 2, n = GroupElement::tangent_dim(K, M);
    VecX xi = randn_vec(rng, n, 2.0);
    for (int b = 0; b < n; b += 3)  // keep every rotation block inside the principal range
      if (xi.segment<3>(b).norm() > 3.0)
        xi.segment<3>(b) *= 3.0 / xi.segment<3>(b).norm();
    const GroupElement X = GroupElement::exp(xi, K, M);
    CHECK((X.log() - xi).norm() < 1e-9);
    const GroupElement Y = random_element(rng, K, M);
    CHECK(max_abs(GroupElement::exp(Y.log(), K, M).matrix() - Y.matrix()) < 1e-9);
    for (int j = 0; j < M; ++j)
      CHECK((Y.log().segment<3>(n - 3 * M + 3 * j) - so3_log(Y.extra_rotation(j))).norm() < 1e-15);
  }
}

TEST_CASE("compose and inverse") {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const int K = i % 2, M = i % 3;
    const GroupElement A = random_element(rng, K, M), B = random_element(rng, K, M), C = random_element(rng, K, M);
    const GroupElement I = GroupElement::identity(K, M);
    CHECK(max_abs((A * I).matrix() - A.matrix()) == 0.0);
    CHECK(max_abs((A * B).matrix() - A.matrix() * B.matrix()) < 1e-12);
    CHECK(max_abs((A * A.inverse()).matrix() - I.matrix()) < 1e-10);
    CHECK(max_abs(((A * B) * C).matrix() - (A * (B * C)).matrix()) < 1e-9);
    const GroupElement Ai = A.inverse();
    CHECK(max_abs(Ai.rotation() - A.rotation().transpose()) == 0.0);
    for (int v = 0; v < A.num_vectors(); ++v)
      CHECK((Ai.vector(v) + A.rotation().transpose() * A.vector(v)).norm() < 1e-14);
    CHECK(max_abs(A.inverse().matrix() - A.matrix().inverse()) < 1e-10);
    // closure: the product embeds with the same block structure
    CHECK_NOTHROW(GroupElement::from_matrix((A * B).matrix(), K, M));
  }
  CHECK_THROWS_AS(random_element(rng, 0, 1) * random_element(rng, 1, 1), std::invalid_argument);
}

TEST_CASE("hat sparsity") {
  Rng rng(6);
  const int K = 1, M = 2, n = GroupElement::tangent_dim(K, M);
  const VecX xi = randn_vec(rng, n);
  const MatX X = GroupElement::hat(xi, K, M);
  CHECK((GroupElement::vee(X, K, M) - xi).norm() == 0.0);
  const int b1 = 3 + 2 + K + M;
  CHECK(max_abs(X.topRightCorner(b1, X.cols() - b1)) == 0.0);
  CHECK(max_abs(X.bottomLeftCorner(X.rows() - b1, b1)) == 0.0);
  CHECK(max_abs(X.block(3, 0, b1 - 3, b1)) == 0.0);  // bottom rows of the extended pose block
  for (int j = 0; j < M; ++j)
    for (int l = 0; l < M; ++l)
      if (j != l)
        CHECK(max_abs(X.block<3, 3>(b1 + 3 * j, b1 + 3 * l)) == 0.0);
}

TEST_CASE("adjoint") {
  const GroupElement I = GroupElement::identity(0, 1);
  CHECK(max_abs(I.adjoint() - MatX::Identity(15, 15)) == 0.0);

  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const int K = i % 2, M = 1 + i % 2, n = GroupElement::tangent_dim(K, M);
    const GroupElement X = random_element(rng, K, M), Y = random_element(rng, K, M);
    const VecX xi = randn_vec(rng, n);
    const MatX lhs = GroupElement::hat(X.adjoint() * xi, K, M);
    const MatX rhs = X.matrix() * GroupElement::hat(xi, K, M) * X.inverse().matrix();
    CHECK(max_abs(lhs - rhs) < 1e-9);
    CHECK(max_abs((X * Y).adjoint() - X.adjoint() * Y.adjoint()) < 1e-9);
  }

  // only the extra rotation differs from identity
  const Mat3 R_G = random_rotation(rng);
  const GroupElement G(Mat3::Identity(), {Vec3::Zero(), Vec3::Zero(), Vec3::Zero()}, {R_G});
  MatX expect = MatX::Identity(15, 15);
  expect.bottomRightCorner<3, 3>() = R_G;
  CHECK(max_abs(G.adjoint() - expect) == 0.0);

  // K=0, M=1 block pattern
  const GroupElement X = random_element(rng, 0, 1);
  const MatX Ad = X.adjoint();
  const Mat3 R = X.rotation();
  for (int b = 0; b < 4; ++b)
    CHECK(max_abs(Ad.block<3, 3>(3 * b, 3 * b) - R) == 0.0);
  for (int v = 0; v < 3; ++v)
    CHECK(max_abs(Ad.block<3, 3>(3 + 3 * v, 0) - skew(X.vector(v)) * R) < 1e-14);
  CHECK(max_abs(Ad.block<3, 3>(12, 12) - X.extra_rotation(0)) == 0.0);
}

TEST_CASE("normalize") {
  Rng rng(8);
  GroupElement X = random_element(rng, 0, 1);
  for (int i = 0; i < 2000; ++i)
    X = X * GroupElement::exp(randn_vec(rng, 15, 0.1), 0, 1);
  X.normalize();
  CHECK(is_rotation(X.rotation(), 1e-12));
  CHECK(is_rotation(X.extra_rotation(0), 1e-12));
}
