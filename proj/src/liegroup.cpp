#include "mapvil/liegroup.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace mapvil {

namespace {

// Below this angle the trigonometric ratios are replaced by their series.
constexpr double kSmallAngle = 1e-4;

// (sin t)/t, (1-cos t)/t^2, (t-sin t)/t^3
struct TrigRatios {
  double a, b, c;
};

TrigRatios trig_ratios(double t) {
  const double t2 = t * t;
  if (t < kSmallAngle)
    return {1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0};
  const double s = std::sin(t), c = std::cos(t);
  return {s / t, (1.0 - c) / t2, (t - s) / (t2 * t)};
}

}  // namespace

Mat3 skew(const Vec3 &w) {
  Mat3 W;
  W << 0.0, -w(2), w(1), w(2), 0.0, -w(0), -w(1), w(0), 0.0;
  return W;
}

Vec3 unskew(const Mat3 &W) { return Vec3(W(2, 1), W(0, 2), W(1, 0)); }

Mat3 so3_exp(const Vec3 &w) {
  const TrigRatios k = trig_ratios(w.norm());
  const Mat3 W = skew(w);
  return Mat3::Identity() + k.a * W + k.b * W * W;
}

bool is_rotation(const Mat3 &R, double tol) {
  if (!R.allFinite())
    return false;
  return (R.transpose() * R - Mat3::Identity()).norm() <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

Vec3 so3_log(const Mat3 &R) {
  if (!is_rotation(R, 1e-6))
    throw InvalidElement("so3_log: matrix is not a rotation");
  const double cos_t = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double t = std::acos(cos_t);
  const Vec3 s = 0.5 * unskew(R - R.transpose());  // sin(t) * axis
  if (t < kSmallAngle)
    return s * (1.0 + t * t / 6.0);
  if (std::numbers::pi - t > 1e-3)
    return s * (t / std::sin(t));

  // Near pi the antisymmetric part vanishes; take the axis from R + R^T.
  const Mat3 aat = (0.5 * (R + R.transpose()) - cos_t * Mat3::Identity()) / (1.0 - cos_t);
  int k = 0;
  aat.diagonal().maxCoeff(&k);
  Vec3 axis = aat.col(k) / std::sqrt(std::max(aat(k, k), 1e-300));
  axis.normalize();
  if (axis.dot(s) < 0.0)
    axis = -axis;
  return t * axis;
}

Mat3 so3_left_jacobian(const Vec3 &w) {
  const TrigRatios k = trig_ratios(w.norm());
  const Mat3 W = skew(w);
  return Mat3::Identity() + k.b * W + k.c * W * W;
}

Mat3 so3_left_jacobian_inverse(const Vec3 &w) {
  const double t = w.norm();
  const Mat3 W = skew(w);
  double d;
  if (t < 1e-3) {
    const double t2 = t * t;
    d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    d = 1.0 / (t * t) - (1.0 + std::cos(t)) / (2.0 * t * std::sin(t));
  }
  return Mat3::Identity() - 0.5 * W + d * W * W;
}

Mat3 so3_gamma2(const Vec3 &w) {
  const double t = w.norm();
  const Mat3 W = skew(w);
  double c1, c2;
  if (t < 1e-2) {
    const double t2 = t * t;
    c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
    c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0;
  } else {
    const double t2 = t * t;
    c1 = (t - std::sin(t)) / (t2 * t);
    c2 = (0.5 * t2 + std::cos(t) - 1.0) / (t2 * t2);
  }
  return 0.5 * Mat3::Identity() + c1 * W + c2 * W * W;
}

Mat3 nearest_rotation(const Mat3 &M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * D * svd.matrixV().transpose();
}

// ---------------------------------------------------------------------------

GroupElement::GroupElement(int num_features, int num_extra)
    : num_features_(num_features), vectors_(2 + num_features + num_extra, Vec3::Zero()),
      extra_(num_extra, Mat3::Identity()) {
  if (num_features < 0 || num_extra < 0)
    throw std::invalid_argument("GroupElement: negative K or M");
}

GroupElement::GroupElement(const Mat3 &rotation, std::vector<Vec3> vectors, std::vector<Mat3> extra)
    : R_(rotation), vectors_(std::move(vectors)), extra_(std::move(extra)) {
  num_features_ = static_cast<int>(vectors_.size()) - 2 - static_cast<int>(extra_.size());
  if (num_features_ < 0)
    throw std::invalid_argument("GroupElement: need at least 2 + M vector slots");
}

void GroupElement::check_compatible(const GroupElement &o) const {
  if (o.num_features_ != num_features_ || o.num_extra() != num_extra())
    throw std::invalid_argument("GroupElement: shape mismatch");
}

GroupElement GroupElement::operator*(const GroupElement &o) const {
  check_compatible(o);
  GroupElement out(num_features_, num_extra());
  out.R_ = R_ * o.R_;
  for (int i = 0; i < num_vectors(); ++i)
    out.vectors_[i] = R_ * o.vectors_[i] + vectors_[i];
  for (int j = 0; j < num_extra(); ++j)
    out.extra_[j] = extra_[j] * o.extra_[j];
  return out;
}

GroupElement GroupElement::inverse() const {
  GroupElement out(num_features_, num_extra());
  out.R_ = R_.transpose();
  for (int i = 0; i < num_vectors(); ++i)
    out.vectors_[i] = -out.R_ * vectors_[i];
  for (int j = 0; j < num_extra(); ++j)
    out.extra_[j] = extra_[j].transpose();
  return out;
}

MatX GroupElement::adjoint() const {
  const int n = dim(), N = num_vectors();
  MatX Ad = MatX::Zero(n, n);
  Ad.block<3, 3>(0, 0) = R_;
  for (int i = 0; i < N; ++i) {
    Ad.block<3, 3>(3 + 3 * i, 3 + 3 * i) = R_;
    Ad.block<3, 3>(3 + 3 * i, 0) = skew(vectors_[i]) * R_;
  }
  for (int j = 0; j < num_extra(); ++j) {
    const int o = 3 + 3 * N + 3 * j;
    Ad.block<3, 3>(o, o) = extra_[j];
  }
  return Ad;
}

MatX GroupElement::matrix() const {
  const int N = num_vectors(), b1 = 3 + N;
  MatX X = MatX::Zero(matrix_size(), matrix_size());
  X.block(0, 0, b1, b1).setIdentity();
  X.block<3, 3>(0, 0) = R_;
  for (int i = 0; i < N; ++i)
    X.block<3, 1>(0, 3 + i) = vectors_[i];
  for (int j = 0; j < num_extra(); ++j)
    X.block<3, 3>(b1 + 3 * j, b1 + 3 * j) = extra_[j];
  return X;
}

GroupElement GroupElement::from_matrix(const MatX &X, int K, int M, double tol) {
  GroupElement out(K, M);
  const int N = out.num_vectors(), b1 = 3 + N;
  if (X.rows() != out.matrix_size() || X.cols() != out.matrix_size())
    throw InvalidElement("from_matrix: wrong size");
  MatX expected_zero = X;
  expected_zero.block(0, 0, 3, b1).setZero();
  for (int j = 0; j < M; ++j)
    expected_zero.block<3, 3>(b1 + 3 * j, b1 + 3 * j).setZero();
  expected_zero.block(3, 3, N, N) -= MatX::Identity(N, N);
  if (expected_zero.cwiseAbs().maxCoeff() > tol)
    throw InvalidElement("from_matrix: invalid block structure");
  out.R_ = X.block<3, 3>(0, 0);
  if (!is_rotation(out.R_, tol))
    throw InvalidElement("from_matrix: invalid rotation block");
  for (int i = 0; i < N; ++i)
    out.vectors_[i] = X.block<3, 1>(0, 3 + i);
  for (int j = 0; j < M; ++j) {
    out.extra_[j] = X.block<3, 3>(b1 + 3 * j, b1 + 3 * j);
    if (!is_rotation(out.extra_[j], tol))
      throw InvalidElement("from_matrix: invalid extra rotation");
  }
  return out;
}

GroupElement GroupElement::exp(const VecX &xi, int K, int M) {
  if (xi.size() != tangent_dim(K, M))
    throw std::invalid_argument("GroupElement::exp: tangent dimension " + std::to_string(xi.size()) +
                                " != " + std::to_string(tangent_dim(K, M)));
  GroupElement out(K, M);
  const int N = out.num_vectors();
  const Vec3 theta = xi.head<3>();
  out.R_ = so3_exp(theta);
  const Mat3 J = so3_left_jacobian(theta);
  for (int i = 0; i < N; ++i)
    out.vectors_[i] = J * xi.segment<3>(3 + 3 * i);
  for (int j = 0; j < M; ++j)
    out.extra_[j] = so3_exp(xi.segment<3>(3 + 3 * N + 3 * j));
  return out;
}

VecX GroupElement::log() const {
  const int N = num_vectors();
  VecX xi(dim());
  const Vec3 theta = so3_log(R_);
  xi.head<3>() = theta;
  const Mat3 Jinv = so3_left_jacobian_inverse(theta);
  for (int i = 0; i < N; ++i)
    xi.segment<3>(3 + 3 * i) = Jinv * vectors_[i];
  for (int j = 0; j < num_extra(); ++j)
    xi.segment<3>(3 + 3 * N + 3 * j) = so3_log(extra_[j]);
  return xi;
}

MatX GroupElement::hat(const VecX &xi, int K, int M) {
  const int N = 2 + K + M, b1 = 3 + N, n = b1 + 3 * M;
  if (xi.size() != tangent_dim(K, M))
    throw std::invalid_argument("GroupElement::hat: wrong tangent dimension");
  MatX X = MatX::Zero(n, n);
  X.block<3, 3>(0, 0) = skew(xi.head<3>());
  for (int i = 0; i < N; ++i)
    X.block<3, 1>(0, 3 + i) = xi.segment<3>(3 + 3 * i);
  for (int j = 0; j < M; ++j)
    X.block<3, 3>(b1 + 3 * j, b1 + 3 * j) = skew(xi.segment<3>(3 + 3 * N + 3 * j));
  return X;
}

VecX GroupElement::vee(const MatX &X, int K, int M) {
  const int N = 2 + K + M, b1 = 3 + N;
  if (X.rows() != b1 + 3 * M || X.cols() != b1 + 3 * M)
    throw std::invalid_argument("GroupElement::vee: wrong matrix size");
  VecX xi(tangent_dim(K, M));
  xi.head<3>() = unskew(X.block<3, 3>(0, 0));
  for (int i = 0; i < N; ++i)
    xi.segment<3>(3 + 3 * i) = X.block<3, 1>(0, 3 + i);
  for (int j = 0; j < M; ++j)
    xi.segment<3>(3 + 3 * N + 3 * j) = unskew(X.block<3, 3>(b1 + 3 * j, b1 + 3 * j));
  return xi;
}

void GroupElement::normalize() {
  if (!is_rotation(R_, 1e-9))
    R_ = nearest_rotation(R_);
  for (auto &E : extra_)
    if (!is_rotation(E, 1e-9))
      E = nearest_rotation(E);
}

}  // namespace mapvil
