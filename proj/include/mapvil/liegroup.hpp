#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <stdexcept>
#include <vector>

namespace mapvil {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Thrown when a matrix does not satisfy the structure an operation requires.
class InvalidElement : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

Mat3 skew(const Vec3 &w);
Vec3 unskew(const Mat3 &W);

Mat3 so3_exp(const Vec3 &w);

/// Principal logarithm, norm of the result is at most pi.
/// Throws InvalidElement if R is not a rotation within 1e-6.
Vec3 so3_log(const Mat3 &R);

/// Left Jacobian J_l(w) = sum_k (w^)^k / (k+1)!, and its inverse.
Mat3 so3_left_jacobian(const Vec3 &w);
Mat3 so3_left_jacobian_inverse(const Vec3 &w);

/// Integral of (1-u) Exp(u w) over [0,1], the double-integration kernel of a
/// constant-rate rotation.
Mat3 so3_gamma2(const Vec3 &w);

bool is_rotation(const Mat3 &R, double tol = 1e-9);

/// Nearest rotation in Frobenius norm (polar decomposition).
Mat3 nearest_rotation(const Mat3 &M);

/// Element of the block-diagonal group made of one extended pose with
/// 2+K+M vector columns and M extra rotations.
///
/// Tangent layout: [theta0, phi_1 .. phi_{2+K+M}, theta_1 .. theta_M], i.e.
/// dimension 9 + 3K + 6M.
class GroupElement {
public:
  GroupElement(int num_features, int num_extra);
  GroupElement(const Mat3 &rotation, std::vector<Vec3> vectors, std::vector<Mat3> extra);

  static GroupElement identity(int num_features, int num_extra) { return {num_features, num_extra}; }

  int num_features() const { return num_features_; }
  int num_extra() const { return static_cast<int>(extra_.size()); }
  int num_vectors() const { return static_cast<int>(vectors_.size()); }
  int dim() const { return tangent_dim(num_features_, num_extra()); }
  int matrix_size() const { return 3 + num_vectors() + 3 * num_extra(); }

  static int tangent_dim(int K, int M) { return 9 + 3 * K + 6 * M; }

  const Mat3 &rotation() const { return R_; }
  const Vec3 &vector(int i) const { return vectors_.at(i); }
  const Mat3 &extra_rotation(int j) const { return extra_.at(j); }
  Mat3 &rotation() { return R_; }
  Vec3 &vector(int i) { return vectors_.at(i); }
  Mat3 &extra_rotation(int j) { return extra_.at(j); }

  GroupElement operator*(const GroupElement &other) const;
  GroupElement inverse() const;

  /// Adjoint matrix, dim() x dim(), such that hat(Ad xi) = X hat(xi) X^-1.
  MatX adjoint() const;

  /// Dense block-diagonal embedding. Used by tests and diagnostics only.
  MatX matrix() const;
  static GroupElement from_matrix(const MatX &X, int K, int M, double tol = 1e-6);

  static GroupElement exp(const VecX &xi, int K, int M);
  VecX log() const;

  static MatX hat(const VecX &xi, int K, int M);
  static VecX vee(const MatX &X, int K, int M);

  /// Re-orthonormalizes rotations whose orthogonality residual exceeds 1e-9.
  void normalize();

private:
  void check_compatible(const GroupElement &other) const;

  int num_features_ = 0;
  Mat3 R_ = Mat3::Identity();
  std::vector<Vec3> vectors_;
  std::vector<Mat3> extra_;
};

}  // namespace mapvil
