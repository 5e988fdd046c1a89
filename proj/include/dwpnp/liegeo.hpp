#pragma once

// SE(3)/SO(3) primitives and the pinhole camera model.
//
// Twist layout is (rho, phi): translational part first, rotational part
// second. Pose updates are applied on the left, T <- exp(dxi) * T, so every
// Jacobian in the library is taken with respect to a perturbation expressed
// in the camera frame.

#include <Eigen/Core>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>

#include "dwpnp/errors.hpp"

namespace dwpnp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat26 = Eigen::Matrix<double, 2, 6>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

/// Rotations closer than this to pi are treated as lying on the cut locus.
inline constexpr double kCutLocusMargin = 1e-6;
/// Minimum admissible camera-frame depth for projection.
inline constexpr double kDepthEpsilon = 1e-6;

inline Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

inline Vec3 vee(const Mat3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

/// Lie-algebra coordinates of a rigid motion.
struct Twist {
  Vec3 rho = Vec3::Zero();
  Vec3 phi = Vec3::Zero();

  static Twist from_vector(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }

  Vec6 vector() const {
    Vec6 v;
    v << rho, phi;
    return v;
  }

  double squared_norm() const { return rho.squaredNorm() + phi.squaredNorm(); }
  double norm() const { return std::sqrt(squared_norm()); }
};

namespace detail {

// Coefficients of the SO(3) series with guarded small-angle expansions.
// a = sin(t)/t, b = (1-cos t)/t^2, c = (t - sin t)/t^3
struct RodriguesCoeffs {
  double a, b, c;
};

inline RodriguesCoeffs rodrigues_coeffs(double theta) {
  const double t2 = theta * theta;
  if (theta < 1e-4) {
    return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0};
  }
  const double s = std::sin(theta);
  const double half = std::sin(0.5 * theta);
  return {s / theta, 2.0 * half * half / t2, (theta - s) / (t2 * theta)};
}

}  // namespace detail

inline Mat3 so3_exp(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = hat(phi);
  if (theta < 1e-8) return Mat3::Identity() + K;
  const auto [a, b, c] = detail::rodrigues_coeffs(theta);
  (void)c;
  return Mat3::Identity() + a * K + b * K * K;
}

/// Rotation angle of an orthonormal matrix in [0, pi].
inline double rotation_angle(const Mat3& R) {
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double s = 0.5 * vee(R - R.transpose()).norm();
  return std::atan2(s, c);
}

/// Principal logarithm of a rotation. Throws CutLocusError near angle pi.
inline Vec3 so3_log(const Mat3& R) {
  const double theta = rotation_angle(R);
  if (theta >= kPi - kCutLocusMargin) {
    throw CutLocusError("rotation angle " + std::to_string(theta) +
                        " rad is on the cut locus");
  }
  const Vec3 w = vee(R - R.transpose());  // 2 sin(theta) * axis
  if (theta < 1e-4) {
    return 0.5 * (1.0 + theta * theta / 6.0) * w;
  }
  const double c = std::cos(theta);
  if (c > -0.9) {
    return theta / (2.0 * std::sin(theta)) * w;
  }
  // Close to pi the antisymmetric part is small; recover the axis from the
  // symmetric part (1 - cos) * a * a^T instead.
  const Mat3 B = 0.5 * (R + R.transpose()) - c * Mat3::Identity();
  int k = 0;
  B.diagonal().maxCoeff(&k);
  Vec3 axis = B.col(k) / std::sqrt(B(k, k) * (1.0 - c));
  if (axis.dot(w) < 0.0) axis = -axis;
  return theta * axis.normalized();
}

/// Left Jacobian of SO(3); also the V matrix of the SE(3) exponential.
inline Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = hat(phi);
  const auto [a, b, c] = detail::rodrigues_coeffs(theta);
  (void)a;
  return Mat3::Identity() + b * K + c * K * K;
}

inline Mat3 so3_left_jacobian_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = hat(phi);
  double d;
  if (theta < 1e-4) {
    d = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const double h = 0.5 * theta;
    d = (1.0 - h / std::tan(h)) / (theta * theta);
  }
  return Mat3::Identity() - 0.5 * K + d * K * K;
}

/// Rigid transform x -> R x + t.
///
/// Rotations are re-orthonormalized (polar decomposition) after every 50
/// consecutive compositions so long update chains cannot drift off SO(3).
class Pose {
 public:
  static constexpr std::uint32_t kRenormalizePeriod = 50;

  Pose() = default;
  Pose(const Mat3& R, const Vec3& t) : R_(R), t_(t) {}

  static Pose identity() { return {}; }

  static Pose from_matrix(const Mat4& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }

  const Mat3& rotation() const { return R_; }
  const Vec3& translation() const { return t_; }
  std::uint32_t compositions() const { return compositions_; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = R_;
    m.topRightCorner<3, 1>() = t_;
    return m;
  }

  Vec3 operator*(const Vec3& p) const { return R_ * p + t_; }

  friend Pose operator*(const Pose& a, const Pose& b) {
    Pose out(a.R_ * b.R_, a.R_ * b.t_ + a.t_);
    out.compositions_ = std::max(a.compositions_, b.compositions_) + 1;
    if (out.compositions_ >= kRenormalizePeriod) out.renormalize();
    return out;
  }

  Pose inverse() const {
    Pose out(R_.transpose(), -(R_.transpose() * t_));
    out.compositions_ = compositions_;
    return out;
  }

  /// Adjoint in (rho, phi) layout: Ad(T) xi = log(T exp(xi) T^-1).
  Mat6 adjoint() const {
    Mat6 A = Mat6::Zero();
    A.topLeftCorner<3, 3>() = R_;
    A.topRightCorner<3, 3>() = hat(t_) * R_;
    A.bottomRightCorner<3, 3>() = R_;
    return A;
  }

 private:
  void renormalize() {
    Eigen::JacobiSVD<Mat3> svd(R_, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 R = svd.matrixU() * svd.matrixV().transpose();
    if (R.determinant() < 0.0) {
      Mat3 U = svd.matrixU();
      U.col(2) = -U.col(2);
      R = U * svd.matrixV().transpose();
    }
    R_ = R;
    compositions_ = 0;
  }

  Mat3 R_ = Mat3::Identity();
  Vec3 t_ = Vec3::Zero();
  std::uint32_t compositions_ = 0;
};

inline Pose exp_map(const Twist& xi) {
  return {so3_exp(xi.phi), so3_left_jacobian(xi.phi) * xi.rho};
}

inline Pose exp_map(const Vec6& xi) { return exp_map(Twist::from_vector(xi)); }

inline Twist log_map(const Pose& T) {
  const Vec3 phi = so3_log(T.rotation());
  return {so3_left_jacobian_inverse(phi) * T.translation(), phi};
}

namespace detail {

// Translational coupling block Q(rho, phi) of the SE(3) left Jacobian.
inline Mat3 se3_q_block(const Vec3& rho, const Vec3& phi) {
  const double theta = phi.norm();
  const double t2 = theta * theta;
  double c1, c2, c3;
  if (theta < 1e-2) {
    c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
    c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0;
    c3 = 1.0 / 120.0 - t2 / 2520.0;
  } else {
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    c1 = (theta - s) / (t2 * theta);
    c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2);
    c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta);
  }
  const Mat3 P = hat(phi);
  const Mat3 Rh = hat(rho);
  const Mat3 PR = P * Rh;
  const Mat3 RP = Rh * P;
  const Mat3 PRP = PR * P;
  const Mat3 PP = P * P;
  return 0.5 * Rh + c1 * (PR + RP + PRP) + c2 * (PP * Rh + RP * P - 3.0 * PRP) +
         c3 * (PRP * P + PP * Rh * P);
}

}  // namespace detail

/// Left Jacobian of SE(3): exp(xi + d) ~= exp(J_l(xi) d) exp(xi).
inline Mat6 se3_left_jacobian(const Twist& xi) {
  const Mat3 J = so3_left_jacobian(xi.phi);
  Mat6 out = Mat6::Zero();
  out.topLeftCorner<3, 3>() = J;
  out.topRightCorner<3, 3>() = detail::se3_q_block(xi.rho, xi.phi);
  out.bottomRightCorner<3, 3>() = J;
  return out;
}

inline Mat6 se3_left_jacobian_inverse(const Twist& xi) {
  const Mat3 Ji = so3_left_jacobian_inverse(xi.phi);
  const Mat3 Q = detail::se3_q_block(xi.rho, xi.phi);
  Mat6 out = Mat6::Zero();
  out.topLeftCorner<3, 3>() = Ji;
  out.topRightCorner<3, 3>() = -Ji * Q * Ji;
  out.bottomRightCorner<3, 3>() = Ji;
  return out;
}

/// Inverse right Jacobian: log(exp(xi) exp(d)) ~= xi + J_r^-1(xi) d.
inline Mat6 se3_right_jacobian_inverse(const Twist& xi) {
  return se3_left_jacobian_inverse({-xi.rho, -xi.phi});
}

/// Squared norm of the relative twist log(A^-1 B).
inline double se3_distance(const Pose& A, const Pose& B) {
  return log_map(A.inverse() * B).squared_norm();
}

/// Pinhole intrinsics plus image extent.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double width = 0.0;
  double height = 0.0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("focal lengths must be positive");
    if (!(cx >= 0.0 && cx <= width) || !(cy >= 0.0 && cy <= height)) {
      throw ConfigError("optical center must lie inside the image extent");
    }
  }

  bool contains(const Vec2& px) const {
    return px.x() >= 0.0 && px.x() <= width && px.y() >= 0.0 && px.y() <= height;
  }
};

/// Projects a camera-frame point; nullopt when it is not in front of the camera.
inline std::optional<Vec2> project_camera_point(const Vec3& x, const CameraIntrinsics& K) {
  if (!(x.z() > kDepthEpsilon)) return std::nullopt;
  const double iz = 1.0 / x.z();
  return Vec2{K.fx * x.x() * iz + K.cx, K.fy * x.y() * iz + K.cy};
}

inline std::optional<Vec2> try_project(const Pose& T, const Vec3& p, const CameraIntrinsics& K) {
  return project_camera_point(T * p, K);
}

inline Vec2 project(const Pose& T, const Vec3& p, const CameraIntrinsics& K) {
  auto uv = try_project(T, p, K);
  if (!uv) throw BehindCameraError("point projects at or behind the camera plane");
  return *uv;
}

/// Homogeneous overload; any nonzero scaling of the 4-vector projects identically.
inline Vec2 project(const Pose& T, const Vec4& p_homog, const CameraIntrinsics& K) {
  if (p_homog.w() == 0.0) throw BehindCameraError("point at infinity cannot be projected");
  return project(T, Vec3(p_homog.head<3>() / p_homog.w()), K);
}

/// d pi / d x at a camera-frame point x.
inline Mat23 projection_jacobian(const Vec3& x, const CameraIntrinsics& K) {
  const double iz = 1.0 / x.z();
  const double iz2 = iz * iz;
  Mat23 J;
  J << K.fx * iz, 0.0, -K.fx * x.x() * iz2,
       0.0, K.fy * iz, -K.fy * x.y() * iz2;
  return J;
}

/// d pi(exp(dxi) x) / d dxi at dxi = 0 for a camera-frame point x.
inline Mat26 projection_twist_jacobian(const Vec3& x, const CameraIntrinsics& K) {
  const Mat23 Jp = projection_jacobian(x, K);
  Mat26 J;
  J.leftCols<3>() = Jp;
  J.rightCols<3>() = -Jp * hat(x);
  return J;
}

}  // namespace dwpnp
