#pragma once

#include <cmath>
#include <stdexcept>

#include "dsl/types.hpp"

namespace dsl {

// Rigid body transform acting as x_out = R * x + t.
// Composition follows the usual convention: (A * B)(x) = A(B(x)).
template <typename S>
struct PoseT {
  Mat3T<S> R = Mat3T<S>::Identity();
  Vec3T<S> t = Vec3T<S>::Zero();

  PoseT() = default;
  PoseT(const Mat3T<S>& R_, const Vec3T<S>& t_) : R(R_), t(t_) {}

  static PoseT Identity() { return PoseT(); }

  Vec3T<S> operator*(const Vec3T<S>& x) const { return R * x + t; }

  PoseT operator*(const PoseT& other) const {
    return PoseT(R * other.R, R * other.t + t);
  }

  PoseT inverse() const {
    Mat3T<S> Rt = R.transpose();
    return PoseT(Rt, -(Rt * t));
  }

  Mat4T<S> matrix() const {
    Mat4T<S> M = Mat4T<S>::Identity();
    M.template topLeftCorner<3, 3>() = R;
    M.template topRightCorner<3, 1>() = t;
    return M;
  }
};

using Pose = PoseT<double>;

template <typename S>
Mat3T<S> skew(const Vec3T<S>& v) {
  Mat3T<S> m;
  m << S(0), -v.z(), v.y(),
       v.z(), S(0), -v.x(),
      -v.y(), v.x(), S(0);
  return m;
}

namespace detail {
// Series fallbacks kick in below this rotation angle.
inline constexpr double kSmallAngle = 1e-8;
}  // namespace detail

template <typename S>
Mat3T<S> so3_exp(const Vec3T<S>& w) {
  const S theta2 = w.squaredNorm();
  const S theta = std::sqrt(theta2);
  const Mat3T<S> W = skew(w);
  S a, b;  // R = I + a*W + b*W^2
  if (theta < S(detail::kSmallAngle)) {
    a = S(1) - theta2 / S(6);
    b = S(0.5) - theta2 / S(24);
  } else {
    a = std::sin(theta) / theta;
    // Half-angle form of (1 - cos)/theta^2, stable near zero.
    const S sh = std::sin(theta / S(2));
    b = S(2) * sh * sh / theta2;
  }
  return Mat3T<S>::Identity() + a * W + b * W * W;
}

template <typename S>
Vec3T<S> so3_log(const Mat3T<S>& R) {
  const S cos_theta = std::clamp((R.trace() - S(1)) / S(2), S(-1), S(1));
  const S theta = std::acos(cos_theta);
  if (theta > S(M_PI) - S(1e-7)) {
    throw std::domain_error("so3_log: rotation angle too close to pi, ill-conditioned");
  }
  Vec3T<S> v(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  S f;  // w = f * vee(R - R^T)
  if (theta < S(detail::kSmallAngle)) {
    f = S(0.5) + theta * theta / S(12);
  } else {
    f = theta / (S(2) * std::sin(theta));
  }
  return f * v;
}

// Left Jacobian of SO(3): V such that exp([u,w]) has translation V(w)*u.
template <typename S>
Mat3T<S> so3_left_jacobian(const Vec3T<S>& w) {
  const S theta2 = w.squaredNorm();
  const S theta = std::sqrt(theta2);
  const Mat3T<S> W = skew(w);
  S b, c;  // V = I + b*W + c*W^2
  if (theta < S(detail::kSmallAngle)) {
    b = S(0.5) - theta2 / S(24);
    c = S(1) / S(6) - theta2 / S(120);
  } else {
    const S sh = std::sin(theta / S(2));
    b = S(2) * sh * sh / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3T<S>::Identity() + b * W + c * W * W;
}

template <typename S>
Mat3T<S> so3_left_jacobian_inv(const Vec3T<S>& w) {
  const S theta2 = w.squaredNorm();
  const S theta = std::sqrt(theta2);
  const Mat3T<S> W = skew(w);
  S c;  // V^-1 = I - W/2 + c*W^2
  if (theta < S(detail::kSmallAngle)) {
    c = S(1) / S(12) + theta2 / S(720);
  } else {
    c = S(1) / theta2 - (S(1) + std::cos(theta)) / (S(2) * theta * std::sin(theta));
  }
  return Mat3T<S>::Identity() - S(0.5) * W + c * W * W;
}

// Twist ordering: xi = [translational(3), rotational(3)].
template <typename S>
PoseT<S> se3_exp(const Vec6T<S>& xi) {
  const Vec3T<S> u = xi.template head<3>();
  const Vec3T<S> w = xi.template tail<3>();
  return PoseT<S>(so3_exp(w), so3_left_jacobian(w) * u);
}

template <typename S>
Vec6T<S> se3_log(const PoseT<S>& T) {
  const Vec3T<S> w = so3_log(T.R);
  Vec6T<S> xi;
  xi.template head<3>() = so3_left_jacobian_inv(w) * T.t;
  xi.template tail<3>() = w;
  return xi;
}

// Tangent-space difference under the right-update convention
// T = ref * exp(delta)  =>  delta = log(ref^-1 * T).
template <typename S>
Vec6T<S> pose_boxminus(const PoseT<S>& T, const PoseT<S>& ref) {
  return se3_log(ref.inverse() * T);
}

template <typename S>
PoseT<S> pose_boxplus(const PoseT<S>& T, const Vec6T<S>& delta) {
  return T * se3_exp(delta);
}

// Frobenius-norm orthonormality defect of a rotation candidate.
template <typename S>
S rotation_defect(const Mat3T<S>& R) {
  return (R * R.transpose() - Mat3T<S>::Identity()).norm() + std::abs(R.determinant() - S(1));
}

}  // namespace dsl
