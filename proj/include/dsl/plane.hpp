#pragma once

#include "dsl/se3.hpp"
#include "dsl/types.hpp"

namespace dsl {

// Plane as homogeneous coefficients [n; d] with the convention
// n . x + d = 0 for every point x on the plane; n is unit length,
// d may be negative.
template <typename S>
struct PlaneCoeffsT {
  Vec3T<S> normal = Vec3T<S>::UnitZ();
  S d = S(0);

  PlaneCoeffsT() = default;
  PlaneCoeffsT(const Vec3T<S>& n, S d_) : normal(n), d(d_) {}

  static PlaneCoeffsT from_point_normal(const Vec3T<S>& point, const Vec3T<S>& n) {
    const Vec3T<S> nu = n.normalized();
    return PlaneCoeffsT(nu, -nu.dot(point));
  }

  // Signed distance of x from the plane.
  S evaluate(const Vec3T<S>& x) const { return normal.dot(x) + d; }

  Vec4T<S> homogeneous() const {
    Vec4T<S> w;
    w << normal, d;
    return w;
  }
};

using PlaneCoeffs = PlaneCoeffsT<double>;

// Re-expresses a world-frame plane in the host frame given T_h_w
// (world-to-host): omega_h = (T_h_w)^-T omega_w, which reduces to
// n_h = R n_w, d_h = d_w - t^T R n_w. The normal stays unit under a
// rigid transform; it is renormalized anyway to absorb roundoff.
template <typename S>
PlaneCoeffsT<S> transform_plane(const PoseT<S>& T_h_w, const PlaneCoeffsT<S>& omega_w) {
  Vec3T<S> n = T_h_w.R * omega_w.normal;
  S d = omega_w.d - T_h_w.t.dot(n);
  const S len = n.norm();
  n /= len;
  d /= len;
  return PlaneCoeffsT<S>(n, d);
}

}  // namespace dsl
