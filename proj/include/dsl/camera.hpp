#pragma once

#include <optional>
#include <stdexcept>

#include "dsl/types.hpp"

namespace dsl {

// Pinhole model, undistorted images.
struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  CameraIntrinsics() = default;
  CameraIntrinsics(double fx_, double fy_, double cx_, double cy_, int w, int h)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(w), height(h) {
    if (fx <= 0 || fy <= 0) throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive");
    if (cx <= 0 || cx >= width || cy <= 0 || cy >= height)
      throw std::invalid_argument("CameraIntrinsics: principal point outside image");
  }

  Mat3 K() const {
    Mat3 k = Mat3::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
  }

  Mat3 K_inv() const {
    Mat3 k = Mat3::Identity();
    k(0, 0) = 1.0 / fx;
    k(1, 1) = 1.0 / fy;
    k(0, 2) = -cx / fx;
    k(1, 2) = -cy / fy;
    return k;
  }

  // Non-throwing projection; empty when the point is at or behind the camera.
  std::optional<Vec2> project_checked(const Vec3& x) const {
    if (x.z() <= 0.0) return std::nullopt;
    return Vec2(fx * x.x() / x.z() + cx, fy * x.y() / x.z() + cy);
  }

  // Normalized ray direction with unit z for a pixel.
  Vec3 unproject(const Vec2& p) const {
    return Vec3((p.x() - cx) / fx, (p.y() - cy) / fy, 1.0);
  }

  bool in_image(const Vec2& p, double border = 0.0) const {
    return p.x() >= border && p.y() >= border && p.x() <= width - 1 - border &&
           p.y() <= height - 1 - border;
  }
};

inline Vec2 project(const CameraIntrinsics& K, const Vec3& x) {
  auto p = K.project_checked(x);
  if (!p) throw std::domain_error("project: point at or behind camera (z <= 0)");
  return *p;
}

inline Vec3 backproject(const CameraIntrinsics& K, const Vec2& p, double inv_depth) {
  if (inv_depth <= 0.0) throw std::domain_error("backproject: inverse depth must be positive");
  return K.unproject(p) / inv_depth;
}

}  // namespace dsl
