#pragma once

#include <array>
#include <optional>

#include "dsl/camera.hpp"
#include "dsl/image.hpp"
#include "dsl/plane.hpp"
#include "dsl/se3.hpp"
#include "dsl/types.hpp"

namespace dsl {

// Residual pattern: center plus a 7-pixel spread, shared by both
// constraint types. All patch pixels of a point use one inverse depth
// (or one plane).
inline constexpr int kPatchSize = 8;
inline constexpr std::array<std::array<int, 2>, kPatchSize> kPatchOffsets = {{
    {0, 0}, {-2, 0}, {2, 0}, {0, -2}, {0, 2}, {-1, -1}, {1, -1}, {-1, 1}}};

// Margin that keeps every patch pixel and its bilinear support in-image.
inline constexpr double kPatchBorder = 3.0;

// Per-frame photometric state: global pose, exposure and affine
// brightness parameters, image pyramid. The optimized 8-vector is
// [xi(6) a b] with the twist applied as T_w_c * exp(xi).
struct FramePhotoState {
  Pose T_w_c;
  double exposure = 1.0;  // seconds, > 0
  double a = 0.0;
  double b = 0.0;
  ImagePyramid pyramid;

  const Image& image() const { return pyramid.base(); }
};

struct PhotoConfig {
  double huber = 9.0;          // Huber threshold, intensity levels
  double grad_weight_c = 50.0; // gradient-dependent weighting constant
};

// Relative brightness transfer of Eq. 2:
// a^t_h = (t_t e^{a_t}) / (t_h e^{a_h}),  b^t_h = b_t - a^t_h b_h.
std::pair<double, double> affine_pair(const FramePhotoState& host, const FramePhotoState& target);

// Plane-induced homography H^t_h = K (R - t n^T / d) K^-1 for a plane
// given in the host frame. Throws for |d| <= 1e-9 (plane through the
// host optical center).
Mat3 compute_homography(const Pose& T_t_h, const PlaneCoeffs& omega_h, const CameraIntrinsics& K);

// One photometric constraint between a host patch and a target image.
// Jacobians are with respect to the host and target 8-vectors and, for
// non-surfel blocks only, the inverse depth.
struct ResidualBlock {
  int host_id = -1, target_id = -1, point_id = -1;
  bool surfel = false;
  bool valid = false;
  Eigen::Matrix<double, kPatchSize, 1> residual = Eigen::Matrix<double, kPatchSize, 1>::Zero();
  Eigen::Matrix<double, kPatchSize, 1> weight = Eigen::Matrix<double, kPatchSize, 1>::Zero();
  Eigen::Matrix<double, kPatchSize, 8> J_host = Eigen::Matrix<double, kPatchSize, 8>::Zero();
  Eigen::Matrix<double, kPatchSize, 8> J_target = Eigen::Matrix<double, kPatchSize, 8>::Zero();
  Eigen::Matrix<double, kPatchSize, 1> J_idepth = Eigen::Matrix<double, kPatchSize, 1>::Zero();
  double energy = 0.0;  // sum of gradient-weighted Huber losses
};

// Eq. 1 residual: r = I_t[p_t] - (a^t_h I_h[p_h] + b^t_h) with
// p_t ~ K (R^t_h xbar_h + t^t_h rho). Returns false (block invalid) when
// the patch leaves either image or the point falls behind a camera.
bool residual_nonsurfel(const FramePhotoState& host, const FramePhotoState& target,
                        const CameraIntrinsics& K, const Vec2& p_h, double inv_depth,
                        ResidualBlock& block, bool with_jacobians, const PhotoConfig& cfg = {});

// Eq. 5 residual: the host patch is transferred by the homography induced
// by the world-frame plane omega_w transformed into the host frame
// (Eq. 4). Depends on the global host pose; carries no inverse-depth
// Jacobian.
bool residual_surfel(const FramePhotoState& host, const FramePhotoState& target,
                     const CameraIntrinsics& K, const Vec2& p_h, const PlaneCoeffs& omega_w,
                     ResidualBlock& block, bool with_jacobians, const PhotoConfig& cfg = {});

// Gradient-dependent weight times the Huber IRLS weight:
// c^2 / (c^2 + |grad|^2) * min(1, gamma / |r|).
double robust_weight(double r, double grad_mag, const PhotoConfig& cfg = {});

// Huber loss with quadratic core: r^2 for |r| <= gamma, gamma(2|r|-gamma)
// beyond.
double huber_loss(double r, double gamma);

}  // namespace dsl
