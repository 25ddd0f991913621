#include <cmath>

#include "dsl/photometric.hpp"

namespace dsl {

std::pair<double, double> affine_pair(const FramePhotoState& host, const FramePhotoState& target) {
  const double a_th = (target.exposure * std::exp(target.a)) / (host.exposure * std::exp(host.a));
  const double b_th = target.b - a_th * host.b;
  return {a_th, b_th};
}

Mat3 compute_homography(const Pose& T_t_h, const PlaneCoeffs& omega_h,
                        const CameraIntrinsics& K) {
  if (std::abs(omega_h.d) <= 1e-9)
    throw std::domain_error("compute_homography: plane passes through host optical center");
  const Mat3 A = T_t_h.R - T_t_h.t * (omega_h.normal.transpose() / omega_h.d);
  return K.K() * A * K.K_inv();
}

double huber_loss(double r, double gamma) {
  const double ar = std::abs(r);
  return ar <= gamma ? r * r : gamma * (2.0 * ar - gamma);
}

double robust_weight(double r, double grad_mag, const PhotoConfig& cfg) {
  const double c2 = cfg.grad_weight_c * cfg.grad_weight_c;
  const double gw = c2 / (c2 + grad_mag * grad_mag);
  const double ar = std::abs(r);
  const double hw = ar <= cfg.huber ? 1.0 : cfg.huber / ar;
  return gw * hw;
}

namespace {

// d(pi_K)/dx at a (projective) camera point.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraIntrinsics& K, const Vec3& x) {
  Eigen::Matrix<double, 2, 3> J;
  const double iz = 1.0 / x.z();
  J << K.fx * iz, 0, -K.fx * x.x() * iz * iz,
       0, K.fy * iz, -K.fy * x.y() * iz * iz;
  return J;
}

struct AffinePartials {
  double d_ah, d_bh, d_at, d_bt;
};

// Partials of r = I_t - (a^t_h I_h + b^t_h) w.r.t. the four per-frame
// affine parameters, given the host intensity under the patch pixel.
inline AffinePartials affine_partials(double a_th, double host_intensity, double host_b) {
  AffinePartials p;
  p.d_ah = a_th * (host_intensity - host_b);
  p.d_at = -p.d_ah;
  p.d_bh = a_th;
  p.d_bt = -1.0;
  return p;
}

}  // namespace

bool residual_nonsurfel(const FramePhotoState& host, const FramePhotoState& target,
                        const CameraIntrinsics& K, const Vec2& p_h, double inv_depth,
                        ResidualBlock& block, bool with_jacobians, const PhotoConfig& cfg) {
  block.surfel = false;
  block.valid = false;
  block.energy = 0.0;
  if (inv_depth <= 0.0) return false;
  const Image& Ih = host.image();
  const Image& It = target.image();
  if (!Ih.in_bounds(p_h.x(), p_h.y(), kPatchBorder)) return false;

  const Pose T_t_h = target.T_w_c.inverse() * host.T_w_c;
  const auto [a_th, b_th] = affine_pair(host, target);

  for (int i = 0; i < kPatchSize; ++i) {
    const Vec2 q(p_h.x() + kPatchOffsets[i][0], p_h.y() + kPatchOffsets[i][1]);
    const Vec3 xbar = K.unproject(q);
    const Vec3 x = T_t_h.R * xbar + T_t_h.t * inv_depth;  // projective target point
    if (x.z() <= 1e-9) return false;
    const Vec2 p_t(K.fx * x.x() / x.z() + K.cx, K.fy * x.y() / x.z() + K.cy);
    if (!It.in_bounds(p_t.x(), p_t.y(), kPatchBorder)) return false;

    Vec2 grad_h, grad_t;
    const double ih = Ih.sample_with_gradient(q.x(), q.y(), grad_h);
    const double it = It.sample_with_gradient(p_t.x(), p_t.y(), grad_t);
    const double r = it - (a_th * ih + b_th);
    block.residual(i) = r;
    block.weight(i) = robust_weight(r, grad_h.norm(), cfg);
    block.energy += robust_weight(0.0, grad_h.norm(), cfg) * huber_loss(r, cfg.huber);

    if (with_jacobians) {
      const Eigen::Matrix<double, 2, 3> Jpi = projection_jacobian(K, x);
      const Eigen::Matrix<double, 1, 3> g = grad_t.transpose() * Jpi;
      block.J_host.row(i).segment<3>(0) = inv_depth * (g * T_t_h.R);
      block.J_host.row(i).segment<3>(3) = -(g * T_t_h.R) * skew(xbar);
      block.J_target.row(i).segment<3>(0) = -inv_depth * g;
      block.J_target.row(i).segment<3>(3) = g * skew(x);
      block.J_idepth(i) = (g * T_t_h.t).value();
      const AffinePartials ap = affine_partials(a_th, ih, host.b);
      block.J_host(i, 6) = ap.d_ah;
      block.J_host(i, 7) = ap.d_bh;
      block.J_target(i, 6) = ap.d_at;
      block.J_target(i, 7) = ap.d_bt;
    }
  }
  block.valid = true;
  return true;
}

bool residual_surfel(const FramePhotoState& host, const FramePhotoState& target,
                     const CameraIntrinsics& K, const Vec2& p_h, const PlaneCoeffs& omega_w,
                     ResidualBlock& block, bool with_jacobians, const PhotoConfig& cfg) {
  block.surfel = true;
  block.valid = false;
  block.energy = 0.0;
  block.J_idepth.setZero();  // Eq. 5 carries no inverse depth
  const Image& Ih = host.image();
  const Image& It = target.image();
  if (!Ih.in_bounds(p_h.x(), p_h.y(), kPatchBorder)) return false;

  const Pose T_h_w = host.T_w_c.inverse();
  const PlaneCoeffs omega_h = transform_plane(T_h_w, omega_w);
  if (std::abs(omega_h.d) <= 1e-9) return false;  // degenerate plane

  const Pose T_t_h = target.T_w_c.inverse() * host.T_w_c;
  const Mat3 A = T_t_h.R - T_t_h.t * (omega_h.normal.transpose() / omega_h.d);
  const auto [a_th, b_th] = affine_pair(host, target);
  const Mat3 Rth = T_t_h.R;
  const Vec3 tth = T_t_h.t;
  const Vec3 n_h = omega_h.normal;
  const double d_h = omega_h.d;

  for (int i = 0; i < kPatchSize; ++i) {
    const Vec2 q(p_h.x() + kPatchOffsets[i][0], p_h.y() + kPatchOffsets[i][1]);
    const Vec3 xbar = K.unproject(q);
    const double rho = -n_h.dot(xbar) / d_h;  // surfel-induced inverse depth of this ray
    if (rho <= 1e-12) return false;           // intersection behind or at infinity
    const Vec3 x = A * xbar;                  // projective target point (true point * rho)
    if (x.z() <= 1e-9) return false;
    const Vec2 p_t(K.fx * x.x() / x.z() + K.cx, K.fy * x.y() / x.z() + K.cy);
    if (!It.in_bounds(p_t.x(), p_t.y(), kPatchBorder)) return false;

    Vec2 grad_h, grad_t;
    const double ih = Ih.sample_with_gradient(q.x(), q.y(), grad_h);
    const double it = It.sample_with_gradient(p_t.x(), p_t.y(), grad_t);
    const double r = it - (a_th * ih + b_th);
    block.residual(i) = r;
    block.weight(i) = robust_weight(r, grad_h.norm(), cfg);
    block.energy += robust_weight(0.0, grad_h.norm(), cfg) * huber_loss(r, cfg.huber);

    if (with_jacobians) {
      const Eigen::Matrix<double, 2, 3> Jpi = projection_jacobian(K, x);
      const Eigen::Matrix<double, 1, 3> g = grad_t.transpose() * Jpi;
      // Host pose enters both through the relative pose and through the
      // host-frame plane coefficients (Eq. 8 chain).
      block.J_host.row(i).segment<3>(0) = rho * (g * A);
      block.J_host.row(i).segment<3>(3) =
          -(g * Rth) * skew(xbar) -
          ((g * tth).value() / d_h) * (xbar.transpose() * skew(n_h));
      block.J_target.row(i).segment<3>(0) = -rho * g;
      block.J_target.row(i).segment<3>(3) = g * skew(x);
      const AffinePartials ap = affine_partials(a_th, ih, host.b);
      block.J_host(i, 6) = ap.d_ah;
      block.J_host(i, 7) = ap.d_bh;
      block.J_target(i, 6) = ap.d_at;
      block.J_target(i, 7) = ap.d_bt;
    }
  }
  block.valid = true;
  return true;
}

}  // namespace dsl
