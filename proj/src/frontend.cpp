#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Cholesky>

#include "dsl/frontend.hpp"

namespace dsl {

std::vector<Vec2> select_candidates(const Image& img, int density, double min_gradient) {
  std::vector<Vec2> out;
  if (density <= 0 || img.width() < 16 || img.height() < 16) return out;
  const double area = static_cast<double>(img.width()) * img.height();
  const int cell = std::max(2, static_cast<int>(std::floor(std::sqrt(area / density))));
  const int margin = static_cast<int>(kPatchBorder) + 1;

  struct CellMax {
    double grad = 0;
    int x = -1, y = -1;
  };
  std::vector<CellMax> cells;
  for (int cy = margin; cy + cell <= img.height() - margin; cy += cell) {
    for (int cx = margin; cx + cell <= img.width() - margin; cx += cell) {
      CellMax cm;
      for (int y = cy; y < cy + cell; ++y)
        for (int x = cx; x < cx + cell; ++x) {
          const double gx = 0.5 * (img.at(x + 1, y) - img.at(x - 1, y));
          const double gy = 0.5 * (img.at(x, y + 1) - img.at(x, y - 1));
          const double g = std::sqrt(gx * gx + gy * gy);
          if (g > cm.grad) {
            cm.grad = g;
            cm.x = x;
            cm.y = y;
          }
        }
      cells.push_back(cm);
    }
  }
  // Adaptive component: half the median of per-cell maxima, floored by
  // the absolute threshold, so flat regions stay empty.
  std::vector<double> maxima;
  for (const auto& c : cells)
    if (c.x >= 0) maxima.push_back(c.grad);
  double adaptive = min_gradient;
  if (!maxima.empty()) {
    std::nth_element(maxima.begin(), maxima.begin() + maxima.size() / 2, maxima.end());
    adaptive = std::max(min_gradient, 0.5 * maxima[maxima.size() / 2]);
  }
  for (const auto& c : cells)
    if (c.x >= 0 && c.grad >= adaptive) out.emplace_back(c.x, c.y);
  return out;
}

std::optional<double> surfel_induced_inverse_depth(const Vec2& p_h, const PlaneCoeffs& omega_w,
                                                   const Pose& T_w_h, const CameraIntrinsics& K,
                                                   double near_clip, double far_clip) {
  const Vec3 xbar = K.unproject(p_h);
  const double denom = T_w_h.t.dot(omega_w.normal) + omega_w.d;
  if (std::abs(denom) <= 1e-9) return std::nullopt;  // plane through the camera center
  const double rho = -omega_w.normal.dot(T_w_h.R * xbar) / denom;
  if (!(rho > 0)) return std::nullopt;  // parallel ray or intersection behind camera
  const double depth = 1.0 / rho;
  if (depth <= near_clip || depth >= far_clip) return std::nullopt;
  return rho;
}

double depth_consistency_theta(double rho_a, double rho_b) {
  const double mn = std::min(rho_a, rho_b), mx = std::max(rho_a, rho_b);
  if (mx <= 0) return 1.0;
  return 1.0 - mn / mx;
}

WindowState initialize(const Image& first_image, double timestamp, double exposure,
                       const Pose& initial_pose, const SurfelMap& map,
                       const CameraIntrinsics& K, const TrackerConfig& cfg,
                       const RenderOptions& render_opts) {
  WindowState w;
  w.K = K;
  const RenderedMaps maps = render(map, initial_pose, K, render_opts);
  const std::vector<Vec2> candidates =
      select_candidates(first_image, cfg.candidate_density, cfg.min_gradient);
  if (candidates.empty()) throw std::runtime_error("initialize: no candidate points selected");

  int covered = 0;
  std::vector<std::pair<Vec2, double>> seeded;
  for (const Vec2& c : candidates) {
    const auto d = depth_at(maps, static_cast<int>(std::lround(c.x())),
                            static_cast<int>(std::lround(c.y())));
    if (!d) continue;
    ++covered;
    seeded.emplace_back(c, *d);
  }
  const double coverage = static_cast<double>(covered) / candidates.size();
  if (coverage < cfg.init_min_coverage)
    throw std::runtime_error("initialize: rendered depth covers only " +
                             std::to_string(coverage) + " of candidates");

  KeyFrame kf;
  kf.id = 0;
  kf.frame_id = 0;
  kf.timestamp = timestamp;
  kf.state.T_w_c = initial_pose;
  kf.state.exposure = exposure;
  kf.state.pyramid = ImagePyramid(first_image, cfg.pyramid_levels);
  w.keyframes.push_back(std::move(kf));

  for (const auto& [pix, depth] : seeded) {
    TrackedPoint pt;
    pt.id = w.next_point_id++;
    pt.host_kf = 0;
    pt.pixel = pix;
    pt.idepth = 1.0 / depth;
    // Uncertainty from the map resolution: a surfel-radius depth slack.
    const double radius = map.surfels.empty() ? 0.05 : map.surfels.front().radius;
    pt.idepth_sigma = radius / (depth * depth);
    pt.status = PointStatus::kCandidate;
    w.points.push_back(pt);
  }
  return w;
}

namespace {

struct RefPixel {
  Vec2 pixel;       // in the reference keyframe, full resolution
  double idepth;    // in the reference keyframe
  double intensity; // reference image value
};

CameraIntrinsics level_intrinsics(const CameraIntrinsics& K, int level) {
  const double s = 1.0 / (1 << level);
  CameraIntrinsics out = K;
  out.fx = K.fx * s;
  out.fy = K.fy * s;
  out.cx = (K.cx + 0.5) * s - 0.5;
  out.cy = (K.cy + 0.5) * s - 0.5;
  out.width = K.width >> level;
  out.height = K.height >> level;
  return out;
}

// Reference (pixel, idepth, intensity) set for tracking against the last
// keyframe: points hosted there directly, others projected in.
std::vector<RefPixel> build_reference(const WindowState& w, const KeyFrame& ref) {
  std::vector<RefPixel> out;
  const Pose T_ref_w = ref.state.T_w_c.inverse();
  for (const TrackedPoint& pt : w.points) {
    if (pt.status == PointStatus::kOutlier) continue;
    if (pt.idepth <= 0) continue;
    const KeyFrame* host = w.find_kf(pt.host_kf);
    if (!host) continue;
    RefPixel rp;
    if (pt.host_kf == ref.id) {
      rp.pixel = pt.pixel;
      rp.idepth = pt.idepth;
    } else {
      const Vec3 x_host = w.K.unproject(pt.pixel) / pt.idepth;
      const Vec3 x_ref = T_ref_w * (host->state.T_w_c * x_host);
      const auto p = w.K.project_checked(x_ref);
      if (!p || !ref.state.image().in_bounds(p->x(), p->y(), kPatchBorder)) continue;
      rp.pixel = *p;
      rp.idepth = 1.0 / x_ref.z();
    }
    rp.intensity = ref.state.image().sample(rp.pixel.x(), rp.pixel.y());
    out.push_back(rp);
  }
  return out;
}

}  // namespace

TrackResult track_frame(const Image& image, double exposure, const WindowState& window,
                        const Pose& pose_guess, const TrackerConfig& cfg,
                        const PhotoConfig& photo) {
  TrackResult result;
  if (window.keyframes.empty()) {
    result.failure = "window not initialized";
    return result;
  }
  const KeyFrame& ref = window.keyframes.back();
  const std::vector<RefPixel> reference = build_reference(window, ref);
  if (static_cast<int>(reference.size()) < cfg.min_track_pixels) {
    result.failure = "too few reference pixels (" + std::to_string(reference.size()) + ")";
    return result;
  }

  const ImagePyramid new_pyr(image, cfg.pyramid_levels);
  const int levels = std::min(new_pyr.num_levels(), ref.state.pyramid.num_levels());

  // State: T_new_ref (reference frame into the new frame) plus the
  // relative affine pair (alpha, beta).
  Pose T_new_ref = pose_guess.inverse() * ref.state.T_w_c;
  double alpha = exposure / ref.state.exposure;
  double beta = 0.0;

  double final_energy = 0.0;
  int final_pixels = 0;

  for (int level = levels - 1; level >= 0; --level) {
    const CameraIntrinsics Kl = level_intrinsics(window.K, level);
    const Image& img_new = new_pyr.level(level);
    const double scale = 1.0 / (1 << level);

    double energy = -1.0;
    for (int it = 0; it < cfg.track_max_iterations; ++it) {
      Mat8 H = Mat8::Zero();
      Vec8 g = Vec8::Zero();
      double e_sum = 0.0;
      int n_ok = 0;
      for (const RefPixel& rp : reference) {
        const Vec2 pl((rp.pixel.x() + 0.5) * scale - 0.5, (rp.pixel.y() + 0.5) * scale - 0.5);
        const Vec3 xbar = Kl.unproject(pl);
        const Vec3 x = T_new_ref.R * xbar + T_new_ref.t * rp.idepth;
        if (x.z() <= 1e-6) continue;
        const Vec2 p(Kl.fx * x.x() / x.z() + Kl.cx, Kl.fy * x.y() / x.z() + Kl.cy);
        if (!img_new.in_bounds(p.x(), p.y(), 1.1)) continue;
        Vec2 grad;
        const double it_val = img_new.sample_with_gradient(p.x(), p.y(), grad);
        const double r = it_val - (alpha * rp.intensity + beta);
        const double wgt = robust_weight(r, grad.norm(), photo);
        e_sum += robust_weight(0.0, grad.norm(), photo) * huber_loss(r, photo.huber);
        ++n_ok;

        Eigen::Matrix<double, 2, 3> Jpi;
        const double iz = 1.0 / x.z();
        Jpi << Kl.fx * iz, 0, -Kl.fx * x.x() * iz * iz, 0, Kl.fy * iz, -Kl.fy * x.y() * iz * iz;
        const Eigen::Matrix<double, 1, 3> gj = grad.transpose() * Jpi;
        Vec8 J;
        J.segment<3>(0) = rp.idepth * gj.transpose();
        J.segment<3>(3) = (gj * skew(x)).transpose();
        J(6) = -rp.intensity;
        J(7) = -1.0;
        H += wgt * J * J.transpose();
        g += wgt * J * r;
      }
      if (n_ok < cfg.min_track_pixels) {
        result.failure = "lost: too few valid pixels at level " + std::to_string(level);
        return result;
      }
      const double mean_e = e_sum / n_ok;
      if (energy >= 0 && mean_e > energy - 1e-12 && it > 0) break;  // converged / no progress
      energy = mean_e;

      // Rank guard for textureless input.
      if (H.trace() < 1e-6) {
        result.failure = "lost: no usable image gradient";
        return result;
      }
      H += 1e-7 * Mat8::Identity();
      const Vec8 delta = Eigen::LDLT<Mat8>(H).solve(-g);
      if (!delta.allFinite()) {
        result.failure = "lost: singular tracking system";
        return result;
      }

      // Trial update with step halving on energy increase.
      const Pose T_backup = T_new_ref;
      const double a_backup = alpha, b_backup = beta;
      double step = 1.0;
      bool improved = false;
      for (int half = 0; half < 6 && !improved; ++half, step *= 0.5) {
        T_new_ref = T_backup * se3_exp<double>(step * delta.head<6>());
        alpha = a_backup + step * delta(6);
        beta = b_backup + step * delta(7);
        double e_trial = 0.0;
        int n_trial = 0;
        for (const RefPixel& rp : reference) {
          const Vec2 pl((rp.pixel.x() + 0.5) * scale - 0.5, (rp.pixel.y() + 0.5) * scale - 0.5);
          const Vec3 xbar = Kl.unproject(pl);
          const Vec3 x = T_new_ref.R * xbar + T_new_ref.t * rp.idepth;
          if (x.z() <= 1e-6) continue;
          const Vec2 p(Kl.fx * x.x() / x.z() + Kl.cx, Kl.fy * x.y() / x.z() + Kl.cy);
          if (!img_new.in_bounds(p.x(), p.y(), 1.1)) continue;
          Vec2 grad;
          const double iv = img_new.sample_with_gradient(p.x(), p.y(), grad);
          const double r = iv - (alpha * rp.intensity + beta);
          e_trial += robust_weight(0.0, grad.norm(), photo) * huber_loss(r, photo.huber);
          ++n_trial;
        }
        if (n_trial >= cfg.min_track_pixels && e_trial / n_trial <= energy) {
          improved = true;
          energy = e_trial / n_trial;
        }
      }
      if (!improved) {
        T_new_ref = T_backup;
        alpha = a_backup;
        beta = b_backup;
        break;
      }
      if ((step * 2.0) * delta.norm() < 1e-7) break;
    }
    final_energy = energy;
    final_pixels = static_cast<int>(reference.size());
  }

  if (final_energy > cfg.track_fail_energy) {
    result.failure = "lost: residual energy " + std::to_string(final_energy);
    return result;
  }
  if (alpha <= 1e-6) {
    result.failure = "lost: degenerate brightness gain";
    return result;
  }

  // Mean optical flow at the finest level, for the keyframe decision.
  double flow = 0.0;
  int n_flow = 0;
  for (const RefPixel& rp : reference) {
    const Vec3 xbar = window.K.unproject(rp.pixel);
    const Vec3 x = T_new_ref.R * xbar + T_new_ref.t * rp.idepth;
    if (x.z() <= 1e-6) continue;
    const auto p = window.K.project_checked(x);
    if (!p) continue;
    flow += (*p - rp.pixel).norm();
    ++n_flow;
  }

  result.ok = true;
  result.T_w_c = ref.state.T_w_c * T_new_ref.inverse();
  // Per-frame affine parameters from the relative pair (Eq. 2 inverted).
  result.a = std::log(alpha * ref.state.exposure * std::exp(ref.state.a) / exposure);
  result.b = beta + alpha * ref.state.b;
  result.mean_flow_px = n_flow > 0 ? flow / n_flow : 0.0;
  result.mean_energy = final_energy;
  result.n_pixels = final_pixels;
  return result;
}

AssociationStats filter_and_associate(WindowState& w, const RenderedMaps& maps, int last_kf_id,
                                      double surfel_radius, const TrackerConfig& cfg,
                                      double near_clip, double far_clip) {
  AssociationStats stats;
  const KeyFrame* last = w.find_kf(last_kf_id);
  if (!last) throw std::invalid_argument("filter_and_associate: unknown last keyframe");
  const Pose T_last_w = last->state.T_w_c.inverse();
  const double cos_reassoc = std::cos(cfg.reassoc_normal_deg * M_PI / 180.0);

  // Comparison target: the last keyframe, or for points hosted there the
  // most recent other keyframe (when one exists).
  const KeyFrame* second = nullptr;
  for (auto it = w.keyframes.rbegin(); it != w.keyframes.rend(); ++it)
    if (it->id != last_kf_id) {
      second = &*it;
      break;
    }

  for (TrackedPoint& pt : w.points) {
    if (pt.status == PointStatus::kOutlier) continue;
    const KeyFrame* host = w.find_kf(pt.host_kf);
    if (!host) continue;

    // Pixel in the rendered maps where the plane is looked up.
    Vec2 lookup;
    if (pt.host_kf == last_kf_id) {
      lookup = pt.pixel;
    } else {
      if (pt.idepth <= 0) continue;
      const Vec3 x_host = w.K.unproject(pt.pixel) / pt.idepth;
      const auto p = w.K.project_checked(T_last_w * (host->state.T_w_c * x_host));
      if (!p || !w.K.in_image(*p, 1.0)) continue;
      lookup = *p;
    }
    const auto plane = plane_at(maps, static_cast<int>(std::lround(lookup.x())),
                                static_cast<int>(std::lround(lookup.y())));
    if (!plane) continue;  // nothing rendered here

    if (pt.status == PointStatus::kAssociated) {
      // Stale-plane refresh only; association is monotone. Compare with
      // a sign-canonicalized copy ((n, d) and (-n, -d) are one plane).
      PlaneCoeffs fresh = *plane;
      if (fresh.normal.dot(pt.plane_w.normal) < 0) {
        fresh.normal = -fresh.normal;
        fresh.d = -fresh.d;
      }
      const double cosang = fresh.normal.dot(pt.plane_w.normal);
      const double d_off = std::abs(fresh.d - pt.plane_w.d);
      if (cosang < cos_reassoc || d_off > cfg.reassoc_radius_factor * surfel_radius) {
        const auto rho_new =
            surfel_induced_inverse_depth(pt.pixel, *plane, host->state.T_w_c, w.K, near_clip,
                                         far_clip);
        if (rho_new) {
          pt.plane_w = *plane;
          pt.idepth = *rho_new;
          ++stats.n_refreshed;
        }
      }
      continue;
    }

    // Candidates and actives: apply the filter / associate criteria.
    const auto rho_surf = surfel_induced_inverse_depth(pt.pixel, *plane, host->state.T_w_c, w.K,
                                                       near_clip, far_clip);
    if (!rho_surf) continue;
    if (pt.idepth <= 0) continue;
    const double theta = depth_consistency_theta(*rho_surf, pt.idepth);

    // Projections of the two depth hypotheses into the comparison target.
    const KeyFrame* target = (pt.host_kf == last_kf_id) ? second : last;
    double dist_px = 0.0;
    if (target) {
      const Pose T_t_h = target->state.T_w_c.inverse() * host->state.T_w_c;
      const Vec3 xbar = w.K.unproject(pt.pixel);
      const Vec3 x_est = T_t_h.R * xbar + T_t_h.t * pt.idepth;
      const Vec3 x_surf = T_t_h.R * xbar + T_t_h.t * (*rho_surf);
      const auto p_est = w.K.project_checked(x_est);
      const auto p_surf = w.K.project_checked(x_surf);
      if (p_est && p_surf) {
        dist_px = (*p_est - *p_surf).norm();
      } else {
        dist_px = cfg.outlier_px;  // a hypothesis behind the camera: filter it
      }
    }

    if (dist_px >= cfg.outlier_px || theta >= cfg.outlier_theta) {
      pt.status = PointStatus::kOutlier;
      ++stats.n_new_outliers;
    } else if (dist_px < cfg.assoc_px && theta < cfg.assoc_theta) {
      pt.status = PointStatus::kAssociated;
      pt.plane_w = *plane;
      pt.idepth = *rho_surf;  // derived value, no longer a variable
      ++stats.n_associated;
    }
  }
  return stats;
}

void refresh_associated_depths(WindowState& w, double near_clip, double far_clip) {
  for (TrackedPoint& pt : w.points) {
    if (pt.status != PointStatus::kAssociated) continue;
    const KeyFrame* host = w.find_kf(pt.host_kf);
    if (!host) continue;
    const auto rho = surfel_induced_inverse_depth(pt.pixel, pt.plane_w, host->state.T_w_c, w.K,
                                                  near_clip, far_clip);
    if (rho) pt.idepth = *rho;
  }
}

KeyframeDecision keyframe_decision(const TrackResult& track, int frames_since_kf,
                                   const TrackerConfig& cfg) {
  KeyframeDecision d;
  if (!track.ok) return d;
  if (track.mean_flow_px > cfg.kf_flow_px) {
    d.make_keyframe = true;
    d.reason = "flow";
  } else if (std::abs(track.a) > cfg.kf_brightness) {
    d.make_keyframe = true;
    d.reason = "brightness";
  } else if (frames_since_kf >= cfg.kf_max_gap) {
    d.make_keyframe = true;
    d.reason = "gap";
  }
  return d;
}

int choose_marginalization_target(const WindowState& w, const CameraIntrinsics& K) {
  const int n = static_cast<int>(w.keyframes.size());
  if (n <= 2) throw std::invalid_argument("choose_marginalization_target: window too small");
  const KeyFrame& newest = w.keyframes.back();
  const Pose T_new_w = newest.state.T_w_c.inverse();

  // Frames that lost sight of the newest keyframe go first.
  for (int i = 0; i < n - 2; ++i) {
    const KeyFrame& kf = w.keyframes[i];
    int total = 0, visible = 0;
    for (const TrackedPoint& pt : w.points) {
      if (pt.host_kf != kf.id || !pt.in_optimization() || pt.idepth <= 0) continue;
      ++total;
      const Vec3 x_host = K.unproject(pt.pixel) / pt.idepth;
      const auto p = K.project_checked(T_new_w * (kf.state.T_w_c * x_host));
      if (p && K.in_image(*p, kPatchBorder)) ++visible;
    }
    if (total > 10 && visible < 0.05 * total) return kf.id;
  }

  // Otherwise the DSO distance score: close to the others, far from the
  // newest.
  double best_score = -1.0;
  int best_id = w.keyframes.front().id;
  for (int i = 0; i < n - 2; ++i) {
    const Vec3 pi = w.keyframes[i].state.T_w_c.t;
    double score = 0.0;
    for (int j = 0; j < n - 1; ++j) {
      if (j == i) continue;
      score += 1.0 / (1e-5 + (pi - w.keyframes[j].state.T_w_c.t).norm());
    }
    score *= std::sqrt((pi - newest.state.T_w_c.t).norm());
    if (score > best_score) {
      best_score = score;
      best_id = w.keyframes[i].id;
    }
  }
  return best_id;
}

}  // namespace dsl
