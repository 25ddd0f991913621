#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsl/renderer.hpp"
#include "dsl/window.hpp"

namespace dsl {

struct TrackerConfig {
  int pyramid_levels = 4;
  int candidate_density = 1200;   // target candidate count per keyframe
  double min_gradient = 7.0;      // absolute gradient floor for selection

  // Keyframe creation thresholds.
  double kf_flow_px = 9.0;
  double kf_brightness = 0.2;     // |log a^t_h|
  int kf_max_gap = 12;            // force a keyframe after this many frames

  // Filter / associate criteria (pixel distances and the theta metric).
  double outlier_px = 5.0;
  double outlier_theta = 0.5;
  double assoc_px = 2.0;
  double assoc_theta = 0.2;

  // Stale-association refresh: re-associate when a later render disagrees
  // with the stored plane by more than this normal angle or offset.
  double reassoc_normal_deg = 10.0;
  double reassoc_radius_factor = 2.0;

  double init_min_coverage = 0.2;  // fraction of candidates needing map depth

  int track_max_iterations = 25;
  double track_fail_energy = 1500.0;  // mean robust energy per pixel at finest level
  int min_track_pixels = 40;
  int active_budget = 600;
};

// Region-adaptive gradient-threshold selection: one candidate per grid
// cell when its strongest gradient clears an adaptive threshold.
std::vector<Vec2> select_candidates(const Image& img, int density, double min_gradient);

// Eq. 15: inverse depth of the intersection between the host-pixel ray
// and a world plane, rho' = -(n_w^T R^w_h xbar_h) / (t^w_h . n_w + d_w).
// Empty when the ray is parallel to the plane, the plane passes through
// the camera center, the intersection lies behind the camera, or the
// depth leaves [near, far].
std::optional<double> surfel_induced_inverse_depth(const Vec2& p_h, const PlaneCoeffs& omega_w,
                                                   const Pose& T_w_h, const CameraIntrinsics& K,
                                                   double near_clip = 0.1,
                                                   double far_clip = 100.0);

// Depth-consistency metric theta = 1 - min/max, symmetric in [0, 1).
double depth_consistency_theta(double rho_a, double rho_b);

// Seeds the first keyframe from the rendered depth map. Throws when the
// map covers less than the configured fraction of the candidates.
WindowState initialize(const Image& first_image, double timestamp, double exposure,
                       const Pose& initial_pose, const SurfelMap& map,
                       const CameraIntrinsics& K, const TrackerConfig& cfg,
                       const RenderOptions& render_opts = {});

struct TrackResult {
  bool ok = false;
  Pose T_w_c;
  double a = 0.0, b = 0.0;
  double mean_flow_px = 0.0;  // displacement of reference pixels, finest level
  double mean_energy = 0.0;
  int n_pixels = 0;
  std::string failure;
};

// Coarse-to-fine direct alignment of a new image against the last
// keyframe's semi-dense depth map (every point with a usable depth,
// candidates included). Poses in, poses out are world-frame.
TrackResult track_frame(const Image& image, double exposure, const WindowState& window,
                        const Pose& pose_guess, const TrackerConfig& cfg,
                        const PhotoConfig& photo = {});

struct AssociationStats {
  int n_associated = 0;
  int n_new_outliers = 0;
  int n_refreshed = 0;
};

// Applies the filter/associate criteria against maps rendered at the last
// keyframe's pose. Candidates and actives may become outliers or
// associated; associated points never return to the estimated-depth set
// (stale planes are refreshed in place).
AssociationStats filter_and_associate(WindowState& w, const RenderedMaps& maps, int last_kf_id,
                                      double surfel_radius, const TrackerConfig& cfg,
                                      double near_clip = 0.1, double far_clip = 100.0);

// Recomputes the plane-derived inverse depth of associated points from
// the current host poses (used after every optimization pass).
void refresh_associated_depths(WindowState& w, double near_clip = 0.1, double far_clip = 100.0);

struct KeyframeDecision {
  bool make_keyframe = false;
  std::string reason;
};

KeyframeDecision keyframe_decision(const TrackResult& track, int frames_since_kf,
                                   const TrackerConfig& cfg);

// DSO-style distance-score heuristic for choosing the keyframe to
// marginalize once the window is full; the two newest are always kept.
int choose_marginalization_target(const WindowState& w, const CameraIntrinsics& K);

}  // namespace dsl
