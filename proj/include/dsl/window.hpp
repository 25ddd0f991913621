#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dsl/camera.hpp"
#include "dsl/photometric.hpp"
#include "dsl/plane.hpp"
#include "dsl/se3.hpp"
#include "dsl/types.hpp"

namespace dsl {

enum class PointStatus { kCandidate, kActive, kAssociated, kOutlier };

// A sparse tracked point hosted in one keyframe. Candidates and actives
// carry an estimated inverse depth; associated points take their depth
// from the surfel plane and contribute homography constraints instead.
struct TrackedPoint {
  int id = -1;
  int host_kf = -1;       // keyframe id
  Vec2 pixel = Vec2::Zero();
  double idepth = 0.0;    // > 0 for candidate/active
  double idepth_sigma = 0.0;
  PointStatus status = PointStatus::kCandidate;
  PlaneCoeffs plane_w;    // meaningful iff status == kAssociated
  std::set<int> dead_targets;  // keyframes whose residuals were culled as outliers

  bool in_optimization() const {
    return status == PointStatus::kActive || status == PointStatus::kAssociated;
  }
};

struct KeyFrame {
  int id = -1;        // sequential keyframe id, unique over a run
  int frame_id = -1;  // source frame index in the input sequence
  double timestamp = 0.0;
  FramePhotoState state;

  // First-estimate linearization point; set once when the frame first
  // touches the marginalization prior and never overwritten.
  bool has_fej = false;
  Pose fej_T_w_c;
  double fej_a = 0.0, fej_b = 0.0;

  void set_fej() {
    if (has_fej) return;  // never overwrite a first estimate
    fej_T_w_c = state.T_w_c;
    fej_a = state.a;
    fej_b = state.b;
    has_fej = true;
  }

  // Tangent-space offset from the first estimate, [xi(6) da db].
  Vec8 fej_delta() const {
    Vec8 d = Vec8::Zero();
    if (!has_fej) return d;
    d.head<6>() = pose_boxminus(state.T_w_c, fej_T_w_c);
    d(6) = state.a - fej_a;
    d(7) = state.b - fej_b;
    return d;
  }
};

// Quadratic marginalization prior over keyframe 8-vectors, expanded
// around the stored first-estimate states: grad(x) = b + H * delta(x).
struct MargPrior {
  std::vector<int> kf_ids;
  MatX H;
  VecX b;

  bool empty() const { return kf_ids.empty(); }
  int dim() const { return static_cast<int>(kf_ids.size()) * 8; }
};

// The optimizer's problem instance: keyframes, points, prior.
struct WindowState {
  CameraIntrinsics K;
  std::vector<KeyFrame> keyframes;  // ascending id
  std::vector<TrackedPoint> points;
  MargPrior prior;
  int next_point_id = 0;

  const KeyFrame* find_kf(int id) const;
  KeyFrame* find_kf(int id);
  int kf_index(int id) const;  // -1 if absent
  bool has_surfel_constraints() const;
};

struct WindowConfig {
  int max_keyframes = 7;
  int max_iterations = 10;
  double lm_init = 1e-4;
  double lm_up = 2.0;
  double lm_down = 0.5;
  double step_tol = 1e-8;
  double energy_tol = 1e-6;
  PhotoConfig photo;
  // Outlier cut after convergence: block mean |r| above this multiple of
  // the Huber threshold removes the (host, target) residual.
  double outlier_energy_factor = 3.0;
  // Weak quadratic pull on a and b; removes the affine gauge family.
  double affine_prior_a = 1.0;
  double affine_prior_b = 1e-2;
  // Pose anchor folded into the prior when marginalizing while the
  // window has no surfel constraints (keeps the visual-only gauge pinned
  // to the provided initial pose).
  double gauge_anchor_weight = 1e8;
  // Non-surfel points hosted in a dying frame need at least this many
  // live residuals to be marginalized instead of dropped.
  int marg_point_min_obs = 2;
  // Freeze the first keyframe while nothing anchors the window (surfel
  // constraints or a prior). Disabled only by gauge-analysis tests.
  bool fix_gauge = true;
  std::string iteration_csv;  // optional per-iteration diagnostics
};

// All residual blocks of the current window (active non-surfel points and
// associated surfel points against every other keyframe).
struct WindowEval {
  std::vector<ResidualBlock> blocks;
  double energy_surfel = 0.0;
  double energy_non = 0.0;
  int n_surfel = 0;
  int n_non = 0;
};

WindowEval evaluate_window(const WindowState& w, bool with_jacobians, const WindowConfig& cfg);

// Gauss-Newton normal equations over [keyframe 8-vectors; active
// non-surfel inverse depths], robust-weighted, with the marginalization
// prior expanded at its first-estimate states. Depth columns are kept in
// eliminated form (diagonal plus coupling) for the Schur solve.
struct NormalEquations {
  int num_frames = 0;
  int num_depths = 0;
  std::vector<int> depth_point;  // point index (into window.points) per depth column
  MatX Hff;                      // 8F x 8F
  VecX bf;                       // 8F
  MatX Hfd;                      // 8F x P
  VecX Hdd;                      // P (diagonal)
  VecX bd;                       // P
  double energy_surfel = 0.0;
  double energy_non = 0.0;
  double energy_prior = 0.0;
  int n_residuals = 0;

  double total_energy() const { return energy_surfel + energy_non + energy_prior; }
  int dim() const { return 8 * num_frames + num_depths; }
  MatX dense_H() const;
  VecX dense_b() const;
};

NormalEquations build_normal_equations(const WindowState& w, const WindowConfig& cfg);

// One damped step: Schur elimination of the depth block, LDLT on the
// reduced frame system, back-substitution. ok = false when the damped
// system is unusable (indefinite or singular).
struct StepResult {
  bool ok = false;
  VecX frame_step;  // 8F
  VecX depth_step;  // P
  double norm = 0.0;
};

StepResult solve_gauss_newton_step(const NormalEquations& ne, double lambda);

struct SolveReport {
  int iterations = 0;
  int accepted_steps = 0;
  double initial_energy = 0.0;
  double final_energy = 0.0;
  bool converged = false;
};

// Levenberg-Marquardt with Schur elimination of the inverse depths.
// Frame updates are right-multiplicative twists; steps are accepted only
// when the total energy decreases.
SolveReport solve_window(WindowState& w, const WindowConfig& cfg);

// Folds every residual touching the frame into the prior with
// first-estimate Jacobians and removes the frame and its hosted points.
// Non-surfel points hosted elsewhere lose their observations into this
// frame; surfel blocks targeting it are folded (they touch frame states
// only).
void marginalize_frame(WindowState& w, int kf_id, const WindowConfig& cfg);

// Dense-matrix helper: splits a quadratic (H, b) into kept/eliminated
// index sets and returns the Schur complement onto the kept set.
// Regularizes a singular eliminated block with 1e-9 identity.
void schur_marginalize(const MatX& H, const VecX& b, const std::vector<int>& keep,
                       const std::vector<int>& elim, MatX& H_out, VecX& b_out);

}  // namespace dsl
