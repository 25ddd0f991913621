#pragma once

#include <string>
#include <vector>

#include "dsl/se3.hpp"
#include "dsl/types.hpp"

namespace dsl {

struct StampedPose {
  double t = 0.0;
  Pose T_w_c;
};

// Timestamped poses in one frame convention, strictly increasing stamps.
struct Trajectory {
  std::vector<StampedPose> poses;

  void push(double t, const Pose& T);
  size_t size() const { return poses.size(); }
  bool empty() const { return poses.empty(); }
  double path_length() const;
  double position_diameter() const;  // max pairwise distance
};

// TUM text format: timestamp tx ty tz qx qy qz qw, '#' comments.
Trajectory load_trajectory_tum(const std::string& path);
void save_trajectory_tum(const Trajectory& traj, const std::string& path);

// Closed-form least-squares similarity (or rigid) alignment mapping the
// estimate onto the reference: x_ref ~ scale * R * x_est + t.
struct Alignment {
  double scale = 1.0;
  Pose T;
};

// Nearest-timestamp association within the tolerance window.
std::vector<std::pair<size_t, size_t>> associate(const Trajectory& est, const Trajectory& ref,
                                                 double max_dt = 0.01);

// Throws on fewer than 3 pairs or on degenerate (collinear) geometry
// where the rotation about the line is unobservable.
Alignment align(const Trajectory& est, const Trajectory& ref, bool with_scale,
                double max_dt = 0.01);

Trajectory apply_alignment(const Trajectory& est, const Alignment& a);

// RMSE of translational residuals over associated pairs; inputs are
// expected to be already expressed in a common frame.
double ate_rmse(const Trajectory& est, const Trajectory& ref, double max_dt = 0.01);

// RMSE of relative-pose translation errors over all segments whose
// reference path length first reaches segment_length.
double rpe_translation(const Trajectory& est, const Trajectory& ref, double segment_length,
                       double max_dt = 0.01);

}  // namespace dsl
