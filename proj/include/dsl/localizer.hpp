#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsl/config.hpp"
#include "dsl/degeneracy.hpp"
#include "dsl/evaluation.hpp"
#include "dsl/frontend.hpp"
#include "dsl/renderer.hpp"
#include "dsl/window.hpp"

namespace dsl {

// Per-keyframe diagnostics: surfel-constraint ratio and the degeneracy
// report of the window at that time.
struct KeyframeDiagnostics {
  int kf_id = 0;
  int frame_id = 0;
  double timestamp = 0.0;
  int n_surfel_blocks = 0;
  int n_nonsurfel_blocks = 0;
  double constraint_ratio = 0.0;
  DegeneracyReport degeneracy;
};

// Full pipeline: tracking front-end, map rendering per keyframe, sliding
// window optimization with association and marginalization.
class Localizer {
 public:
  Localizer(SurfelMap map, const CameraIntrinsics& K, const RunConfig& cfg);

  // Seeds the first keyframe from the rendered depth map; throws on
  // insufficient map coverage.
  void init(const Image& image, double timestamp, double exposure, const Pose& initial_pose);

  struct FrameResult {
    bool tracked = false;
    bool new_keyframe = false;
    Pose T_w_c;
    std::string failure;
  };

  FrameResult process(const Image& image, double timestamp, double exposure);

  bool initialized() const { return initialized_; }
  const WindowState& window() const { return window_; }
  const Trajectory& trajectory() const { return trajectory_; }
  const std::vector<KeyframeDiagnostics>& diagnostics() const { return diagnostics_; }

 private:
  void make_keyframe(const Image& image, double timestamp, double exposure,
                     const TrackResult& track);
  void activate_candidates();
  void add_candidates(KeyFrame& kf, const RenderedMaps& maps);

  SurfelMap map_;
  CameraIntrinsics K_;
  TrackerConfig tracker_cfg_;
  WindowConfig window_cfg_;
  RenderOptions render_opts_;
  int assoc_rounds_ = 2;

  WindowState window_;
  bool initialized_ = false;
  int frame_counter_ = 0;
  int frames_since_kf_ = 0;
  int next_kf_id_ = 0;
  Pose last_pose_;
  Pose prev_pose_;
  bool have_prev_ = false;
  Trajectory trajectory_;
  std::vector<KeyframeDiagnostics> diagnostics_;
  double surfel_radius_ = 0.05;
};

}  // namespace dsl
