#include <algorithm>
#include <cmath>

#include "dsl/localizer.hpp"

namespace dsl {

Localizer::Localizer(SurfelMap map, const CameraIntrinsics& K, const RunConfig& cfg)
    : map_(std::move(map)),
      K_(K),
      tracker_cfg_(cfg.tracker()),
      window_cfg_(cfg.window()),
      render_opts_(cfg.render_options()),
      assoc_rounds_(cfg.association_rounds()) {
  if (!map_.surfels.empty()) surfel_radius_ = map_.surfels.front().radius;
}

void Localizer::init(const Image& image, double timestamp, double exposure,
                     const Pose& initial_pose) {
  window_ = initialize(image, timestamp, exposure, initial_pose, map_, K_, tracker_cfg_,
                       render_opts_);
  next_kf_id_ = 1;
  initialized_ = true;
  frame_counter_ = 1;
  frames_since_kf_ = 0;
  last_pose_ = initial_pose;
  have_prev_ = false;
  trajectory_.push(timestamp, initial_pose);

  // Bootstrap association: seeded candidates agree with the rendered
  // planes by construction, so the first surfel constraints appear here.
  const RenderedMaps maps = render(map_, initial_pose, K_, render_opts_);
  filter_and_associate(window_, maps, 0, surfel_radius_, tracker_cfg_, render_opts_.near_clip,
                       render_opts_.far_clip);
}

Localizer::FrameResult Localizer::process(const Image& image, double timestamp, double exposure) {
  FrameResult result;
  if (!initialized_) {
    result.failure = "localizer not initialized";
    return result;
  }

  // Constant-velocity initial guess.
  Pose guess = last_pose_;
  if (have_prev_) guess = last_pose_ * (prev_pose_.inverse() * last_pose_);
  TrackResult track = track_frame(image, exposure, window_, guess, tracker_cfg_,
                                  window_cfg_.photo);
  if (!track.ok && have_prev_) {
    // Retry from the previous pose before declaring loss.
    track = track_frame(image, exposure, window_, last_pose_, tracker_cfg_, window_cfg_.photo);
  }
  if (!track.ok) {
    result.failure = track.failure;
    return result;
  }

  ++frame_counter_;
  ++frames_since_kf_;
  prev_pose_ = last_pose_;
  last_pose_ = track.T_w_c;
  have_prev_ = true;
  result.tracked = true;
  result.T_w_c = track.T_w_c;

  const KeyframeDecision decision = keyframe_decision(track, frames_since_kf_, tracker_cfg_);
  if (decision.make_keyframe) {
    make_keyframe(image, timestamp, exposure, track);
    frames_since_kf_ = 0;
    result.new_keyframe = true;
    result.T_w_c = window_.keyframes.back().state.T_w_c;
    last_pose_ = result.T_w_c;
  }
  trajectory_.push(timestamp, result.T_w_c);
  return result;
}

void Localizer::make_keyframe(const Image& image, double timestamp, double exposure,
                              const TrackResult& track) {
  KeyFrame kf;
  kf.id = next_kf_id_++;
  kf.frame_id = frame_counter_ - 1;
  kf.timestamp = timestamp;
  kf.state.T_w_c = track.T_w_c;
  kf.state.exposure = exposure;
  kf.state.a = track.a;
  kf.state.b = track.b;
  kf.state.pyramid = ImagePyramid(image, tracker_cfg_.pyramid_levels);
  window_.keyframes.push_back(std::move(kf));
  const int kf_id = window_.keyframes.back().id;

  activate_candidates();

  // Optimize, render at the refined pose, associate, and repeat.
  RenderedMaps maps;
  bool have_maps = false;
  for (int round = 0; round < std::max(1, assoc_rounds_); ++round) {
    if (window_.keyframes.size() >= 2) {
      solve_window(window_, window_cfg_);
      refresh_associated_depths(window_, render_opts_.near_clip, render_opts_.far_clip);
    }
    maps = render(map_, window_.find_kf(kf_id)->state.T_w_c, K_, render_opts_);
    have_maps = true;
    filter_and_associate(window_, maps, kf_id, surfel_radius_, tracker_cfg_,
                         render_opts_.near_clip, render_opts_.far_clip);
  }
  if (!have_maps) maps = render(map_, window_.find_kf(kf_id)->state.T_w_c, K_, render_opts_);

  // Seed fresh candidates in the new keyframe from the rendered depth.
  add_candidates(*window_.find_kf(kf_id), maps);

  // Shrink the window.
  while (static_cast<int>(window_.keyframes.size()) > window_cfg_.max_keyframes) {
    const int victim = choose_marginalization_target(window_, K_);
    marginalize_frame(window_, victim, window_cfg_);
  }

  // Diagnostics for this keyframe.
  const WindowEval eval = evaluate_window(window_, false, window_cfg_);
  KeyframeDiagnostics diag;
  diag.kf_id = kf_id;
  diag.frame_id = frame_counter_ - 1;
  diag.timestamp = timestamp;
  diag.n_surfel_blocks = eval.n_surfel;
  diag.n_nonsurfel_blocks = eval.n_non;
  const int total = eval.n_surfel + eval.n_non;
  diag.constraint_ratio = total > 0 ? static_cast<double>(eval.n_surfel) / total : 0.0;
  diag.degeneracy = analyze_window(window_);
  diagnostics_.push_back(std::move(diag));
}

void Localizer::activate_candidates() {
  int active = 0;
  for (const auto& pt : window_.points)
    if (pt.status == PointStatus::kActive || pt.status == PointStatus::kAssociated) ++active;
  int budget = tracker_cfg_.active_budget - active;
  if (budget <= 0) return;
  for (auto& pt : window_.points) {
    if (budget <= 0) break;
    if (pt.status != PointStatus::kCandidate) continue;
    if (pt.idepth <= 0) continue;
    pt.status = PointStatus::kActive;
    --budget;
  }
}

void Localizer::add_candidates(KeyFrame& kf, const RenderedMaps& maps) {
  const std::vector<Vec2> pixels =
      select_candidates(kf.state.image(), tracker_cfg_.candidate_density,
                        tracker_cfg_.min_gradient);
  // Median seed for pixels the map does not cover.
  std::vector<double> depths;
  for (const Vec2& p : pixels) {
    const auto d = depth_at(maps, static_cast<int>(std::lround(p.x())),
                            static_cast<int>(std::lround(p.y())));
    if (d) depths.push_back(*d);
  }
  double median_depth = 2.0;
  if (!depths.empty()) {
    std::nth_element(depths.begin(), depths.begin() + depths.size() / 2, depths.end());
    median_depth = depths[depths.size() / 2];
  }
  for (const Vec2& p : pixels) {
    TrackedPoint pt;
    pt.id = window_.next_point_id++;
    pt.host_kf = kf.id;
    pt.pixel = p;
    const auto d = depth_at(maps, static_cast<int>(std::lround(p.x())),
                            static_cast<int>(std::lround(p.y())));
    if (d) {
      pt.idepth = 1.0 / *d;
      pt.idepth_sigma = surfel_radius_ / (*d * *d);
    } else {
      pt.idepth = 1.0 / median_depth;
      pt.idepth_sigma = 10.0 / median_depth;  // essentially unconstrained
    }
    pt.status = PointStatus::kCandidate;
    window_.points.push_back(pt);
  }
}

}  // namespace dsl
