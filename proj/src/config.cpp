#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dsl/config.hpp"

namespace dsl {

const std::map<std::string, std::pair<std::string, std::string>>& known_config_keys() {
  static const std::map<std::string, std::pair<std::string, std::string>> keys = {
      {"seed", {"1", "master seed for all randomness"}},
      {"cam.fx", {"250", "focal length x, pixels"}},
      {"cam.fy", {"250", "focal length y, pixels"}},
      {"cam.cx", {"159.5", "principal point x"}},
      {"cam.cy", {"119.5", "principal point y"}},
      {"cam.width", {"320", "image width"}},
      {"cam.height", {"240", "image height"}},
      {"map.voxel", {"0.08", "voxel edge for map building, meters"}},
      {"map.k", {"10", "PCA neighborhood size"}},
      {"render.near", {"0.1", "near clip, meters"}},
      {"render.far", {"100", "far clip, meters"}},
      {"render.backface_cull", {"false", "cull disks facing away"}},
      {"render.threads", {"1", "rasterizer threads"}},
      {"tracker.levels", {"4", "tracking pyramid levels"}},
      {"tracker.density", {"1200", "candidate target count"}},
      {"tracker.min_grad", {"7", "candidate gradient floor"}},
      {"tracker.kf_flow", {"9", "keyframe flow threshold, pixels"}},
      {"tracker.kf_brightness", {"0.2", "keyframe |a| threshold"}},
      {"tracker.kf_max_gap", {"12", "force keyframe after N frames"}},
      {"tracker.active_budget", {"600", "active point budget"}},
      {"tracker.fail_energy", {"1500", "tracking-lost energy threshold"}},
      {"assoc.outlier_px", {"5", "outlier pixel distance (>=)"}},
      {"assoc.outlier_theta", {"0.5", "outlier theta (>=)"}},
      {"assoc.px", {"2", "associate pixel distance (<)"}},
      {"assoc.theta", {"0.2", "associate theta (<)"}},
      {"assoc.rounds", {"2", "associate/optimize rounds per keyframe"}},
      {"assoc.reassoc_deg", {"10", "re-association normal angle, degrees"}},
      {"assoc.reassoc_radius_factor", {"2", "re-association offset, radii"}},
      {"window.max_kf", {"7", "sliding window keyframe count"}},
      {"opt.max_iter", {"10", "LM iterations per solve"}},
      {"opt.lm_init", {"1e-4", "initial LM damping"}},
      {"opt.lm_up", {"2", "damping factor on reject"}},
      {"opt.lm_down", {"0.5", "damping factor on accept"}},
      {"opt.step_tol", {"1e-8", "step-norm convergence threshold"}},
      {"opt.energy_tol", {"1e-6", "relative energy decrease threshold"}},
      {"opt.huber", {"9", "Huber threshold, intensity levels"}},
      {"opt.grad_c", {"50", "gradient weighting constant"}},
      {"opt.outlier_factor", {"3", "post-solve outlier cut, Huber multiples"}},
      {"opt.affine_prior_a", {"1", "quadratic pull on a"}},
      {"opt.affine_prior_b", {"0.01", "quadratic pull on b"}},
      {"opt.anchor_weight", {"1e8", "gauge anchor folded into the prior"}},
      {"opt.marg_min_obs", {"2", "min observations to marginalize a point"}},
      {"init.min_coverage", {"0.2", "required rendered-depth coverage"}},
      {"init.perturb_m", {"0", "initial pose perturbation, meters"}},
      {"init.perturb_deg", {"0", "initial pose perturbation, degrees"}},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& [key, def] : known_config_keys()) values_[key] = def.first;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known_config_keys().count(key))
    throw std::invalid_argument("config: unknown key '" + key + "'");
  values_[key] = value;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string key, eq, value;
    if (!(ls >> key)) continue;  // blank line
    if (!(ls >> eq >> value) || eq != "=")
      throw std::runtime_error("config: malformed line " + std::to_string(line_no) + " in " +
                               path);
    set(key, value);
  }
}

std::string RunConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  return std::stod(get_string(key));
}

int RunConfig::get_int(const std::string& key) const { return std::stoi(get_string(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: boolean expected for '" + key + "', got '" + v + "'");
}

CameraIntrinsics RunConfig::camera() const {
  return CameraIntrinsics(get_double("cam.fx"), get_double("cam.fy"), get_double("cam.cx"),
                          get_double("cam.cy"), get_int("cam.width"), get_int("cam.height"));
}

TrackerConfig RunConfig::tracker() const {
  TrackerConfig t;
  t.pyramid_levels = get_int("tracker.levels");
  t.candidate_density = get_int("tracker.density");
  t.min_gradient = get_double("tracker.min_grad");
  t.kf_flow_px = get_double("tracker.kf_flow");
  t.kf_brightness = get_double("tracker.kf_brightness");
  t.kf_max_gap = get_int("tracker.kf_max_gap");
  t.outlier_px = get_double("assoc.outlier_px");
  t.outlier_theta = get_double("assoc.outlier_theta");
  t.assoc_px = get_double("assoc.px");
  t.assoc_theta = get_double("assoc.theta");
  t.reassoc_normal_deg = get_double("assoc.reassoc_deg");
  t.reassoc_radius_factor = get_double("assoc.reassoc_radius_factor");
  t.init_min_coverage = get_double("init.min_coverage");
  t.track_fail_energy = get_double("tracker.fail_energy");
  t.active_budget = get_int("tracker.active_budget");
  return t;
}

WindowConfig RunConfig::window() const {
  WindowConfig w;
  w.max_keyframes = get_int("window.max_kf");
  w.max_iterations = get_int("opt.max_iter");
  w.lm_init = get_double("opt.lm_init");
  w.lm_up = get_double("opt.lm_up");
  w.lm_down = get_double("opt.lm_down");
  w.step_tol = get_double("opt.step_tol");
  w.energy_tol = get_double("opt.energy_tol");
  w.photo.huber = get_double("opt.huber");
  w.photo.grad_weight_c = get_double("opt.grad_c");
  w.outlier_energy_factor = get_double("opt.outlier_factor");
  w.affine_prior_a = get_double("opt.affine_prior_a");
  w.affine_prior_b = get_double("opt.affine_prior_b");
  w.gauge_anchor_weight = get_double("opt.anchor_weight");
  w.marg_point_min_obs = get_int("opt.marg_min_obs");
  return w;
}

RenderOptions RunConfig::render_options() const {
  RenderOptions r;
  r.near_clip = get_double("render.near");
  r.far_clip = get_double("render.far");
  r.backface_cull = get_bool("render.backface_cull");
  r.num_threads = get_int("render.threads");
  return r;
}

}  // namespace dsl
