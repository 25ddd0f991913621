#pragma once

#include <map>
#include <string>
#include <vector>

#include "dsl/camera.hpp"
#include "dsl/frontend.hpp"
#include "dsl/renderer.hpp"
#include "dsl/window.hpp"

namespace dsl {

// Flat key=value run configuration. Unknown keys are rejected; every key
// has a documented default (see known_config_keys()).
class RunConfig {
 public:
  RunConfig();

  // Parses "key = value" lines; '#' starts a comment.
  void load_file(const std::string& path);
  // Applies one override, validating the key.
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  uint64_t seed() const { return static_cast<uint64_t>(get_int("seed")); }
  CameraIntrinsics camera() const;
  TrackerConfig tracker() const;
  WindowConfig window() const;
  RenderOptions render_options() const;
  int association_rounds() const { return get_int("assoc.rounds"); }
  double init_perturb_trans() const { return get_double("init.perturb_m"); }
  double init_perturb_deg() const { return get_double("init.perturb_deg"); }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Key -> (default, description).
const std::map<std::string, std::pair<std::string, std::string>>& known_config_keys();

}  // namespace dsl
