#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsl/camera.hpp"
#include "dsl/image.hpp"
#include "dsl/plane.hpp"
#include "dsl/se3.hpp"
#include "dsl/surfel_map.hpp"

namespace dsl {

// A bounded textured rectangle embedded in a world plane.
struct PlaneSpec {
  PlaneCoeffs plane;
  Vec3 center = Vec3::Zero();       // on the plane
  Vec3 axis_u = Vec3::UnitX();      // in-plane orthonormal axes
  Vec3 axis_v = Vec3::UnitY();
  double half_u = 1.0, half_v = 1.0;
  uint64_t texture_seed = 1;
};

struct ExposureSpec {
  double t = 1.0;  // exposure time
  double a = 0.0;  // affine gain (log scale)
  double b = 0.0;  // affine offset
};

struct SceneSpec {
  std::vector<PlaneSpec> planes;
  std::vector<std::pair<double, Pose>> trajectory;  // (timestamp, T_w_c)
  CameraIntrinsics K;
  std::vector<ExposureSpec> exposures;  // one per trajectory frame
  double scene_scale = 1.0;             // meters; map-noise sweeps scale with it
};

// Band-limited radiance field on a plane: summed cosine octaves, smooth
// with dense nonzero gradients and a wide convergence basin.
class PlaneTexture {
 public:
  PlaneTexture() = default;
  explicit PlaneTexture(uint64_t seed);
  double radiance(double u, double v) const;  // nominal 0..255 scale

 private:
  struct Wave {
    double ku, kv, phase, amp;
  };
  std::vector<Wave> waves_;
};

class Scene {
 public:
  explicit Scene(SceneSpec spec);

  const SceneSpec& spec() const { return spec_; }
  const CameraIntrinsics& K() const { return spec_.K; }
  size_t num_frames() const { return spec_.trajectory.size(); }
  const Pose& pose(size_t frame) const { return spec_.trajectory.at(frame).second; }
  double timestamp(size_t frame) const { return spec_.trajectory.at(frame).first; }
  const ExposureSpec& exposure(size_t frame) const { return spec_.exposures.at(frame); }

  // Nearest ray intersection across all plane rectangles; returns
  // camera-frame depth, the plane index and the in-plane (u, v).
  struct Hit {
    double depth;
    int plane;
    double u, v;
  };
  std::optional<Hit> cast_ray(const Pose& T_w_c, const Vec3& dir_cam, double near_clip = 1e-3) const;

  double radiance_at(int plane, double u, double v) const { return textures_[plane].radiance(u, v); }

 private:
  SceneSpec spec_;
  std::vector<PlaneTexture> textures_;
};

Scene make_scene(SceneSpec spec);

struct RenderedImage {
  Image image;
  std::vector<float> depth;  // ground truth, camera-frame z, 0 = background
  int width = 0, height = 0;
};

// Exact per-pixel ray casting; intensity = e^a * t * radiance + b,
// quantized to 8 bits unless disabled.
RenderedImage render_image(const Scene& scene, const Pose& T_w_c, const ExposureSpec& exposure,
                           bool quantize = true);

// Ground-truth surfel map: surfels tile each plane at voxel spacing with
// exact analytic normals and radius voxel * sqrt(2)/2.
SurfelMap sample_surfel_map(const Scene& scene, double voxel);

// Table-II style map corruption: i.i.d. Gaussian position noise followed
// by PCA normal re-estimation, matching the re-generation procedure.
SurfelMap perturb_map(const SurfelMap& map, double sigma, uint64_t seed, int pca_k = 10);

// Trajectory/scene presets. Frame count and seed select texture phases.
SceneSpec preset_box_room(int n_frames, uint64_t seed);
SceneSpec preset_orbit(int n_frames, uint64_t seed);        // fixed outward gaze
SceneSpec preset_corridor(int n_frames, uint64_t seed);
SceneSpec preset_single_wall(int n_frames, uint64_t seed);
SceneSpec make_preset(const std::string& name, int n_frames, uint64_t seed);

// Emits frame_%06d.pgm images, an index file (frame_id timestamp exposure
// a b per line), calib.txt, groundtruth.txt (TUM format) and map.ply.
void emit_sequence(const Scene& scene, const SurfelMap& map, const std::string& out_dir);

}  // namespace dsl
