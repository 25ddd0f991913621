#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsl/camera.hpp"
#include "dsl/plane.hpp"
#include "dsl/se3.hpp"
#include "dsl/surfel_map.hpp"
#include "dsl/types.hpp"

namespace dsl {

// Per-pixel depth, world-frame vertex and world-frame normal, rendered
// from the surfel map at a camera pose. Depth is the camera-frame z of
// the winning ray-disk intersection; vertex/normal are the attributes of
// the winning surfel. Pixels not covered by any surfel are invalid.
struct RenderedMaps {
  int width = 0, height = 0;
  std::vector<float> depth;       // meters, 0 = no hit
  std::vector<Vec3f> vertex;      // world frame
  std::vector<Vec3f> normal;      // world frame, unit
  std::vector<int32_t> surfel_id; // winning surfel index, -1 = none

  bool valid(int x, int y) const { return surfel_id[static_cast<size_t>(y) * width + x] >= 0; }
  size_t idx(int x, int y) const { return static_cast<size_t>(y) * width + x; }

  double valid_fraction() const;
};

struct RenderOptions {
  double near_clip = 0.1;
  double far_clip = 100.0;
  bool backface_cull = false;  // lidar normals have viewpoint-dependent sign
  int num_threads = 1;
};

// Rasterizes every surfel as an oriented disk with an exact per-pixel
// ray-disk test inside its projected bounding box. The z-buffer keeps the
// smallest camera-frame depth; ties go to the smaller surfel index, so the
// output does not depend on surfel ordering.
RenderedMaps render(const SurfelMap& map, const Pose& T_w_c, const CameraIntrinsics& K,
                    const RenderOptions& opts = {});

// Rendered depth at an integer pixel; empty when the pixel is not covered.
std::optional<double> depth_at(const RenderedMaps& maps, int x, int y);

// World-frame plane of the surfel visible at the pixel: n = normal(p),
// d = -n . vertex(p), so vertex(p) lies on the plane by construction.
std::optional<PlaneCoeffs> plane_at(const RenderedMaps& maps, int x, int y);

// Debug dumps: depth as 16-bit PGM in millimeters; vertex/normal as raw
// float32 rasters (3 channels, NaN on invalid pixels) behind an 8-byte
// header of magic u32 + width u16 + height u16, little-endian.
void dump_depth_pgm(const RenderedMaps& maps, const std::string& path);
void dump_vector_raster(const RenderedMaps& maps, const std::vector<Vec3f>& field,
                        uint32_t magic, const std::string& path);
void dump_rendered_maps(const RenderedMaps& maps, const std::string& prefix);

inline constexpr uint32_t kVertexRasterMagic = 0x4c535644;  // "DVSL"
inline constexpr uint32_t kNormalRasterMagic = 0x4c534e44;  // "DNSL"

}  // namespace dsl
