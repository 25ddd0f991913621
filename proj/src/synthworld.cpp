#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include "dsl/evaluation.hpp"
#include "dsl/synthworld.hpp"

namespace dsl {

PlaneTexture::PlaneTexture(uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  // Octave wavelengths in meters; strong low frequencies keep the
  // photometric convergence basin wide, fine ones pin the optimum.
  const double wavelengths[] = {1.7, 0.8, 0.4, 0.19};
  const double amps[] = {46.0, 26.0, 14.0, 7.0};
  for (int o = 0; o < 4; ++o) {
    const int n_dirs = 3;
    for (int i = 0; i < n_dirs; ++i) {
      const double th = angle(gen);
      const double k = 2.0 * M_PI / wavelengths[o];
      waves_.push_back({k * std::cos(th), k * std::sin(th), angle(gen), amps[o] / n_dirs});
    }
  }
}

double PlaneTexture::radiance(double u, double v) const {
  double r = 128.0;
  for (const Wave& w : waves_) r += w.amp * std::cos(w.ku * u + w.kv * v + w.phase);
  return r;
}

Scene::Scene(SceneSpec spec) : spec_(std::move(spec)) {
  if (spec_.planes.empty()) throw std::invalid_argument("Scene: no planes");
  if (spec_.exposures.size() != spec_.trajectory.size())
    throw std::invalid_argument("Scene: exposure schedule does not match trajectory");
  // Reject coincident overlapping planes: identical coefficients with
  // intersecting extents make the texture ill-defined.
  for (size_t i = 0; i < spec_.planes.size(); ++i) {
    for (size_t j = i + 1; j < spec_.planes.size(); ++j) {
      const PlaneSpec& a = spec_.planes[i];
      const PlaneSpec& b = spec_.planes[j];
      // Same plane iff coefficients match after sign canonicalization.
      const double s = a.plane.normal.dot(b.plane.normal) < 0 ? -1.0 : 1.0;
      const bool same_n = (a.plane.normal - s * b.plane.normal).norm() < 1e-9;
      const bool same_d = std::abs(a.plane.d - s * b.plane.d) < 1e-9;
      if (same_n && same_d) {
        const double dist = (a.center - b.center).norm();
        const double reach = std::hypot(a.half_u, a.half_v) + std::hypot(b.half_u, b.half_v);
        if (dist < reach)
          throw std::invalid_argument("Scene: coincident overlapping planes rejected");
      }
    }
  }
  textures_.reserve(spec_.planes.size());
  for (const PlaneSpec& p : spec_.planes) textures_.emplace_back(p.texture_seed);
}

Scene make_scene(SceneSpec spec) { return Scene(std::move(spec)); }

std::optional<Scene::Hit> Scene::cast_ray(const Pose& T_w_c, const Vec3& dir_cam,
                                          double near_clip) const {
  const Vec3 origin = T_w_c.t;
  const Vec3 dir = T_w_c.R * dir_cam;  // dir_cam has unit z: parameter = camera depth
  std::optional<Hit> best;
  for (size_t i = 0; i < spec_.planes.size(); ++i) {
    const PlaneSpec& p = spec_.planes[i];
    const double denom = p.plane.normal.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    const double s = -(p.plane.d + p.plane.normal.dot(origin)) / denom;
    if (s <= near_clip) continue;
    if (best && s >= best->depth) continue;
    const Vec3 hit = origin + s * dir;
    const Vec3 rel = hit - p.center;
    const double u = rel.dot(p.axis_u);
    const double v = rel.dot(p.axis_v);
    if (std::abs(u) > p.half_u || std::abs(v) > p.half_v) continue;
    best = Hit{s, static_cast<int>(i), u, v};
  }
  return best;
}

RenderedImage render_image(const Scene& scene, const Pose& T_w_c, const ExposureSpec& exposure,
                           bool quantize) {
  const CameraIntrinsics& K = scene.K();
  RenderedImage out;
  out.width = K.width;
  out.height = K.height;
  out.image = Image(K.width, K.height, 0.f);
  out.depth.assign(static_cast<size_t>(K.width) * K.height, 0.f);
  const double gain = std::exp(exposure.a) * exposure.t;
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      const auto hit = scene.cast_ray(T_w_c, K.unproject(Vec2(x, y)));
      if (!hit) continue;
      const double L = scene.radiance_at(hit->plane, hit->u, hit->v);
      double I = gain * L + exposure.b;
      if (quantize) I = std::min(255.0, std::max(0.0, std::round(I)));
      out.image.at(x, y) = static_cast<float>(I);
      out.depth[static_cast<size_t>(y) * K.width + x] = static_cast<float>(hit->depth);
    }
  }
  return out;
}

SurfelMap sample_surfel_map(const Scene& scene, double voxel) {
  if (voxel <= 0) throw std::invalid_argument("sample_surfel_map: voxel must be positive");
  SurfelMap map;
  map.voxel_size = voxel;
  const double radius = voxel * std::sqrt(2.0) / 2.0;
  for (const PlaneSpec& p : scene.spec().planes) {
    const int nu = std::max(1, static_cast<int>(std::ceil(2.0 * p.half_u / voxel)));
    const int nv = std::max(1, static_cast<int>(std::ceil(2.0 * p.half_v / voxel)));
    for (int iu = 0; iu < nu; ++iu) {
      for (int iv = 0; iv < nv; ++iv) {
        const double u = -p.half_u + (iu + 0.5) * (2.0 * p.half_u / nu);
        const double v = -p.half_v + (iv + 0.5) * (2.0 * p.half_v / nv);
        Surfel s;
        s.position = p.center + u * p.axis_u + v * p.axis_v;
        s.normal = p.plane.normal;
        s.radius = radius;
        map.surfels.push_back(s);
      }
    }
  }
  return map;
}

SurfelMap perturb_map(const SurfelMap& map, double sigma, uint64_t seed, int pca_k) {
  if (sigma < 0) throw std::invalid_argument("perturb_map: sigma must be >= 0");
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<Vec3> positions;
  positions.reserve(map.size());
  for (const Surfel& s : map.surfels) {
    Vec3 p = s.position;
    if (sigma > 0) p += Vec3(noise(gen), noise(gen), noise(gen));
    positions.push_back(p);
  }
  // Re-estimate normals from the corrupted positions, as the paper does
  // when re-generating the surfel map from a noisy cloud.
  std::vector<bool> valid;
  std::vector<Vec3> normals = estimate_normals_pca(positions, pca_k, Vec3::Zero(), valid);
  SurfelMap out;
  out.voxel_size = map.voxel_size;
  out.surfels.reserve(map.size());
  for (size_t i = 0; i < positions.size(); ++i) {
    if (!valid[i]) continue;
    Surfel s;
    s.position = positions[i];
    // Keep the original orientation convention.
    s.normal = normals[i].dot(map.surfels[i].normal) < 0 ? Vec3(-normals[i]) : normals[i];
    s.radius = map.surfels[i].radius;
    out.surfels.push_back(s);
  }
  return out;
}

namespace {

// Camera frame from a forward direction, z-up world: x right, y down,
// z forward.
Pose look_along(const Vec3& position, const Vec3& forward) {
  const Vec3 f = forward.normalized();
  Vec3 down = Vec3(0, 0, -1);
  down = (down - down.dot(f) * f).normalized();
  const Vec3 right = down.cross(f);
  Pose T;
  T.R.col(0) = right;
  T.R.col(1) = down;
  T.R.col(2) = f;
  T.t = position;
  return T;
}

Vec3 direction_from_angles(double azimuth, double pitch) {
  return Vec3(std::cos(pitch) * std::cos(azimuth), std::cos(pitch) * std::sin(azimuth),
              std::sin(pitch));
}

std::vector<ExposureSpec> mild_exposure_schedule(int n_frames) {
  std::vector<ExposureSpec> out(n_frames);
  for (int i = 0; i < n_frames; ++i) {
    out[i].t = 1.0 + 0.08 * std::sin(2.0 * M_PI * i / 47.0);
    out[i].a = 0.04 * std::sin(2.0 * M_PI * i / 61.0 + 0.7);
    out[i].b = 1.5 * std::sin(2.0 * M_PI * i / 53.0 + 1.3);
  }
  return out;
}

CameraIntrinsics preset_camera() { return CameraIntrinsics(250.0, 250.0, 159.5, 119.5, 320, 240); }

// Six inward-facing walls of an axis-aligned box room.
std::vector<PlaneSpec> box_walls(double half, uint64_t seed) {
  std::vector<PlaneSpec> walls;
  struct Face {
    Vec3 n, c, u, v;
  };
  const Face faces[6] = {
      {{-1, 0, 0}, {half, 0, 0}, {0, 1, 0}, {0, 0, 1}},
      {{1, 0, 0}, {-half, 0, 0}, {0, 1, 0}, {0, 0, 1}},
      {{0, -1, 0}, {0, half, 0}, {1, 0, 0}, {0, 0, 1}},
      {{0, 1, 0}, {0, -half, 0}, {1, 0, 0}, {0, 0, 1}},
      {{0, 0, -1}, {0, 0, half}, {1, 0, 0}, {0, 1, 0}},
      {{0, 0, 1}, {0, 0, -half}, {1, 0, 0}, {0, 1, 0}},
  };
  for (int i = 0; i < 6; ++i) {
    PlaneSpec p;
    p.plane = PlaneCoeffs::from_point_normal(faces[i].c, faces[i].n);
    p.center = faces[i].c;
    p.axis_u = faces[i].u;
    p.axis_v = faces[i].v;
    p.half_u = p.half_v = half;
    p.texture_seed = seed * 100 + i + 1;
    walls.push_back(p);
  }
  return walls;
}

}  // namespace

SceneSpec preset_box_room(int n_frames, uint64_t seed) {
  SceneSpec s;
  const double half = 2.0;
  s.planes = box_walls(half, seed);
  s.K = preset_camera();
  s.scene_scale = 1.0;
  const double radius = 0.8;
  for (int i = 0; i < n_frames; ++i) {
    const double phi = 2.0 * M_PI * i / n_frames;
    // Yaw and pitch wobble diversify the visible wall normals inside
    // every window of keyframes.
    const double az = phi + 0.55 * std::sin(3.0 * phi + 1.0);
    const double pitch = 0.42 * std::sin(5.0 * phi + 2.0);
    const Vec3 pos(radius * std::cos(phi), radius * std::sin(phi), 0.15 * std::sin(2.0 * phi));
    s.trajectory.emplace_back(0.1 * i, look_along(pos, direction_from_angles(az, pitch)));
  }
  s.exposures = mild_exposure_schedule(n_frames);
  return s;
}

SceneSpec preset_orbit(int n_frames, uint64_t seed) {
  SceneSpec s;
  s.planes = box_walls(2.0, seed);
  s.K = preset_camera();
  s.scene_scale = 1.0;
  for (int i = 0; i < n_frames; ++i) {
    const double phi = 2.0 * M_PI * i / n_frames;
    const Vec3 pos(0.8 * std::cos(phi), 0.8 * std::sin(phi), 0.0);
    s.trajectory.emplace_back(0.1 * i, look_along(pos, direction_from_angles(phi, 0.0)));
  }
  s.exposures = mild_exposure_schedule(n_frames);
  return s;
}

SceneSpec preset_corridor(int n_frames, uint64_t seed) {
  SceneSpec s;
  s.K = preset_camera();
  s.scene_scale = 1.0;
  const double length = 26.0, half_len = length / 2.0;
  for (int side = 0; side < 2; ++side) {
    PlaneSpec p;
    const double x = side == 0 ? 1.0 : -1.0;
    p.plane = PlaneCoeffs::from_point_normal(Vec3(x, half_len, 0), Vec3(-x, 0, 0));
    p.center = Vec3(x, half_len, 0);
    p.axis_u = Vec3(0, 1, 0);
    p.axis_v = Vec3(0, 0, 1);
    p.half_u = half_len;
    p.half_v = 1.6;
    p.texture_seed = seed * 100 + side + 1;
    s.planes.push_back(p);
  }
  for (int i = 0; i < n_frames; ++i) {
    const double t = static_cast<double>(i) / std::max(1, n_frames - 1);
    const double y = 1.0 + 10.0 * t;
    const double az = M_PI / 2 + 0.38 * std::sin(6.0 * M_PI * t + 0.5);
    const double pitch = 0.12 * std::sin(4.0 * M_PI * t);
    s.trajectory.emplace_back(0.1 * i,
                              look_along(Vec3(0.0, y, 0.0), direction_from_angles(az, pitch)));
  }
  s.exposures = mild_exposure_schedule(n_frames);
  return s;
}

SceneSpec preset_single_wall(int n_frames, uint64_t seed) {
  SceneSpec s;
  s.K = preset_camera();
  s.scene_scale = 1.0;
  PlaneSpec p;
  p.plane = PlaneCoeffs::from_point_normal(Vec3(2.5, 4.0, 0), Vec3(-1, 0, 0));
  p.center = Vec3(2.5, 4.0, 0);
  p.axis_u = Vec3(0, 1, 0);
  p.axis_v = Vec3(0, 0, 1);
  p.half_u = 7.0;
  p.half_v = 2.5;
  p.texture_seed = seed * 100 + 1;
  s.planes.push_back(p);
  for (int i = 0; i < n_frames; ++i) {
    const double t = static_cast<double>(i) / std::max(1, n_frames - 1);
    const double y = 8.0 * t;
    const double az = 0.10 * std::sin(4.0 * M_PI * t);
    const double pitch = 0.08 * std::sin(6.0 * M_PI * t + 1.0);
    s.trajectory.emplace_back(0.1 * i,
                              look_along(Vec3(0.0, y, 0.0), direction_from_angles(az, pitch)));
  }
  s.exposures = mild_exposure_schedule(n_frames);
  return s;
}

SceneSpec make_preset(const std::string& name, int n_frames, uint64_t seed) {
  if (name == "box-room") return preset_box_room(n_frames, seed);
  if (name == "orbit") return preset_orbit(n_frames, seed);
  if (name == "corridor") return preset_corridor(n_frames, seed);
  if (name == "single-wall") return preset_single_wall(n_frames, seed);
  throw std::invalid_argument("unknown preset: " + name);
}

void emit_sequence(const Scene& scene, const SurfelMap& map, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream index(fs::path(out_dir) / "index.txt");
  if (!index) throw std::runtime_error("emit_sequence: cannot write index in " + out_dir);
  index << "# frame_id timestamp exposure a b   (image: frame_%06d.pgm)\n";
  Trajectory gt;
  for (size_t i = 0; i < scene.num_frames(); ++i) {
    const ExposureSpec& e = scene.exposure(i);
    const RenderedImage frame = render_image(scene, scene.pose(i), e);
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%06zu.pgm", i);
    save_pgm(frame.image, (fs::path(out_dir) / name).string());
    index << i << " " << scene.timestamp(i) << " " << e.t << " " << e.a << " " << e.b << "\n";
    gt.poses.push_back({scene.timestamp(i), scene.pose(i)});
  }
  const CameraIntrinsics& K = scene.K();
  std::ofstream calib(fs::path(out_dir) / "calib.txt");
  calib << K.fx << " " << K.fy << " " << K.cx << " " << K.cy << " " << K.width << " " << K.height
        << "\n";
  save_trajectory_tum(gt, (fs::path(out_dir) / "groundtruth.txt").string());
  save_map(map, (fs::path(out_dir) / "map.ply").string());
}

}  // namespace dsl
