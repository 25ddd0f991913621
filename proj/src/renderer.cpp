#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "dsl/renderer.hpp"

namespace dsl {

double RenderedMaps::valid_fraction() const {
  if (surfel_id.empty()) return 0.0;
  size_t n = 0;
  for (int32_t id : surfel_id)
    if (id >= 0) ++n;
  return static_cast<double>(n) / static_cast<double>(surfel_id.size());
}

namespace {

struct SurfelScreenBox {
  int32_t id;
  int x0, x1, y0, y1;  // inclusive pixel bounds
  Vec3 center_c;       // camera frame
  Vec3 normal_c;       // camera frame
};

// Conservative screen bounding box from the eight corners of the
// camera-frame axis-aligned box around the surfel's bounding sphere.
bool screen_box(const Vec3& c, double r, const CameraIntrinsics& K, double near_clip,
                int& x0, int& x1, int& y0, int& y1) {
  if (c.z() + r <= near_clip) return false;
  double umin = std::numeric_limits<double>::max(), umax = -umin;
  double vmin = umin, vmax = -umin;
  for (int i = 0; i < 8; ++i) {
    Vec3 corner = c + Vec3((i & 1) ? r : -r, (i & 2) ? r : -r, (i & 4) ? r : -r);
    const double z = std::max(corner.z(), near_clip);
    const double u = K.fx * corner.x() / z + K.cx;
    const double v = K.fy * corner.y() / z + K.cy;
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  x0 = std::max(0, static_cast<int>(std::floor(umin)));
  x1 = std::min(K.width - 1, static_cast<int>(std::ceil(umax)));
  y0 = std::max(0, static_cast<int>(std::floor(vmin)));
  y1 = std::min(K.height - 1, static_cast<int>(std::ceil(vmax)));
  return x0 <= x1 && y0 <= y1;
}

}  // namespace

RenderedMaps render(const SurfelMap& map, const Pose& T_w_c, const CameraIntrinsics& K,
                    const RenderOptions& opts) {
  if (map.empty()) throw std::invalid_argument("render: empty surfel map");
  RenderedMaps out;
  out.width = K.width;
  out.height = K.height;
  const size_t n_px = static_cast<size_t>(K.width) * K.height;
  out.depth.assign(n_px, 0.f);
  out.vertex.assign(n_px, Vec3f::Zero());
  out.normal.assign(n_px, Vec3f::Zero());
  out.surfel_id.assign(n_px, -1);

  const Pose T_c_w = T_w_c.inverse();

  // Cull and project all surfels up front.
  std::vector<SurfelScreenBox> boxes;
  boxes.reserve(map.size());
  for (size_t i = 0; i < map.size(); ++i) {
    const Surfel& s = map.surfels[i];
    SurfelScreenBox b;
    b.center_c = T_c_w * s.position;
    if (b.center_c.z() + s.radius <= opts.near_clip) continue;
    if (b.center_c.z() - s.radius >= opts.far_clip) continue;
    b.normal_c = T_c_w.R * s.normal;
    if (opts.backface_cull && b.normal_c.dot(b.center_c) > 0) continue;
    if (!screen_box(b.center_c, s.radius, K, opts.near_clip, b.x0, b.x1, b.y0, b.y1)) continue;
    b.id = static_cast<int32_t>(i);
    boxes.push_back(b);
  }

  // Bin surfels by row so bands can be rasterized independently.
  std::vector<std::vector<const SurfelScreenBox*>> rows(K.height);
  for (const SurfelScreenBox& b : boxes)
    for (int y = b.y0; y <= b.y1; ++y) rows[y].push_back(&b);

  auto raster_rows = [&](int y_begin, int y_end) {
    for (int y = y_begin; y < y_end; ++y) {
      for (const SurfelScreenBox* b : rows[y]) {
        const Surfel& s = map.surfels[b->id];
        const double nc = b->normal_c.dot(b->center_c);
        for (int x = b->x0; x <= b->x1; ++x) {
          const Vec3 dir = K.unproject(Vec2(x, y));
          const double denom = b->normal_c.dot(dir);
          if (std::abs(denom) < 1e-12) continue;  // ray parallel to disk plane
          const double z = nc / denom;            // camera-frame depth (dir has unit z)
          if (z <= opts.near_clip || z >= opts.far_clip) continue;
          const Vec3 hit = z * dir;
          if ((hit - b->center_c).squaredNorm() > s.radius * s.radius) continue;
          const size_t px = out.idx(x, y);
          const float zf = static_cast<float>(z);
          const int32_t cur = out.surfel_id[px];
          if (cur >= 0 && (out.depth[px] < zf || (out.depth[px] == zf && cur < b->id))) continue;
          out.depth[px] = zf;
          out.vertex[px] = s.position.cast<float>();
          out.normal[px] = s.normal.cast<float>();
          out.surfel_id[px] = b->id;
        }
      }
    }
  };

  const int n_threads = std::max(1, opts.num_threads);
  if (n_threads == 1) {
    raster_rows(0, K.height);
  } else {
    std::vector<std::thread> pool;
    const int band = (K.height + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const int y0 = t * band, y1 = std::min(K.height, y0 + band);
      if (y0 < y1) pool.emplace_back(raster_rows, y0, y1);
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

std::optional<double> depth_at(const RenderedMaps& maps, int x, int y) {
  if (x < 0 || y < 0 || x >= maps.width || y >= maps.height)
    throw std::out_of_range("depth_at: pixel outside image");
  if (!maps.valid(x, y)) return std::nullopt;
  return maps.depth[maps.idx(x, y)];
}

std::optional<PlaneCoeffs> plane_at(const RenderedMaps& maps, int x, int y) {
  if (x < 0 || y < 0 || x >= maps.width || y >= maps.height)
    throw std::out_of_range("plane_at: pixel outside image");
  if (!maps.valid(x, y)) return std::nullopt;
  const size_t i = maps.idx(x, y);
  const Vec3 n = maps.normal[i].cast<double>();
  const Vec3 v = maps.vertex[i].cast<double>();
  return PlaneCoeffs(n, -n.dot(v));
}

void dump_depth_pgm(const RenderedMaps& maps, const std::string& path) {
  std::vector<uint16_t> mm(maps.depth.size());
  for (size_t i = 0; i < maps.depth.size(); ++i) {
    const double v = std::round(maps.depth[i] * 1000.0);
    mm[i] = static_cast<uint16_t>(std::min(65535.0, std::max(0.0, v)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dump_depth_pgm: cannot open " + path);
  out << "P5\n" << maps.width << " " << maps.height << "\n65535\n";
  for (uint16_t v : mm) {
    out.put(static_cast<char>(v >> 8));
    out.put(static_cast<char>(v & 0xff));
  }
}

void dump_vector_raster(const RenderedMaps& maps, const std::vector<Vec3f>& field,
                        uint32_t magic, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dump_vector_raster: cannot open " + path);
  const uint16_t w = static_cast<uint16_t>(maps.width), h = static_cast<uint16_t>(maps.height);
  out.write(reinterpret_cast<const char*>(&magic), 4);
  out.write(reinterpret_cast<const char*>(&w), 2);
  out.write(reinterpret_cast<const char*>(&h), 2);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (size_t i = 0; i < field.size(); ++i) {
    float rec[3] = {field[i].x(), field[i].y(), field[i].z()};
    if (maps.surfel_id[i] < 0) rec[0] = rec[1] = rec[2] = nan;
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
}

void dump_rendered_maps(const RenderedMaps& maps, const std::string& prefix) {
  dump_depth_pgm(maps, prefix + "_depth.pgm");
  dump_vector_raster(maps, maps.vertex, kVertexRasterMagic, prefix + "_vertex.bin");
  dump_vector_raster(maps, maps.normal, kNormalRasterMagic, prefix + "_normal.bin");
}

}  // namespace dsl
