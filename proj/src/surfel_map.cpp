#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <stdexcept>
#include <unordered_map>

#include <Eigen/Eigenvalues>

#include "dsl/surfel_map.hpp"

namespace dsl {

namespace {

struct VoxelKey {
  int64_t x, y, z;
  bool operator<(const VoxelKey& o) const {
    if (x != o.x) return x < o.x;
    if (y != o.y) return y < o.y;
    return z < o.z;
  }
};

VoxelKey voxel_of(const Vec3& p, double voxel) {
  return {static_cast<int64_t>(std::floor(p.x() / voxel)),
          static_cast<int64_t>(std::floor(p.y() / voxel)),
          static_cast<int64_t>(std::floor(p.z() / voxel))};
}

// Uniform-grid index for exact k-NN queries.
class GridIndex {
 public:
  GridIndex(const std::vector<Vec3>& points, double cell) : points_(points), cell_(cell) {
    for (size_t i = 0; i < points.size(); ++i) {
      const VoxelKey k = voxel_of(points[i], cell_);
      cells_[k].push_back(i);
      if (cells_.size() == 1) min_key_ = max_key_ = k;
      min_key_ = {std::min(min_key_.x, k.x), std::min(min_key_.y, k.y), std::min(min_key_.z, k.z)};
      max_key_ = {std::max(max_key_.x, k.x), std::max(max_key_.y, k.y), std::max(max_key_.z, k.z)};
    }
  }

  // Exact k nearest neighbors (including the query point itself when it is
  // a member of the set). Expands rings of cells until the k-th best
  // distance is covered.
  std::vector<size_t> knn(const Vec3& q, int k) const {
    using Entry = std::pair<double, size_t>;  // (squared distance, index)
    std::priority_queue<Entry> best;          // max-heap of current best k
    const VoxelKey c = voxel_of(q, cell_);
    for (int ring = 0;; ++ring) {
      for (int dx = -ring; dx <= ring; ++dx)
        for (int dy = -ring; dy <= ring; ++dy)
          for (int dz = -ring; dz <= ring; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
            auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
            if (it == cells_.end()) continue;
            for (size_t idx : it->second) {
              const double d2 = (points_[idx] - q).squaredNorm();
              if (static_cast<int>(best.size()) < k) {
                best.emplace(d2, idx);
              } else if (d2 < best.top().first) {
                best.pop();
                best.emplace(d2, idx);
              }
            }
          }
      // All candidates within ring*cell of the query cell are now seen;
      // stop once the worst kept distance fits inside that guarantee.
      if (static_cast<int>(best.size()) == k) {
        const double covered = static_cast<double>(ring) * cell_;
        if (best.top().first <= covered * covered) break;
      }
      // The whole occupied grid has been visited: nothing more to find.
      if (c.x - ring <= min_key_.x && c.x + ring >= max_key_.x &&
          c.y - ring <= min_key_.y && c.y + ring >= max_key_.y &&
          c.z - ring <= min_key_.z && c.z + ring >= max_key_.z)
        break;
    }
    std::vector<size_t> out;
    out.reserve(best.size());
    while (!best.empty()) {
      out.push_back(best.top().second);
      best.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  const std::vector<Vec3>& points_;
  double cell_;
  std::map<VoxelKey, std::vector<size_t>> cells_;
  VoxelKey min_key_{0, 0, 0}, max_key_{0, 0, 0};
};

}  // namespace

std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points, double voxel) {
  if (voxel <= 0) throw std::invalid_argument("voxel_downsample: voxel must be positive");
  struct Slot {
    Vec3 sum = Vec3::Zero();
    int count = 0;
  };
  std::map<VoxelKey, Slot> acc;
  for (const Vec3& p : points) {
    Slot& slot = acc[voxel_of(p, voxel)];
    slot.sum += p;
    slot.count += 1;
  }
  std::vector<Vec3> out;
  out.reserve(acc.size());
  for (const auto& [key, slot] : acc) out.push_back(slot.sum / slot.count);
  return out;
}

std::vector<Vec3> estimate_normals_pca(const std::vector<Vec3>& points, int k,
                                       const Vec3& viewpoint, std::vector<bool>& valid) {
  if (k < 3) throw std::invalid_argument("estimate_normals_pca: k must be >= 3");
  valid.assign(points.size(), false);
  std::vector<Vec3> normals(points.size(), Vec3::UnitZ());
  if (points.empty()) return normals;

  // Cell size heuristic: aim for a handful of points per cell.
  Vec3 lo = points[0], hi = points[0];
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = std::max((hi - lo).maxCoeff(), 1e-6);
  const double cell = std::max(extent / std::cbrt(static_cast<double>(points.size()) + 1.0), 1e-6);
  GridIndex index(points, cell);

  for (size_t i = 0; i < points.size(); ++i) {
    const std::vector<size_t> nn = index.knn(points[i], k);
    if (static_cast<int>(nn.size()) < k) continue;  // too few neighbors: invalid
    Vec3 mean = Vec3::Zero();
    for (size_t j : nn) mean += points[j];
    mean /= static_cast<double>(nn.size());
    Mat3 cov = Mat3::Zero();
    for (size_t j : nn) {
      const Vec3 d = points[j] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 evals = eig.eigenvalues();  // ascending
    // Rank-deficient neighborhood (collinear or duplicated points): the
    // smallest eigenvector is not unique, flag invalid.
    if (evals(1) <= 1e-12 * std::max(evals(2), 1e-300)) continue;
    Vec3 n = eig.eigenvectors().col(0);
    if (n.dot(viewpoint - points[i]) < 0) n = -n;
    normals[i] = n.normalized();
    valid[i] = true;
  }
  return normals;
}

SurfelMap build_surfel_map(const std::vector<Vec3>& points, const SurfelMapParams& params) {
  if (points.empty()) throw std::invalid_argument("build_surfel_map: empty point cloud");
  if (params.voxel <= 0) throw std::invalid_argument("build_surfel_map: voxel must be positive");
  const std::vector<Vec3> down = voxel_downsample(points, params.voxel);
  if (static_cast<int>(down.size()) < params.k_neighbors)
    throw std::invalid_argument("build_surfel_map: fewer points than PCA neighborhood size");
  std::vector<bool> valid;
  const std::vector<Vec3> normals =
      estimate_normals_pca(down, params.k_neighbors, params.viewpoint, valid);
  SurfelMap map;
  map.voxel_size = params.voxel;
  const double radius = params.voxel * std::sqrt(2.0) / 2.0;
  map.surfels.reserve(down.size());
  for (size_t i = 0; i < down.size(); ++i) {
    if (!valid[i]) continue;
    map.surfels.push_back({down[i], normals[i], radius});
  }
  if (map.surfels.empty()) throw std::runtime_error("build_surfel_map: no valid surfels");
  return map;
}

}  // namespace dsl
