#pragma once

#include <string>
#include <vector>

#include "dsl/types.hpp"

namespace dsl {

// Surface element in the world frame: the atom of the prior map.
struct Surfel {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double radius = 0.0;
};

struct SurfelMap {
  std::vector<Surfel> surfels;
  double voxel_size = 0.0;  // provenance metadata from the build step

  bool empty() const { return surfels.empty(); }
  size_t size() const { return surfels.size(); }
};

struct SurfelMapParams {
  double voxel = 0.1;          // downsampling voxel edge, meters
  int k_neighbors = 10;        // PCA neighborhood size
  Vec3 viewpoint = Vec3::Zero();  // normals are flipped to face this point
};

// One output point per occupied voxel, at the centroid of its members.
// Output is sorted by voxel index, deterministic for any input order.
std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points, double voxel);

// Per-point normal from the smallest eigenvector of the k-NN covariance.
// Exact neighbors via a uniform grid. Points whose neighborhoods are
// rank-deficient (or with fewer than k neighbors available) get
// valid[i] = false. Sign faces the viewpoint.
std::vector<Vec3> estimate_normals_pca(const std::vector<Vec3>& points, int k,
                                       const Vec3& viewpoint, std::vector<bool>& valid);

// Downsample, estimate normals, radius = voxel * sqrt(2)/2 so disks cover
// a planar voxel grid without gaps. Normal-invalid points are excluded.
SurfelMap build_surfel_map(const std::vector<Vec3>& points, const SurfelMapParams& params);

// Binary little-endian PLY, per-vertex float32 x y z nx ny nz radius.
// The voxel size is recorded as a header comment. ASCII PLY is accepted
// on input; the radius property may be omitted if the voxel_size comment
// is present (radius then defaults to the build rule).
void save_map(const SurfelMap& map, const std::string& path);
SurfelMap load_map(const std::string& path);

// Plain point cloud PLY (x y z, extra properties ignored), ASCII or
// binary little-endian.
std::vector<Vec3> load_point_cloud_ply(const std::string& path);
void save_point_cloud_ply(const std::vector<Vec3>& points, const std::string& path);

}  // namespace dsl
