#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "dsl/surfel_map.hpp"
#include "test_utils.hpp"

using namespace dsl;
using namespace dsl::test;

namespace {

// Brute-force voxel hashing oracle: counts occupied voxels directly.
size_t count_occupied_voxels(const std::vector<Vec3>& pts, double voxel) {
  std::map<std::tuple<int64_t, int64_t, int64_t>, int> occ;
  for (const Vec3& p : pts)
    occ[{static_cast<int64_t>(std::floor(p.x() / voxel)),
         static_cast<int64_t>(std::floor(p.y() / voxel)),
         static_cast<int64_t>(std::floor(p.z() / voxel))}]++;
  return occ.size();
}

std::vector<Vec3> plane_cloud(double z, double extent, double step) {
  std::vector<Vec3> pts;
  for (double x = -extent; x <= extent; x += step)
    for (double y = -extent; y <= extent; y += step) pts.emplace_back(x, y, z);
  return pts;
}

}  // namespace

TEST_CASE("voxel_downsample basics") {
  CHECK(voxel_downsample({}, 0.5).empty());
  CHECK_THROWS_AS(voxel_downsample({Vec3(0, 0, 0)}, 0.0), std::invalid_argument);

  // singleton passes through
  const auto one = voxel_downsample({Vec3(0.2, 0.3, 0.4)}, 1.0);
  REQUIRE(one.size() == 1);
  CHECK((one[0] - Vec3(0.2, 0.3, 0.4)).norm() < 1e-15);

  // 8 cube corners inside one voxel collapse to the centroid
  std::vector<Vec3> cube;
  for (int i = 0; i < 8; ++i)
    cube.emplace_back(0.3 + 0.2 * ((i & 1) ? 1 : -1), 0.3 + 0.2 * ((i & 2) ? 1 : -1),
                      0.3 + 0.2 * ((i & 4) ? 1 : -1));
  const auto merged = voxel_downsample(cube, 1.0);
  REQUIRE(merged.size() == 1);
  CHECK((merged[0] - Vec3(0.3, 0.3, 0.3)).norm() < 1e-12);

  // two clusters farther than a voxel stay apart
  const auto two = voxel_downsample({Vec3(0.1, 0.1, 0.1), Vec3(2.1, 0.1, 0.1)}, 1.0);
  CHECK(two.size() == 2);
}

TEST_CASE("voxel_downsample matches the brute-force voxel count") {
  rng(501);
  std::vector<Vec3> pts;
  for (int i = 0; i < 2000; ++i)
    pts.emplace_back(uniform(-3, 3), uniform(-3, 3), uniform(-3, 3));
  for (double voxel : {0.3, 0.7, 1.3}) {
    CHECK(voxel_downsample(pts, voxel).size() == count_occupied_voxels(pts, voxel));
    CHECK(voxel_downsample(pts, voxel).size() <= pts.size());
  }
}

TEST_CASE("normals on a flat plane align with the analytic normal") {
  const auto pts = plane_cloud(3.0, 1.0, 0.1);
  std::vector<bool> valid;
  const auto normals = estimate_normals_pca(pts, 10, Vec3::Zero(), valid);
  for (size_t i = 0; i < pts.size(); ++i) {
    REQUIRE(valid[i]);
    // origin-facing sign rule: viewpoint (0,0,0) is below z=3
    CHECK(normals[i].dot(Vec3(0, 0, -1)) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("normals on two perpendicular planes, away from the crease") {
  const double voxel = 0.1;
  std::vector<Vec3> pts;
  // plane z = 0 (x in [0,2]), plane x = 0 (z in [0,2]) meeting at x=z=0
  for (double x = 0; x <= 2; x += voxel)
    for (double y = -1; y <= 1; y += voxel) pts.emplace_back(x, y, 0.0);
  const size_t n_floor = pts.size();
  for (double z = voxel; z <= 2; z += voxel)
    for (double y = -1; y <= 1; y += voxel) pts.emplace_back(0.0, y, z);

  std::vector<bool> valid;
  const auto normals = estimate_normals_pca(pts, 10, Vec3(1, 0, 1), valid);
  for (size_t i = 0; i < pts.size(); ++i) {
    const Vec3& p = pts[i];
    const bool on_floor = i < n_floor;
    // crease-band exclusion of width 2*voxel
    const double dist_to_crease = on_floor ? p.x() : p.z();
    if (dist_to_crease < 2 * voxel) continue;
    REQUIRE(valid[i]);
    const Vec3 expected = on_floor ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
    CHECK(normals[i].dot(expected) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("collinear points are flagged invalid") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 20; ++i) pts.emplace_back(0.1 * i, 0, 0);
  std::vector<bool> valid;
  estimate_normals_pca(pts, 5, Vec3::Zero(), valid);
  for (bool v : valid) CHECK_FALSE(v);
}

TEST_CASE("estimate_normals_pca validates arguments") {
  std::vector<bool> valid;
  CHECK_THROWS_AS(estimate_normals_pca({Vec3::Zero()}, 2, Vec3::Zero(), valid),
                  std::invalid_argument);
  // fewer points than k: everything invalid
  estimate_normals_pca(plane_cloud(1.0, 0.1, 0.1), 100, Vec3::Zero(), valid);
  for (bool v : valid) CHECK_FALSE(v);
}

TEST_CASE("build_surfel_map composes downsampling, normals and the radius rule") {
  const auto pts = plane_cloud(2.0, 1.0, 0.04);
  SurfelMapParams params;
  params.voxel = 0.1;
  params.k_neighbors = 8;
  const SurfelMap map = build_surfel_map(pts, params);
  CHECK(map.size() > 100);
  CHECK(map.voxel_size == doctest::Approx(0.1));
  for (const Surfel& s : map.surfels) {
    CHECK(s.radius == doctest::Approx(0.1 * std::sqrt(2.0) / 2.0));
    CHECK(std::abs(s.normal.norm() - 1.0) < 1e-6);
    CHECK(std::abs(s.normal.z()) == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(build_surfel_map({}, params), std::invalid_argument);

  // determinism
  const SurfelMap again = build_surfel_map(pts, params);
  REQUIRE(again.size() == map.size());
  for (size_t i = 0; i < map.size(); ++i)
    CHECK((map.surfels[i].position - again.surfels[i].position).norm() == 0.0);
}

TEST_CASE("surfel map PLY round trip is lossless at stored precision") {
  rng(502);
  SurfelMap map;
  map.voxel_size = 0.25;
  for (int i = 0; i < 57; ++i) {
    Surfel s;
    s.position = Vec3(uniform(-10, 10), uniform(-10, 10), uniform(-10, 10));
    s.normal = random_unit_vector();
    s.radius = uniform(0.01, 0.5);
    map.surfels.push_back(s);
  }
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "dsl_test_map";
  fs::create_directories(dir);
  const std::string path = (dir / "map.ply").string();
  save_map(map, path);
  const SurfelMap back = load_map(path);
  REQUIRE(back.size() == map.size());
  CHECK(back.voxel_size == doctest::Approx(map.voxel_size));
  for (size_t i = 0; i < map.size(); ++i) {
    CHECK((back.surfels[i].position.cast<float>() - map.surfels[i].position.cast<float>()).norm() ==
          0.0f);
    CHECK(std::abs(back.surfels[i].radius - map.surfels[i].radius) < 1e-6);
  }
}

TEST_CASE("ASCII PLY with positions and normals loads one surfel per vertex") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "dsl_test_map";
  fs::create_directories(dir);
  const std::string path = (dir / "ascii.ply").string();
  std::ofstream out(path);
  out << "ply\nformat ascii 1.0\ncomment voxel_size 0.2\nelement vertex 3\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "property float nx\nproperty float ny\nproperty float nz\nend_header\n";
  out << "0 0 0 0 0 1\n1 0 0 0 1 0\n0 1 0 1 0 0\n";
  out.close();
  const SurfelMap map = load_map(path);
  REQUIRE(map.size() == 3);
  // radius falls back to the voxel rule from the header comment
  CHECK(map.surfels[0].radius == doctest::Approx(0.2 * std::sqrt(2.0) / 2.0));
  CHECK((map.surfels[2].normal - Vec3(1, 0, 0)).norm() < 1e-7);
}

TEST_CASE("truncated PLY fails without a partial map") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "dsl_test_map";
  fs::create_directories(dir);
  const std::string path = (dir / "trunc.ply").string();
  std::ofstream out(path);
  out << "ply\nformat ascii 1.0\ncomment voxel_size 0.2\nelement vertex 5\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "property float nx\nproperty float ny\nproperty float nz\nend_header\n";
  out << "0 0 0 0 0 1\n1 0 0 0 1 0\n";
  out.close();
  CHECK_THROWS_WITH_AS(load_map(path), doctest::Contains("record"), std::runtime_error);
  CHECK_THROWS_AS(load_map((dir / "nofile.ply").string()), std::runtime_error);
}

TEST_CASE("point cloud PLY round trip") {
  rng(503);
  std::vector<Vec3> pts;
  for (int i = 0; i < 33; ++i) pts.emplace_back(uniform(-5, 5), uniform(-5, 5), uniform(-5, 5));
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "dsl_test_map";
  fs::create_directories(dir);
  const std::string path = (dir / "cloud.ply").string();
  save_point_cloud_ply(pts, path);
  const auto back = load_point_cloud_ply(path);
  REQUIRE(back.size() == pts.size());
  for (size_t i = 0; i < pts.size(); ++i)
    CHECK((back[i].cast<float>() - pts[i].cast<float>()).norm() == 0.0f);
}
