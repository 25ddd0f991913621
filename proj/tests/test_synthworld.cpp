#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "dsl/photometric.hpp"
#include "dsl/renderer.hpp"
#include "dsl/synthworld.hpp"
#include "test_utils.hpp"

using namespace dsl;
using namespace dsl::test;

namespace {

// Fraction of interior pixels where warping view A through the Eq. 3
// homography of the ground-truth plane reproduces view B within one
// intensity level. Pixels must see the same plane in both views.
double homography_agreement(const Scene& scene, size_t fa, size_t fb) {
  const CameraIntrinsics& K = scene.K();
  const Pose& Ta = scene.pose(fa);
  const Pose& Tb = scene.pose(fb);
  const ExposureSpec& ea = scene.exposure(fa);
  const ExposureSpec& eb = scene.exposure(fb);
  const RenderedImage A = render_image(scene, Ta, ea);
  const RenderedImage B = render_image(scene, Tb, eb);

  // Eq. 2 affine transfer from A (host) to B (target).
  const double a_ba = (eb.t * std::exp(eb.a)) / (ea.t * std::exp(ea.a));
  const double b_ba = eb.b - a_ba * ea.b;

  const Pose T_b_a = Tb.inverse() * Ta;
  size_t total = 0, good = 0;
  for (int y = 3; y < K.height - 3; ++y) {
    for (int x = 3; x < K.width - 3; ++x) {
      const auto hit = scene.cast_ray(Ta, K.unproject(Vec2(x, y)));
      if (!hit) continue;
      const PlaneCoeffs& plane_w = scene.spec().planes[hit->plane].plane;
      const PlaneCoeffs plane_a = transform_plane(Ta.inverse(), plane_w);
      if (std::abs(plane_a.d) < 1e-9) continue;
      const Mat3 H = compute_homography(T_b_a, plane_a, K);
      const Vec3 hp = H * Vec3(x, y, 1.0);
      if (hp.z() <= 0) continue;
      const Vec2 pb(hp.x() / hp.z(), hp.y() / hp.z());
      if (!B.image.in_bounds(pb.x(), pb.y(), 3.0)) continue;
      // interior only: the warped ray must land on the same plane
      const auto hit_b = scene.cast_ray(Tb, K.unproject(pb));
      if (!hit_b || hit_b->plane != hit->plane) continue;
      ++total;
      const double predicted = a_ba * A.image.at(x, y) + b_ba;
      const double observed = B.image.sample(pb.x(), pb.y());
      if (std::abs(predicted - observed) <= 1.0) ++good;
    }
  }
  REQUIRE(total > 500);
  return static_cast<double>(good) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("textures are deterministic per seed") {
  const PlaneTexture a(42), b(42), c(43);
  bool differs = false;
  for (double u = -1; u <= 1; u += 0.37) {
    for (double v = -1; v <= 1; v += 0.41) {
      CHECK(a.radiance(u, v) == b.radiance(u, v));
      if (a.radiance(u, v) != c.radiance(u, v)) differs = true;
    }
  }
  CHECK(differs);
}

TEST_CASE("texture gradients are nonzero on most samples") {
  const PlaneTexture tex(7);
  rng(71);
  int nonzero = 0;
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    const double u = uniform(-2, 2), v = uniform(-2, 2);
    const double h = 1e-4;
    const double gu = (tex.radiance(u + h, v) - tex.radiance(u - h, v)) / (2 * h);
    const double gv = (tex.radiance(u, v + h) - tex.radiance(u, v - h)) / (2 * h);
    if (std::hypot(gu, gv) > 1.0) ++nonzero;
  }
  CHECK(nonzero > 0.8 * n);
}

TEST_CASE("box room preset has six mutually orthogonal plane groups") {
  const SceneSpec spec = preset_box_room(10, 1);
  REQUIRE(spec.planes.size() == 6);
  for (size_t i = 0; i < 6; ++i)
    for (size_t j = i + 1; j < 6; ++j) {
      const double dot = std::abs(spec.planes[i].plane.normal.dot(spec.planes[j].plane.normal));
      CHECK((dot == doctest::Approx(0.0) || dot == doctest::Approx(1.0)));
    }
  // every trajectory pose stays inside the room
  for (const auto& [t, pose] : spec.trajectory) CHECK(pose.t.cwiseAbs().maxCoeff() < 2.0);
}

TEST_CASE("coincident overlapping planes are rejected") {
  SceneSpec spec = preset_box_room(5, 1);
  spec.planes.push_back(spec.planes[0]);
  CHECK_THROWS_AS(make_scene(std::move(spec)), std::invalid_argument);
}

TEST_CASE("ground-truth depth of a fronto-parallel plane") {
  SceneSpec spec;
  spec.K = CameraIntrinsics(250, 250, 159.5, 119.5, 320, 240);
  PlaneSpec p;
  p.plane = PlaneCoeffs::from_point_normal(Vec3(0, 0, 5), Vec3(0, 0, -1));
  p.center = Vec3(0, 0, 5);
  p.axis_u = Vec3(1, 0, 0);
  p.axis_v = Vec3(0, 1, 0);
  p.half_u = p.half_v = 10;
  p.texture_seed = 3;
  spec.planes.push_back(p);
  Pose cam;  // identity: optical axis along world +z
  spec.trajectory.emplace_back(0.0, cam);
  spec.exposures.push_back({1.0, 0.0, 0.0});
  const Scene scene = make_scene(std::move(spec));
  const RenderedImage img = render_image(scene, cam, {1.0, 0.0, 0.0});
  // camera-frame depth of a fronto-parallel plane is the plane depth
  for (int y = 0; y < 240; y += 31)
    for (int x = 0; x < 320; x += 37)
      CHECK(img.depth[static_cast<size_t>(y) * 320 + x] == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("doubling exposure time doubles pre-quantization intensity at a=b=0") {
  const Scene scene = make_scene(preset_box_room(3, 5));
  const RenderedImage one = render_image(scene, scene.pose(0), {1.0, 0.0, 0.0}, false);
  const RenderedImage two = render_image(scene, scene.pose(0), {2.0, 0.0, 0.0}, false);
  for (int i = 0; i < 320 * 240; i += 101) {
    if (one.depth[i] == 0) continue;
    CHECK(two.image.data()[i] == doctest::Approx(2.0 * one.image.data()[i]).epsilon(1e-6));
  }
}

TEST_CASE("homography keystone: consecutive box-room views transfer within 1 level") {
  const Scene scene = make_scene(preset_box_room(24, 2));
  for (size_t f = 0; f + 1 < scene.num_frames(); f += 5) {
    const double agreement = homography_agreement(scene, f, f + 1);
    CHECK(agreement >= 0.99);
  }
}

TEST_CASE("sampled surfel map has analytic normals and full coverage") {
  const Scene scene = make_scene(preset_box_room(4, 3));
  const double voxel = 0.11;
  const SurfelMap map = sample_surfel_map(scene, voxel);

  // normals equal the plane normals exactly
  for (size_t i = 0; i < map.size(); i += 97) {
    bool matches = false;
    for (const PlaneSpec& p : scene.spec().planes)
      if ((map.surfels[i].normal - p.plane.normal).norm() == 0.0 &&
          std::abs(p.plane.evaluate(map.surfels[i].position)) < 1e-12)
        matches = true;
    CHECK(matches);
  }

  // surfel count: one per voxel cell of each plane grid
  size_t expected = 0;
  for (const PlaneSpec& p : scene.spec().planes) {
    const int nu = static_cast<int>(std::ceil(2 * p.half_u / voxel));
    const int nv = static_cast<int>(std::ceil(2 * p.half_v / voxel));
    expected += static_cast<size_t>(nu) * nv;
  }
  CHECK(map.size() == expected);

  // coverage: every frustum ray hitting a plane hits a surfel disk
  const CameraIntrinsics& K = scene.K();
  const RenderedMaps maps = render(map, scene.pose(0), K);
  size_t scene_hits = 0, covered = 0;
  for (int y = 0; y < K.height; y += 7)
    for (int x = 0; x < K.width; x += 7) {
      if (!scene.cast_ray(scene.pose(0), K.unproject(Vec2(x, y)))) continue;
      ++scene_hits;
      if (maps.valid(x, y)) ++covered;
    }
  CHECK(scene_hits > 0);
  CHECK(covered == scene_hits);
}

TEST_CASE("perturb_map: zero sigma keeps positions, noise statistics match") {
  const Scene scene = make_scene(preset_box_room(3, 9));
  const SurfelMap map = sample_surfel_map(scene, 0.1);

  const SurfelMap same = perturb_map(map, 0.0, 123, 10);
  REQUIRE(same.size() == map.size());
  for (size_t i = 0; i < map.size(); i += 53)
    CHECK((same.surfels[i].position - map.surfels[i].position).norm() == 0.0);
  // normals re-estimated on exact points match the analytic ones away
  // from wall creases (PCA neighborhoods straddle the corners)
  int aligned = 0, checked = 0;
  for (size_t i = 0; i < map.size(); i += 53) {
    bool near_crease = false;
    for (const PlaneSpec& p : scene.spec().planes)
      if (std::abs(p.plane.evaluate(map.surfels[i].position)) > 1e-9 &&
          std::abs(p.plane.evaluate(map.surfels[i].position)) < 2 * 0.1)
        near_crease = true;
    if (near_crease) continue;
    ++checked;
    if (std::abs(same.surfels[i].normal.dot(map.surfels[i].normal)) > 0.999) ++aligned;
  }
  REQUIRE(checked > 10);
  CHECK(aligned > 0.9 * checked);

  const double sigma = 0.05;
  const SurfelMap noisy = perturb_map(map, sigma, 77, 10);
  double sq = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < std::min(map.size(), noisy.size()); ++i) {
    sq += (noisy.surfels[i].position - map.surfels[i].position).squaredNorm();
    n += 3;
  }
  const double std_hat = std::sqrt(sq / static_cast<double>(n));
  CHECK(std_hat == doctest::Approx(sigma).epsilon(0.05));
}

TEST_CASE("normal angular error grows monotonically with sigma") {
  const Scene scene = make_scene(preset_single_wall(3, 4));
  const SurfelMap map = sample_surfel_map(scene, 0.1);
  double prev = -1.0;
  for (double sigma : {0.0, 0.02, 0.06, 0.15}) {
    const SurfelMap noisy = perturb_map(map, sigma, 99, 10);
    double err = 0;
    size_t n = 0;
    for (const Surfel& s : noisy.surfels) {
      const double c = std::min(1.0, std::abs(s.normal.dot(Vec3(1, 0, 0))));
      err += std::acos(c);
      ++n;
    }
    err /= static_cast<double>(n);
    CHECK(err >= prev - 1e-9);
    prev = err;
  }
}

TEST_CASE("emit_sequence writes the documented layout") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "dsl_test_synth_emit";
  fs::remove_all(dir);
  const Scene scene = make_scene(preset_box_room(4, 6));
  const SurfelMap map = sample_surfel_map(scene, 0.15);
  emit_sequence(scene, map, dir.string());
  CHECK(fs::exists(dir / "index.txt"));
  CHECK(fs::exists(dir / "calib.txt"));
  CHECK(fs::exists(dir / "groundtruth.txt"));
  CHECK(fs::exists(dir / "map.ply"));
  CHECK(fs::exists(dir / "frame_000000.pgm"));
  CHECK(fs::exists(dir / "frame_000003.pgm"));
  const Image img = load_pgm((dir / "frame_000000.pgm").string());
  CHECK(img.width() == 320);
  CHECK(img.height() == 240);
}
