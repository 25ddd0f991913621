#pragma once

#include <string>
#include <vector>

#include "dsl/camera.hpp"
#include "dsl/plane.hpp"
#include "dsl/se3.hpp"
#include "dsl/types.hpp"
#include "dsl/window.hpp"

namespace dsl {

enum class DegeneracyClass { kSinglePlane, kParallelPlanes, kCoplanarNormals, kWellConstrained };

const char* to_string(DegeneracyClass c);

// One surfel constraint for the gauge analysis: a host ray bound to a
// world plane, observed from the other frames.
struct SurfelConstraint {
  PlaneCoeffs plane_w;
  int host = 0;   // index into the frame pose list
  Vec2 pixel = Vec2::Zero();
};

struct DegeneracyConfig {
  double coplanar_eps = 1e-3;    // threshold on e3/e1
  double normal_tol_deg = 1.0;   // plane grouping tolerance
  double d_tol = 0.01;           // meters
  double nullspace_rtol = 1e-8;  // singular values below rtol * max are null
};

struct DegeneracyReport {
  DegeneracyClass classification = DegeneracyClass::kWellConstrained;
  bool pure_visual = false;  // no surfel constraints at all
  int nullspace_dim = 0;
  MatX nullspace_basis;      // 7 x dim, orthonormal columns
  Vec3 scatter_eigs = Vec3::Zero();  // e1 >= e2 >= e3
  double ratio_e2_e1 = 0.0;
  double ratio_e3_e1 = 0.0;
  int n_constraints = 0;
  int n_frames = 0;
};

// Eigenvalues of the second-moment matrix (1/N) sum n n^T, descending.
// Sign-invariant by construction, matching the +-n ambiguity of normals.
Vec3 normal_scatter_eigs(const std::vector<Vec3>& normals);

DegeneracyClass classify(const std::vector<PlaneCoeffs>& planes, const DegeneracyConfig& cfg = {});

// Dimension and orthonormal basis of the gauge family (scale lambda plus a
// 6-dof global transform) that leaves every surfel constraint measurement
// unchanged, computed by SVD of the numerically assembled Jacobian of the
// constraint equations at the identity gauge. Gauge coordinates are
// [dlambda, dt(3), dr(3)]. With no constraints the whole 7-dim family
// survives (the visual-only ambiguity: relative measurements absorb any
// scale and global transform).
std::pair<int, MatX> gauge_nullspace(const std::vector<SurfelConstraint>& constraints,
                                     const std::vector<Pose>& frame_T_w_c,
                                     const CameraIntrinsics& K,
                                     const DegeneracyConfig& cfg = {});

// Full diagnostic for the current window: classification, normal-scatter
// eigenvalues and the gauge nullspace of its surfel constraints.
DegeneracyReport analyze_window(const WindowState& w, const DegeneracyConfig& cfg = {});

DegeneracyReport analyze_constraints(const std::vector<SurfelConstraint>& constraints,
                                     const std::vector<Pose>& frame_T_w_c,
                                     const CameraIntrinsics& K,
                                     const DegeneracyConfig& cfg = {});

// Flat key=value serialization, one entry per line.
std::string serialize(const DegeneracyReport& report);

}  // namespace dsl
