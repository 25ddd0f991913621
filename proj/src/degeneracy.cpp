#include <cmath>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "dsl/degeneracy.hpp"

namespace dsl {

const char* to_string(DegeneracyClass c) {
  switch (c) {
    case DegeneracyClass::kSinglePlane: return "SinglePlane";
    case DegeneracyClass::kParallelPlanes: return "ParallelPlanes";
    case DegeneracyClass::kCoplanarNormals: return "CoplanarNormals";
    case DegeneracyClass::kWellConstrained: return "WellConstrained";
  }
  return "?";
}

Vec3 normal_scatter_eigs(const std::vector<Vec3>& normals) {
  if (normals.empty()) throw std::invalid_argument("normal_scatter_eigs: no normals");
  Mat3 M = Mat3::Zero();
  for (const Vec3& n : normals) M += n * n.transpose();
  M /= static_cast<double>(normals.size());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(M);
  const Vec3 asc = eig.eigenvalues();
  return Vec3(asc(2), asc(1), asc(0));
}

namespace {

// Sign canonicalization: (n, d) and (-n, -d) describe the same plane.
PlaneCoeffs canonical(const PlaneCoeffs& p) {
  int axis = 0;
  p.normal.cwiseAbs().maxCoeff(&axis);
  if (p.normal(axis) < 0) return PlaneCoeffs(-p.normal, -p.d);
  return p;
}

}  // namespace

DegeneracyClass classify(const std::vector<PlaneCoeffs>& planes, const DegeneracyConfig& cfg) {
  if (planes.empty()) throw std::invalid_argument("classify: no surfel constraints");
  const double cos_tol = std::cos(cfg.normal_tol_deg * M_PI / 180.0);
  const PlaneCoeffs ref = canonical(planes.front());

  bool all_parallel = true;
  bool all_same_d = true;
  for (const PlaneCoeffs& p : planes) {
    const PlaneCoeffs c = canonical(p);
    if (c.normal.dot(ref.normal) < cos_tol) all_parallel = false;
    if (std::abs(c.d - ref.d) > cfg.d_tol) all_same_d = false;
  }
  if (all_parallel && all_same_d) return DegeneracyClass::kSinglePlane;
  if (all_parallel) return DegeneracyClass::kParallelPlanes;

  std::vector<Vec3> normals;
  normals.reserve(planes.size());
  for (const PlaneCoeffs& p : planes) normals.push_back(p.normal);
  const Vec3 e = normal_scatter_eigs(normals);
  if (e(2) / std::max(e(0), 1e-300) < cfg.coplanar_eps) return DegeneracyClass::kCoplanarNormals;
  return DegeneracyClass::kWellConstrained;
}

namespace {

// Gauge action of Eq. 12 on a camera-to-world pose:
// R^w_c -> Rbar R^w_c,  t^w_c -> lambda (Rbar t^w_c + tbar).
Pose apply_gauge(const Pose& T_w_c, double lambda, const Pose& Tbar) {
  Pose out;
  out.R = Tbar.R * T_w_c.R;
  out.t = lambda * (Tbar.R * T_w_c.t + Tbar.t);
  return out;
}

// Normalized-plane measurement of one constraint observed from one
// target, as a function of the gauge parameters (Eq. 15 with the gauged
// poses substituted).
Vec2 constraint_measurement(const SurfelConstraint& c, const Pose& host_g, const Pose& target_g,
                            const CameraIntrinsics& K) {
  const Vec3 xbar = K.unproject(c.pixel);
  const double denom = host_g.t.dot(c.plane_w.normal) + c.plane_w.d;
  const double rho = -c.plane_w.normal.dot(host_g.R * xbar) / denom;
  const Pose T_t_h = target_g.inverse() * host_g;
  const Vec3 v = T_t_h.R * xbar + T_t_h.t * rho;
  return Vec2(v.x() / v.z(), v.y() / v.z());
}

}  // namespace

std::pair<int, MatX> gauge_nullspace(const std::vector<SurfelConstraint>& constraints,
                                     const std::vector<Pose>& frame_T_w_c,
                                     const CameraIntrinsics& K, const DegeneracyConfig& cfg) {
  const int n_frames = static_cast<int>(frame_T_w_c.size());
  if (n_frames < 1) throw std::invalid_argument("gauge_nullspace: need at least one frame");

  // Gauge coordinates: g = [dlambda, dt(3), dr(3)] acting as
  // lambda = 1 + dlambda, Tbar = exp([dt, dr]).
  auto gauged_poses = [&](const Eigen::Matrix<double, 7, 1>& g) {
    const double lambda = 1.0 + g(0);
    const Pose Tbar = se3_exp<double>((Vec6() << g.segment<3>(1), g.segment<3>(4)).finished());
    std::vector<Pose> out(frame_T_w_c.size());
    for (size_t i = 0; i < frame_T_w_c.size(); ++i)
      out[i] = apply_gauge(frame_T_w_c[i], lambda, Tbar);
    return out;
  };

  // Rows: every (constraint, target frame) measurement.
  std::vector<std::pair<int, int>> rows;  // (constraint index, target frame)
  for (size_t ci = 0; ci < constraints.size(); ++ci)
    for (int t = 0; t < n_frames; ++t)
      if (t != constraints[ci].host) rows.emplace_back(static_cast<int>(ci), t);

  if (rows.empty()) {
    // No surfel constraints: the full 7-dim family of Eq. 12 survives.
    return {7, MatX::Identity(7, 7)};
  }

  MatX J(2 * rows.size(), 7);
  const double h = 1e-6;
  for (int col = 0; col < 7; ++col) {
    Eigen::Matrix<double, 7, 1> gp = Eigen::Matrix<double, 7, 1>::Zero();
    gp(col) = h;
    Eigen::Matrix<double, 7, 1> gm = -gp;
    const std::vector<Pose> plus = gauged_poses(gp);
    const std::vector<Pose> minus = gauged_poses(gm);
    for (size_t r = 0; r < rows.size(); ++r) {
      const auto& [ci, t] = rows[r];
      const SurfelConstraint& c = constraints[ci];
      const Vec2 mp = constraint_measurement(c, plus[c.host], plus[t], K);
      const Vec2 mm = constraint_measurement(c, minus[c.host], minus[t], K);
      J.block<2, 1>(2 * r, col) = (mp - mm) / (2 * h);
    }
  }

  Eigen::JacobiSVD<MatX> svd(J, Eigen::ComputeThinV);
  const VecX sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  int dim = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) < cfg.nullspace_rtol * std::max(smax, 1e-300)) ++dim;
  if (smax == 0.0) dim = 7;
  MatX basis = svd.matrixV().rightCols(dim);
  return {dim, basis};
}

DegeneracyReport analyze_constraints(const std::vector<SurfelConstraint>& constraints,
                                     const std::vector<Pose>& frame_T_w_c,
                                     const CameraIntrinsics& K, const DegeneracyConfig& cfg) {
  DegeneracyReport rep;
  rep.n_constraints = static_cast<int>(constraints.size());
  rep.n_frames = static_cast<int>(frame_T_w_c.size());
  if (constraints.empty()) {
    rep.pure_visual = true;
    rep.nullspace_dim = 7;
    rep.nullspace_basis = MatX::Identity(7, 7);
    return rep;
  }
  std::vector<PlaneCoeffs> planes;
  std::vector<Vec3> normals;
  planes.reserve(constraints.size());
  for (const auto& c : constraints) {
    planes.push_back(c.plane_w);
    normals.push_back(c.plane_w.normal);
  }
  rep.classification = classify(planes, cfg);
  rep.scatter_eigs = normal_scatter_eigs(normals);
  rep.ratio_e2_e1 = rep.scatter_eigs(1) / std::max(rep.scatter_eigs(0), 1e-300);
  rep.ratio_e3_e1 = rep.scatter_eigs(2) / std::max(rep.scatter_eigs(0), 1e-300);
  auto [dim, basis] = gauge_nullspace(constraints, frame_T_w_c, K, cfg);
  rep.nullspace_dim = dim;
  rep.nullspace_basis = std::move(basis);
  return rep;
}

DegeneracyReport analyze_window(const WindowState& w, const DegeneracyConfig& cfg) {
  std::vector<Pose> poses;
  poses.reserve(w.keyframes.size());
  for (const auto& kf : w.keyframes) poses.push_back(kf.state.T_w_c);
  std::vector<SurfelConstraint> constraints;
  for (const auto& pt : w.points) {
    if (pt.status != PointStatus::kAssociated) continue;
    const int host_idx = w.kf_index(pt.host_kf);
    if (host_idx < 0) continue;
    constraints.push_back({pt.plane_w, host_idx, pt.pixel});
  }
  return analyze_constraints(constraints, poses, w.K, cfg);
}

std::string serialize(const DegeneracyReport& r) {
  std::ostringstream os;
  os << "classification=" << (r.pure_visual ? "PureVisual" : to_string(r.classification)) << "\n";
  os << "pure_visual=" << (r.pure_visual ? 1 : 0) << "\n";
  os << "nullspace_dim=" << r.nullspace_dim << "\n";
  os << "n_constraints=" << r.n_constraints << "\n";
  os << "n_frames=" << r.n_frames << "\n";
  os << "e1=" << r.scatter_eigs(0) << "\n";
  os << "e2=" << r.scatter_eigs(1) << "\n";
  os << "e3=" << r.scatter_eigs(2) << "\n";
  os << "ratio_e2_e1=" << r.ratio_e2_e1 << "\n";
  os << "ratio_e3_e1=" << r.ratio_e3_e1 << "\n";
  for (int c = 0; c < r.nullspace_basis.cols(); ++c) {
    os << "nullspace_basis_" << c << "=";
    for (int k = 0; k < r.nullspace_basis.rows(); ++k) {
      if (k) os << ",";
      os << r.nullspace_basis(k, c);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace dsl
