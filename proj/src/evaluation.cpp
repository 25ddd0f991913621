#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <Eigen/SVD>

#include "dsl/evaluation.hpp"

namespace dsl {

void Trajectory::push(double t, const Pose& T) {
  if (!poses.empty() && t <= poses.back().t)
    throw std::invalid_argument("Trajectory: timestamps must be strictly increasing");
  poses.push_back({t, T});
}

double Trajectory::path_length() const {
  double len = 0;
  for (size_t i = 1; i < poses.size(); ++i)
    len += (poses[i].T_w_c.t - poses[i - 1].T_w_c.t).norm();
  return len;
}

double Trajectory::position_diameter() const {
  double d = 0;
  for (size_t i = 0; i < poses.size(); ++i)
    for (size_t j = i + 1; j < poses.size(); ++j)
      d = std::max(d, (poses[i].T_w_c.t - poses[j].T_w_c.t).norm());
  return d;
}

Trajectory load_trajectory_tum(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_trajectory_tum: cannot open " + path);
  Trajectory out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw std::runtime_error("load_trajectory_tum: malformed line " + std::to_string(line_no) +
                               " in " + path);
    Eigen::Quaterniond q(qw, qx, qy, qz);
    if (q.norm() < 1e-9)
      throw std::runtime_error("load_trajectory_tum: zero quaternion at line " +
                               std::to_string(line_no));
    Pose T;
    T.R = q.normalized().toRotationMatrix();
    T.t = Vec3(tx, ty, tz);
    out.push(t, T);
  }
  return out;
}

void save_trajectory_tum(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_trajectory_tum: cannot open " + path);
  out << "# timestamp tx ty tz qx qy qz qw\n";
  out.precision(12);
  for (const StampedPose& p : traj.poses) {
    const Eigen::Quaterniond q(p.T_w_c.R);
    out << p.t << " " << p.T_w_c.t.x() << " " << p.T_w_c.t.y() << " " << p.T_w_c.t.z() << " "
        << q.x() << " " << q.y() << " " << q.z() << " " << q.w() << "\n";
  }
}

std::vector<std::pair<size_t, size_t>> associate(const Trajectory& est, const Trajectory& ref,
                                                 double max_dt) {
  std::vector<std::pair<size_t, size_t>> pairs;
  size_t j = 0;
  for (size_t i = 0; i < est.poses.size(); ++i) {
    const double t = est.poses[i].t;
    while (j + 1 < ref.poses.size() &&
           std::abs(ref.poses[j + 1].t - t) <= std::abs(ref.poses[j].t - t))
      ++j;
    if (j < ref.poses.size() && std::abs(ref.poses[j].t - t) <= max_dt) pairs.emplace_back(i, j);
  }
  return pairs;
}

Alignment align(const Trajectory& est, const Trajectory& ref, bool with_scale, double max_dt) {
  const auto pairs = associate(est, ref, max_dt);
  if (pairs.size() < 3) throw std::runtime_error("align: fewer than 3 associated pose pairs");
  const size_t n = pairs.size();
  Vec3 mu_x = Vec3::Zero(), mu_y = Vec3::Zero();
  for (const auto& [i, j] : pairs) {
    mu_x += est.poses[i].T_w_c.t;
    mu_y += ref.poses[j].T_w_c.t;
  }
  mu_x /= static_cast<double>(n);
  mu_y /= static_cast<double>(n);

  Mat3 Sigma = Mat3::Zero();
  double var_x = 0.0;
  for (const auto& [i, j] : pairs) {
    const Vec3 dx = est.poses[i].T_w_c.t - mu_x;
    const Vec3 dy = ref.poses[j].T_w_c.t - mu_y;
    Sigma += dy * dx.transpose();
    var_x += dx.squaredNorm();
  }
  Sigma /= static_cast<double>(n);
  var_x /= static_cast<double>(n);

  Eigen::JacobiSVD<Mat3> svd(Sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 d = svd.singularValues();
  // Collinear positions: the rotation about the line is unobservable.
  if (d(1) < 1e-9 * std::max(d(0), 1e-300))
    throw std::runtime_error("align: degenerate (collinear) trajectory");
  Mat3 S = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) S(2, 2) = -1.0;

  Alignment out;
  out.T.R = svd.matrixU() * S * svd.matrixV().transpose();
  out.scale = with_scale ? (d.head<3>().dot(S.diagonal())) / var_x : 1.0;
  out.T.t = mu_y - out.scale * (out.T.R * mu_x);
  return out;
}

Trajectory apply_alignment(const Trajectory& est, const Alignment& a) {
  Trajectory out;
  for (const StampedPose& p : est.poses) {
    Pose T;
    T.R = a.T.R * p.T_w_c.R;
    T.t = a.scale * (a.T.R * p.T_w_c.t) + a.T.t;
    out.push(p.t, T);
  }
  return out;
}

double ate_rmse(const Trajectory& est, const Trajectory& ref, double max_dt) {
  const auto pairs = associate(est, ref, max_dt);
  if (pairs.empty()) throw std::runtime_error("ate_rmse: empty association");
  double sq = 0.0;
  for (const auto& [i, j] : pairs)
    sq += (est.poses[i].T_w_c.t - ref.poses[j].T_w_c.t).squaredNorm();
  return std::sqrt(sq / static_cast<double>(pairs.size()));
}

double rpe_translation(const Trajectory& est, const Trajectory& ref, double segment_length,
                       double max_dt) {
  const auto pairs = associate(est, ref, max_dt);
  if (pairs.size() < 2) throw std::runtime_error("rpe: not enough associated pairs");

  // Accumulated reference path length over associated poses.
  std::vector<double> arc(pairs.size(), 0.0);
  for (size_t k = 1; k < pairs.size(); ++k)
    arc[k] = arc[k - 1] + (ref.poses[pairs[k].second].T_w_c.t -
                           ref.poses[pairs[k - 1].second].T_w_c.t)
                              .norm();

  double sq = 0.0;
  size_t n = 0;
  size_t end = 0;
  for (size_t start = 0; start < pairs.size(); ++start) {
    if (end < start) end = start;
    while (end < pairs.size() && arc[end] - arc[start] < segment_length) ++end;
    if (end >= pairs.size()) break;
    const auto& [ei, ri] = pairs[start];
    const auto& [ej, rj] = pairs[end];
    const Pose rel_ref = ref.poses[ri].T_w_c.inverse() * ref.poses[rj].T_w_c;
    const Pose rel_est = est.poses[ei].T_w_c.inverse() * est.poses[ej].T_w_c;
    const Pose err = rel_ref.inverse() * rel_est;
    sq += err.t.squaredNorm();
    ++n;
  }
  if (n == 0) throw std::runtime_error("rpe: no full segment of the requested length");
  return std::sqrt(sq / static_cast<double>(n));
}

}  // namespace dsl
