#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "dsl/window.hpp"

namespace dsl {

const KeyFrame* WindowState::find_kf(int id) const {
  for (const auto& kf : keyframes)
    if (kf.id == id) return &kf;
  return nullptr;
}

KeyFrame* WindowState::find_kf(int id) {
  for (auto& kf : keyframes)
    if (kf.id == id) return &kf;
  return nullptr;
}

int WindowState::kf_index(int id) const {
  for (size_t i = 0; i < keyframes.size(); ++i)
    if (keyframes[i].id == id) return static_cast<int>(i);
  return -1;
}

bool WindowState::has_surfel_constraints() const {
  for (const auto& p : points)
    if (p.status == PointStatus::kAssociated) return true;
  return false;
}

WindowEval evaluate_window(const WindowState& w, bool with_jacobians, const WindowConfig& cfg) {
  WindowEval out;
  for (size_t pi = 0; pi < w.points.size(); ++pi) {
    const TrackedPoint& pt = w.points[pi];
    if (!pt.in_optimization()) continue;
    const KeyFrame* host = w.find_kf(pt.host_kf);
    if (!host) continue;
    for (const KeyFrame& target : w.keyframes) {
      if (target.id == pt.host_kf) continue;
      if (pt.dead_targets.count(target.id)) continue;
      ResidualBlock block;
      block.host_id = pt.host_kf;
      block.target_id = target.id;
      block.point_id = static_cast<int>(pi);
      bool ok = false;
      if (pt.status == PointStatus::kAssociated) {
        ok = residual_surfel(host->state, target.state, w.K, pt.pixel, pt.plane_w, block,
                             with_jacobians, cfg.photo);
      } else {
        ok = residual_nonsurfel(host->state, target.state, w.K, pt.pixel, pt.idepth, block,
                                with_jacobians, cfg.photo);
      }
      if (!ok) continue;  // dropped this iteration
      if (block.surfel) {
        out.energy_surfel += block.energy;
        ++out.n_surfel;
      } else {
        out.energy_non += block.energy;
        ++out.n_non;
      }
      out.blocks.push_back(std::move(block));
    }
  }
  return out;
}

namespace {

// Quadratic pull on the affine parameters of every frame: removes the
// two-parameter brightness gauge of Eq. 2.
double affine_prior_energy(const WindowState& w, const WindowConfig& cfg) {
  double e = 0;
  for (const auto& kf : w.keyframes)
    e += cfg.affine_prior_a * kf.state.a * kf.state.a +
         cfg.affine_prior_b * kf.state.b * kf.state.b;
  return e;
}

double prior_energy(const WindowState& w) {
  if (w.prior.empty()) return 0.0;
  VecX delta = VecX::Zero(w.prior.dim());
  for (size_t i = 0; i < w.prior.kf_ids.size(); ++i) {
    const KeyFrame* kf = w.find_kf(w.prior.kf_ids[i]);
    if (!kf) throw std::logic_error("prior references a keyframe not in the window");
    delta.segment<8>(8 * static_cast<int>(i)) = kf->fej_delta();
  }
  return delta.dot(w.prior.H * delta) + 2.0 * w.prior.b.dot(delta);
}

double total_energy(const WindowState& w, const WindowEval& eval, const WindowConfig& cfg) {
  return eval.energy_surfel + eval.energy_non + prior_energy(w) + affine_prior_energy(w, cfg);
}

// True when the visual-only gauge must be fixed by freezing the first
// keyframe: no surfel constraint and no prior anchoring the window.
bool need_gauge_fix(const WindowState& w, int n_surfel_blocks) {
  return n_surfel_blocks == 0 && w.prior.empty();
}

void apply_gauge_fix(MatX& Hff, VecX& bf, int frame_index) {
  const int off = 8 * frame_index;
  for (int k = 0; k < 8; ++k) {
    Hff.row(off + k).setZero();
    Hff.col(off + k).setZero();
    Hff(off + k, off + k) = 1.0;
    bf(off + k) = 0.0;
  }
}

}  // namespace

NormalEquations build_normal_equations(const WindowState& w, const WindowConfig& cfg) {
  if (w.keyframes.size() < 2)
    throw std::invalid_argument("build_normal_equations: window needs at least 2 keyframes");
  NormalEquations ne;
  ne.num_frames = static_cast<int>(w.keyframes.size());
  const int F8 = 8 * ne.num_frames;

  const WindowEval eval = evaluate_window(w, true, cfg);
  ne.energy_surfel = eval.energy_surfel;
  ne.energy_non = eval.energy_non;
  ne.n_residuals = static_cast<int>(eval.blocks.size());

  // Depth columns: active non-surfel points with at least one valid block.
  std::map<int, int> depth_col;  // point index -> column
  for (const auto& blk : eval.blocks) {
    if (blk.surfel) continue;
    if (!depth_col.count(blk.point_id)) {
      const int col = static_cast<int>(depth_col.size());
      depth_col[blk.point_id] = col;
    }
  }
  ne.num_depths = static_cast<int>(depth_col.size());
  ne.depth_point.resize(ne.num_depths);
  for (const auto& [pi, col] : depth_col) ne.depth_point[col] = pi;

  ne.Hff = MatX::Zero(F8, F8);
  ne.bf = VecX::Zero(F8);
  ne.Hfd = MatX::Zero(F8, ne.num_depths);
  ne.Hdd = VecX::Zero(ne.num_depths);
  ne.bd = VecX::Zero(ne.num_depths);

  for (const auto& blk : eval.blocks) {
    const int hi = 8 * w.kf_index(blk.host_id);
    const int ti = 8 * w.kf_index(blk.target_id);
    for (int r = 0; r < kPatchSize; ++r) {
      const double wgt = blk.weight(r);
      if (wgt <= 0) continue;
      const Vec8 jh = blk.J_host.row(r);
      const Vec8 jt = blk.J_target.row(r);
      const double res = blk.residual(r);
      ne.Hff.block<8, 8>(hi, hi) += wgt * jh * jh.transpose();
      ne.Hff.block<8, 8>(ti, ti) += wgt * jt * jt.transpose();
      ne.Hff.block<8, 8>(hi, ti) += wgt * jh * jt.transpose();
      ne.Hff.block<8, 8>(ti, hi) += wgt * jt * jh.transpose();
      ne.bf.segment<8>(hi) += wgt * jh * res;
      ne.bf.segment<8>(ti) += wgt * jt * res;
      if (!blk.surfel) {
        // Surfel blocks never enter the inverse-depth elimination set.
        const int col = depth_col.at(blk.point_id);
        const double jd = blk.J_idepth(r);
        ne.Hdd(col) += wgt * jd * jd;
        ne.Hfd.col(col).segment<8>(hi) += wgt * jh * jd;
        ne.Hfd.col(col).segment<8>(ti) += wgt * jt * jd;
        ne.bd(col) += wgt * jd * res;
      }
    }
  }

  // Affine pull.
  for (int f = 0; f < ne.num_frames; ++f) {
    ne.Hff(8 * f + 6, 8 * f + 6) += cfg.affine_prior_a;
    ne.Hff(8 * f + 7, 8 * f + 7) += cfg.affine_prior_b;
    ne.bf(8 * f + 6) += cfg.affine_prior_a * w.keyframes[f].state.a;
    ne.bf(8 * f + 7) += cfg.affine_prior_b * w.keyframes[f].state.b;
  }

  // Marginalization prior, expanded at first-estimate states.
  if (!w.prior.empty()) {
    VecX delta = VecX::Zero(w.prior.dim());
    std::vector<int> offs(w.prior.kf_ids.size());
    for (size_t i = 0; i < w.prior.kf_ids.size(); ++i) {
      const int idx = w.kf_index(w.prior.kf_ids[i]);
      if (idx < 0) throw std::logic_error("prior references a keyframe not in the window");
      offs[i] = 8 * idx;
      delta.segment<8>(8 * static_cast<int>(i)) = w.keyframes[idx].fej_delta();
    }
    const VecX grad = w.prior.b + w.prior.H * delta;
    for (size_t i = 0; i < offs.size(); ++i) {
      ne.bf.segment<8>(offs[i]) += grad.segment<8>(8 * static_cast<int>(i));
      for (size_t j = 0; j < offs.size(); ++j)
        ne.Hff.block<8, 8>(offs[i], offs[j]) +=
            w.prior.H.block<8, 8>(8 * static_cast<int>(i), 8 * static_cast<int>(j));
    }
    ne.energy_prior = delta.dot(w.prior.H * delta) + 2.0 * w.prior.b.dot(delta);
  }

  if (cfg.fix_gauge && need_gauge_fix(w, eval.n_surfel)) apply_gauge_fix(ne.Hff, ne.bf, 0);
  return ne;
}

MatX NormalEquations::dense_H() const {
  MatX H = MatX::Zero(dim(), dim());
  const int F8 = 8 * num_frames;
  H.topLeftCorner(F8, F8) = Hff;
  H.topRightCorner(F8, num_depths) = Hfd;
  H.bottomLeftCorner(num_depths, F8) = Hfd.transpose();
  H.bottomRightCorner(num_depths, num_depths) = Hdd.asDiagonal();
  return H;
}

VecX NormalEquations::dense_b() const {
  VecX b(dim());
  b.head(8 * num_frames) = bf;
  b.tail(num_depths) = bd;
  return b;
}

// Damped Schur solve: eliminate depths, solve frames, back-substitute.
StepResult solve_gauss_newton_step(const NormalEquations& ne, double lambda) {
  StepResult s;
  const int F8 = 8 * ne.num_frames;
  MatX Hff = ne.Hff;
  VecX bf = ne.bf;
  VecX Hdd = ne.Hdd;
  for (int i = 0; i < F8; ++i) Hff(i, i) += lambda * std::max(Hff(i, i), 1e-10);
  for (int j = 0; j < ne.num_depths; ++j) Hdd(j) += lambda * std::max(Hdd(j), 1e-10);

  // Schur complement onto the frame block.
  for (int j = 0; j < ne.num_depths; ++j) {
    if (Hdd(j) <= 1e-14) return s;  // depth with no usable information
    const VecX col = ne.Hfd.col(j);
    Hff.noalias() -= col * (col.transpose() / Hdd(j));
    bf.noalias() -= col * (ne.bd(j) / Hdd(j));
  }

  Eigen::LDLT<MatX> ldlt(Hff);
  if (ldlt.info() != Eigen::Success) return s;
  const VecX dx_f = ldlt.solve(-bf);
  if (!dx_f.allFinite()) return s;
  // Reject indefinite reduced systems (negative curvature directions).
  if (ldlt.vectorD().minCoeff() < -1e-9 * std::abs(ldlt.vectorD().maxCoeff())) return s;

  VecX dx_d(ne.num_depths);
  for (int j = 0; j < ne.num_depths; ++j)
    dx_d(j) = -(ne.bd(j) + ne.Hfd.col(j).dot(dx_f)) / Hdd(j);

  s.ok = true;
  s.frame_step = dx_f;
  s.depth_step = dx_d;
  s.norm = std::sqrt(dx_f.squaredNorm() + dx_d.squaredNorm());
  return s;
}

namespace {

void apply_step(WindowState& w, const NormalEquations& ne, const StepResult& s) {
  for (int f = 0; f < ne.num_frames; ++f) {
    KeyFrame& kf = w.keyframes[f];
    const Vec6 xi = s.frame_step.segment<6>(8 * f);
    kf.state.T_w_c = pose_boxplus(kf.state.T_w_c, xi);
    kf.state.a += s.frame_step(8 * f + 6);
    kf.state.b += s.frame_step(8 * f + 7);
  }
  for (int j = 0; j < ne.num_depths; ++j) {
    TrackedPoint& pt = w.points[ne.depth_point[j]];
    pt.idepth = std::clamp(pt.idepth + s.depth_step(j), 1e-5, 1e4);
  }
}

// Snapshot of the mutable optimization variables, cheap to restore when a
// trial step is rejected (keyframe images are left alone).
struct StateSnapshot {
  struct FrameVars {
    Pose T_w_c;
    double a, b;
  };
  std::vector<FrameVars> frames;
  std::vector<std::pair<int, double>> depths;  // (point index, idepth)

  static StateSnapshot take(const WindowState& w, const NormalEquations& ne) {
    StateSnapshot s;
    s.frames.reserve(w.keyframes.size());
    for (const auto& kf : w.keyframes) s.frames.push_back({kf.state.T_w_c, kf.state.a, kf.state.b});
    s.depths.reserve(ne.depth_point.size());
    for (int pi : ne.depth_point) s.depths.emplace_back(pi, w.points[pi].idepth);
    return s;
  }

  void restore(WindowState& w) const {
    for (size_t f = 0; f < frames.size(); ++f) {
      w.keyframes[f].state.T_w_c = frames[f].T_w_c;
      w.keyframes[f].state.a = frames[f].a;
      w.keyframes[f].state.b = frames[f].b;
    }
    for (const auto& [pi, id] : depths) w.points[pi].idepth = id;
  }
};

}  // namespace

SolveReport solve_window(WindowState& w, const WindowConfig& cfg) {
  SolveReport report;
  std::ofstream csv;
  if (!cfg.iteration_csv.empty()) {
    csv.open(cfg.iteration_csv, std::ios::app);
    if (!csv) throw std::runtime_error("solve_window: cannot open " + cfg.iteration_csv);
  }

  WindowEval eval = evaluate_window(w, false, cfg);
  double energy = total_energy(w, eval, cfg);
  if (!std::isfinite(energy))
    throw std::runtime_error("solve_window: non-finite energy at the initial state");
  report.initial_energy = energy;
  report.final_energy = energy;

  double lambda = cfg.lm_init;
  double last_energy = energy;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    ++report.iterations;
    const NormalEquations ne = build_normal_equations(w, cfg);

    bool accepted = false;
    double step_norm = 0.0;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      const StepResult step = solve_gauss_newton_step(ne, lambda);
      if (!step.ok) {
        lambda *= cfg.lm_up;
        continue;
      }
      const StateSnapshot backup = StateSnapshot::take(w, ne);
      apply_step(w, ne, step);
      const WindowEval trial = evaluate_window(w, false, cfg);
      const double trial_energy = total_energy(w, trial, cfg);
      if (std::isfinite(trial_energy) && trial_energy <= energy) {
        accepted = true;
        step_norm = step.norm;
        energy = trial_energy;
        lambda = std::max(lambda * cfg.lm_down, 1e-12);
        ++report.accepted_steps;
      } else {
        backup.restore(w);
        lambda *= cfg.lm_up;
        if (lambda > 1e14) break;
      }
    }
    if (csv.is_open()) {
      const WindowEval cur = evaluate_window(w, false, cfg);
      csv << iter << "," << cur.energy_surfel << "," << cur.energy_non << "," << lambda << ","
          << step_norm << "\n";
    }
    if (!accepted) break;
    if (energy > last_energy + 1e-12)
      throw std::logic_error("solve_window: energy increased on an accepted step");
    const double rel_decrease = (last_energy - energy) / std::max(last_energy, 1e-300);
    last_energy = energy;
    if (step_norm < cfg.step_tol || rel_decrease < cfg.energy_tol) {
      report.converged = true;
      break;
    }
  }
  report.final_energy = energy;

  // Outlier cut: residual blocks whose mean |r| stays beyond the Huber
  // band after convergence are removed from future iterations.
  const double cut = cfg.outlier_energy_factor * cfg.photo.huber;
  const WindowEval final_eval = evaluate_window(w, false, cfg);
  for (const auto& blk : final_eval.blocks) {
    if (blk.residual.cwiseAbs().mean() > cut)
      w.points[blk.point_id].dead_targets.insert(blk.target_id);
  }
  for (auto& pt : w.points) {
    if (!pt.in_optimization()) continue;
    if (static_cast<int>(pt.dead_targets.size()) >= static_cast<int>(w.keyframes.size()) - 1)
      pt.status = PointStatus::kOutlier;
  }
  return report;
}

void schur_marginalize(const MatX& H, const VecX& b, const std::vector<int>& keep,
                       const std::vector<int>& elim, MatX& H_out, VecX& b_out) {
  const int nk = static_cast<int>(keep.size());
  const int ne = static_cast<int>(elim.size());
  MatX Hkk(nk, nk), Hke(nk, ne), Hee(ne, ne);
  VecX bk(nk), be(ne);
  for (int i = 0; i < nk; ++i) {
    bk(i) = b(keep[i]);
    for (int j = 0; j < nk; ++j) Hkk(i, j) = H(keep[i], keep[j]);
    for (int j = 0; j < ne; ++j) Hke(i, j) = H(keep[i], elim[j]);
  }
  for (int i = 0; i < ne; ++i) {
    be(i) = b(elim[i]);
    for (int j = 0; j < ne; ++j) Hee(i, j) = H(elim[i], elim[j]);
  }

  Eigen::LDLT<MatX> ldlt(Hee);
  bool singular = ldlt.info() != Eigen::Success;
  if (!singular && ne > 0) {
    const double dmax = ldlt.vectorD().cwiseAbs().maxCoeff();
    if (ldlt.vectorD().minCoeff() < 1e-12 * std::max(dmax, 1.0)) singular = true;
  }
  if (singular) {
    Hee += 1e-9 * MatX::Identity(ne, ne);
    ldlt.compute(Hee);
  }
  if (ne == 0) {
    H_out = Hkk;
    b_out = bk;
    return;
  }
  const MatX HeeInv_Hek = ldlt.solve(Hke.transpose());
  const VecX HeeInv_be = ldlt.solve(be);
  H_out = Hkk - Hke * HeeInv_Hek;
  b_out = bk - Hke * HeeInv_be;
  H_out = 0.5 * (H_out + H_out.transpose());  // keep it exactly symmetric
}

void marginalize_frame(WindowState& w, int kf_id, const WindowConfig& cfg) {
  const int f_idx = w.kf_index(kf_id);
  if (f_idx < 0) throw std::invalid_argument("marginalize_frame: unknown keyframe id");

  // Blocks that will be folded: everything touching the frame except
  // residuals of live non-surfel points hosted elsewhere (those lose this
  // observation instead of entangling live depths with the prior).
  const WindowEval eval = evaluate_window(w, false, cfg);
  const bool any_surfel = eval.n_surfel > 0;

  // Decide the fate of non-surfel points hosted in the dying frame.
  std::map<int, int> host_obs_count;  // point index -> #blocks
  for (const auto& blk : eval.blocks)
    if (blk.host_id == kf_id && !blk.surfel) host_obs_count[blk.point_id]++;

  std::map<int, int> depth_col;  // point index -> eliminated depth column
  for (const auto& [pi, count] : host_obs_count) {
    if (count >= cfg.marg_point_min_obs) {
      const int col = static_cast<int>(depth_col.size());
      depth_col[pi] = col;
    }
  }
  const int n_depths = static_cast<int>(depth_col.size());

  // First estimates: every frame that appears in a folded residual.
  for (auto& kf : w.keyframes) {
    bool touched = kf.id == kf_id;
    for (const auto& blk : eval.blocks) {
      if (blk.host_id != kf_id && blk.target_id != kf_id) continue;
      if (blk.host_id == kf.id || blk.target_id == kf.id) touched = true;
    }
    if (touched) kf.set_fej();
  }

  // Evaluate folded residuals at the first-estimate states.
  WindowState fej_window = w;
  for (auto& kf : fej_window.keyframes) {
    if (!kf.has_fej) continue;
    kf.state.T_w_c = kf.fej_T_w_c;
    kf.state.a = kf.fej_a;
    kf.state.b = kf.fej_b;
  }
  const WindowEval fej_eval = evaluate_window(fej_window, true, cfg);

  const int F = static_cast<int>(w.keyframes.size());
  const int dim = 8 * F + n_depths;
  MatX H = MatX::Zero(dim, dim);
  VecX b = VecX::Zero(dim);

  auto fold_rank1 = [&](int off_a, const Vec8& ja, int off_b, const Vec8& jb, double wgt) {
    H.block<8, 8>(off_a, off_b) += wgt * ja * jb.transpose();
  };

  int n_folded = 0;
  for (const auto& blk : fej_eval.blocks) {
    const bool touches = blk.host_id == kf_id || blk.target_id == kf_id;
    if (!touches) continue;
    const bool hosted_here = blk.host_id == kf_id;
    int col = -1;
    if (!blk.surfel) {
      if (hosted_here) {
        auto it = depth_col.find(blk.point_id);
        if (it == depth_col.end()) continue;  // dropped point
        col = it->second;
      } else {
        continue;  // live point targeting the dying frame: observation dropped
      }
    }
    const int hi = 8 * w.kf_index(blk.host_id);
    const int ti = 8 * w.kf_index(blk.target_id);
    ++n_folded;
    for (int r = 0; r < kPatchSize; ++r) {
      const double wgt = blk.weight(r);
      if (wgt <= 0) continue;
      const Vec8 jh = blk.J_host.row(r);
      const Vec8 jt = blk.J_target.row(r);
      const double res = blk.residual(r);
      fold_rank1(hi, jh, hi, jh, wgt);
      fold_rank1(ti, jt, ti, jt, wgt);
      fold_rank1(hi, jh, ti, jt, wgt);
      fold_rank1(ti, jt, hi, jh, wgt);
      b.segment<8>(hi) += wgt * jh * res;
      b.segment<8>(ti) += wgt * jt * res;
      if (col >= 0) {
        const double jd = blk.J_idepth(r);
        const int dof = 8 * F + col;
        H(dof, dof) += wgt * jd * jd;
        H.block<8, 1>(hi, dof) += wgt * jh * jd;
        H.block<8, 1>(ti, dof) += wgt * jt * jd;
        H.block<1, 8>(dof, hi) += wgt * jd * jh.transpose();
        H.block<1, 8>(dof, ti) += wgt * jd * jt.transpose();
        b(dof) += wgt * jd * res;
      }
    }
  }

  // Existing prior lives in the same first-estimate coordinates.
  if (!w.prior.empty()) {
    for (size_t i = 0; i < w.prior.kf_ids.size(); ++i) {
      const int oi = 8 * w.kf_index(w.prior.kf_ids[i]);
      if (oi < 0) throw std::logic_error("marginalize_frame: prior frame missing");
      b.segment<8>(oi) += w.prior.b.segment<8>(8 * static_cast<int>(i));
      for (size_t j = 0; j < w.prior.kf_ids.size(); ++j) {
        const int oj = 8 * w.kf_index(w.prior.kf_ids[j]);
        H.block<8, 8>(oi, oj) +=
            w.prior.H.block<8, 8>(8 * static_cast<int>(i), 8 * static_cast<int>(j));
      }
    }
  }

  // Keep the visual-only gauge anchored once the information moves into
  // the prior: pin the dying frame at its first estimate.
  if (!any_surfel && w.prior.empty() && cfg.gauge_anchor_weight > 0) {
    for (int k = 0; k < 8; ++k)
      H(8 * f_idx + k, 8 * f_idx + k) += cfg.gauge_anchor_weight;
  }

  // Nothing touched the frame and no prior: the prior is unchanged.
  if (n_folded == 0 && w.prior.empty()) {
    w.keyframes.erase(w.keyframes.begin() + f_idx);
    std::erase_if(w.points, [&](const TrackedPoint& p) { return p.host_kf == kf_id; });
    return;
  }

  std::vector<int> keep, elim;
  for (int f = 0; f < F; ++f) {
    if (f == f_idx) continue;
    for (int k = 0; k < 8; ++k) keep.push_back(8 * f + k);
  }
  for (int k = 0; k < 8; ++k) elim.push_back(8 * f_idx + k);
  for (int j = 0; j < n_depths; ++j) elim.push_back(8 * F + j);

  MargPrior next;
  for (const auto& kf : w.keyframes)
    if (kf.id != kf_id) next.kf_ids.push_back(kf.id);
  schur_marginalize(H, b, keep, elim, next.H, next.b);
  w.prior = std::move(next);

  w.keyframes.erase(w.keyframes.begin() + f_idx);
  std::erase_if(w.points, [&](const TrackedPoint& p) { return p.host_kf == kf_id; });
  for (auto& p : w.points) p.dead_targets.erase(kf_id);
}

}  // namespace dsl
