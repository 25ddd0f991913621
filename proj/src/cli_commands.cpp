#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "dsl/cli_commands.hpp"
#include "dsl/degeneracy.hpp"
#include "dsl/localizer.hpp"
#include "dsl/renderer.hpp"
#include "dsl/synthworld.hpp"

namespace dsl {

namespace fs = std::filesystem;

int cmd_build_map(const BuildMapArgs& args) {
  if (!fs::exists(args.input_ply)) {
    std::cerr << "build-map: input not found: " << args.input_ply << "\n";
    return kExitUsage;
  }
  try {
    const std::vector<Vec3> cloud = load_point_cloud_ply(args.input_ply);
    SurfelMapParams params;
    params.voxel = args.voxel;
    params.k_neighbors = args.k_neighbors;
    const SurfelMap map = build_surfel_map(cloud, params);
    save_map(map, args.output_ply);
    std::cout << "build-map: " << cloud.size() << " points -> " << map.size()
              << " surfels, radius " << (map.surfels.empty() ? 0.0 : map.surfels.front().radius)
              << " m\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "build-map: " << e.what() << "\n";
    return kExitAlgorithm;
  }
}

int cmd_simulate(const SimulateArgs& args) {
  try {
    const Scene scene = make_scene(make_preset(args.preset, args.frames, args.seed));
    SurfelMap map = sample_surfel_map(scene, args.voxel);
    if (args.keep_fraction < 1.0) {
      std::mt19937_64 gen(args.seed ^ 0x5eedu);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      SurfelMap kept;
      kept.voxel_size = map.voxel_size;
      for (const Surfel& s : map.surfels)
        if (u(gen) < args.keep_fraction) kept.surfels.push_back(s);
      map = std::move(kept);
    }
    if (args.noise_sigma > 0.0) map = perturb_map(map, args.noise_sigma, args.seed, args.pca_k);
    emit_sequence(scene, map, args.out_dir);
    std::cout << "simulate: " << args.preset << ", " << args.frames << " frames, "
              << map.size() << " surfels -> " << args.out_dir << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "simulate: " << e.what() << "\n";
    return kExitAlgorithm;
  }
}

CameraIntrinsics load_calib(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open calib file " + path);
  double fx, fy, cx, cy;
  int w, h;
  if (!(in >> fx >> fy >> cx >> cy >> w >> h))
    throw std::runtime_error("malformed calib file " + path);
  return CameraIntrinsics(fx, fy, cx, cy, w, h);
}

Sequence load_sequence(const std::string& dir) {
  Sequence seq;
  seq.dir = dir;
  const fs::path index_path = fs::path(dir) / "index.txt";
  std::ifstream in(index_path);
  if (!in) throw std::runtime_error("cannot open " + index_path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SequenceFrame f;
    if (!(ls >> f.frame_id >> f.timestamp >> f.exposure >> f.a >> f.b))
      throw std::runtime_error("malformed index line in " + index_path.string());
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%06d.pgm", f.frame_id);
    f.image_path = (fs::path(dir) / name).string();
    seq.frames.push_back(f);
  }
  seq.K = load_calib((fs::path(dir) / "calib.txt").string());
  return seq;
}

Pose parse_pose_string(const std::string& text) {
  std::istringstream ls(text);
  double tx, ty, tz, qx, qy, qz, qw;
  if (!(ls >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
    throw std::invalid_argument("pose must be 'tx ty tz qx qy qz qw'");
  Pose T;
  T.R = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
  T.t = Vec3(tx, ty, tz);
  return T;
}

namespace {

void write_diagnostics(const Localizer& loc, const std::string& prefix) {
  std::ofstream csv(prefix + "_constraints.csv");
  csv << "kf_id,frame_id,timestamp,n_surfel,n_nonsurfel,ratio,classification,nullspace_dim,"
         "e1,e2,e3\n";
  std::ofstream rep(prefix + "_degeneracy.txt");
  for (const KeyframeDiagnostics& d : loc.diagnostics()) {
    csv << d.kf_id << "," << d.frame_id << "," << d.timestamp << "," << d.n_surfel_blocks << ","
        << d.n_nonsurfel_blocks << "," << d.constraint_ratio << ","
        << (d.degeneracy.pure_visual ? "PureVisual" : to_string(d.degeneracy.classification))
        << "," << d.degeneracy.nullspace_dim << "," << d.degeneracy.scatter_eigs(0) << ","
        << d.degeneracy.scatter_eigs(1) << "," << d.degeneracy.scatter_eigs(2) << "\n";
    rep << "kf_id=" << d.kf_id << "\n" << serialize(d.degeneracy) << "\n";
  }
}

}  // namespace

int cmd_localize(const LocalizeArgs& args) {
  if (!fs::exists(args.map_ply)) {
    std::cerr << "localize: map not found: " << args.map_ply << "\n";
    return kExitUsage;
  }
  if (!fs::exists(fs::path(args.sequence_dir) / "index.txt")) {
    std::cerr << "localize: no index.txt in " << args.sequence_dir << "\n";
    return kExitUsage;
  }
  RunConfig cfg;
  try {
    if (!args.config_file.empty()) cfg.load_file(args.config_file);
    for (const auto& [k, v] : args.overrides) cfg.set(k, v);
  } catch (const std::exception& e) {
    std::cerr << "localize: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const Sequence seq = load_sequence(args.sequence_dir);
    if (seq.frames.empty()) throw std::runtime_error("empty sequence");
    const SurfelMap map = load_map(args.map_ply);

    Pose init;
    if (!args.init_pose.empty()) {
      init = parse_pose_string(args.init_pose);
    } else {
      const Trajectory gt =
          load_trajectory_tum((fs::path(args.sequence_dir) / "groundtruth.txt").string());
      if (gt.empty()) throw std::runtime_error("no ground truth to take the initial pose from");
      init = gt.poses.front().T_w_c;
    }
    // Optional perturbation of the provided initial pose (robustness runs).
    const double p_m = cfg.init_perturb_trans();
    const double p_deg = cfg.init_perturb_deg();
    if (p_m > 0 || p_deg > 0) {
      std::mt19937_64 gen(cfg.seed());
      std::normal_distribution<double> n(0, 1);
      Vec3 dt(n(gen), n(gen), n(gen));
      Vec3 dr(n(gen), n(gen), n(gen));
      if (dt.norm() > 1e-12) dt = dt.normalized() * p_m;
      if (dr.norm() > 1e-12) dr = dr.normalized() * (p_deg * M_PI / 180.0);
      init.t += dt;
      init.R = so3_exp<double>(dr) * init.R;
    }

    Localizer loc(map, seq.K, cfg);
    for (size_t i = 0; i < seq.frames.size(); ++i) {
      const SequenceFrame& f = seq.frames[i];
      Image img;
      try {
        img = load_pgm(f.image_path);
      } catch (const std::exception& e) {
        std::cerr << "localize: frame " << f.frame_id << ": " << e.what() << "\n";
        return kExitAlgorithm;
      }
      if (i == 0) {
        loc.init(img, f.timestamp, f.exposure, init);
        continue;
      }
      const auto res = loc.process(img, f.timestamp, f.exposure);
      if (!res.tracked) {
        std::cerr << "localize: tracking lost at frame " << f.frame_id << ": " << res.failure
                  << "\n";
        return kExitAlgorithm;
      }
    }
    save_trajectory_tum(loc.trajectory(), args.out_trajectory);
    if (!args.diagnostics_prefix.empty()) write_diagnostics(loc, args.diagnostics_prefix);
    std::cout << "localize: " << seq.frames.size() << " frames, "
              << loc.diagnostics().size() << " keyframes -> " << args.out_trajectory << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "localize: " << e.what() << "\n";
    return kExitAlgorithm;
  }
}

int cmd_eval(const EvalArgs& args) {
  if (!fs::exists(args.est_trajectory) || !fs::exists(args.gt_trajectory)) {
    std::cerr << "eval: trajectory file not found\n";
    return kExitUsage;
  }
  try {
    const Trajectory est = load_trajectory_tum(args.est_trajectory);
    const Trajectory gt = load_trajectory_tum(args.gt_trajectory);
    const Alignment a = align(est, gt, args.align_scale);
    const Trajectory aligned = apply_alignment(est, a);
    const double ate = ate_rmse(aligned, gt);
    const size_t n = associate(est, gt).size();

    std::ofstream csv(args.out_csv);
    if (!csv) throw std::runtime_error("cannot open " + args.out_csv);
    csv << "metric,value,count\n";
    csv.precision(9);
    csv << "ate_rmse," << ate << "," << n << "\n";
    csv << "align_scale," << a.scale << "," << n << "\n";
    for (double L : args.segment_lengths) {
      const double r = rpe_translation(est, gt, L);
      csv << "rpe_trans_rmse_" << L << "m," << r << "," << n << "\n";
    }
    std::cout << "eval: ate_rmse=" << ate << " scale=" << a.scale << " -> " << args.out_csv
              << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "eval: " << e.what() << "\n";
    return kExitAlgorithm;
  }
}

int cmd_degen_report(const DegenReportArgs& args) {
  if (!fs::exists(args.map_ply) || !fs::exists(args.trajectory)) {
    std::cerr << "degen-report: input not found\n";
    return kExitUsage;
  }
  try {
    const SurfelMap map = load_map(args.map_ply);
    const Trajectory traj = load_trajectory_tum(args.trajectory);
    CameraIntrinsics K(250, 250, 159.5, 119.5, 320, 240);
    if (!args.calib.empty()) {
      std::istringstream ls(args.calib);
      double fx, fy, cx, cy;
      int w, h;
      if (!(ls >> fx >> fy >> cx >> cy >> w >> h))
        throw std::invalid_argument("calib must be 'fx fy cx cy width height'");
      K = CameraIntrinsics(fx, fy, cx, cy, w, h);
    }

    // Sample surfel constraints along the trajectory from rendered maps.
    std::vector<Pose> poses;
    std::vector<SurfelConstraint> constraints;
    const size_t stride = std::max<size_t>(1, traj.size() / 24);
    for (size_t i = 0; i < traj.size(); i += stride) {
      const Pose& T = traj.poses[i].T_w_c;
      const int host = static_cast<int>(poses.size());
      poses.push_back(T);
      const RenderedMaps maps = render(map, T, K);
      for (int y = args.pixel_stride / 2; y < K.height; y += args.pixel_stride)
        for (int x = args.pixel_stride / 2; x < K.width; x += args.pixel_stride) {
          const auto plane = plane_at(maps, x, y);
          if (!plane) continue;
          constraints.push_back({*plane, host, Vec2(x, y)});
        }
    }
    const DegeneracyReport rep = analyze_constraints(constraints, poses, K);
    std::ofstream out(args.out_report);
    if (!out) throw std::runtime_error("cannot open " + args.out_report);
    out << serialize(rep);
    std::cout << "degen-report: "
              << (rep.pure_visual ? "PureVisual" : to_string(rep.classification))
              << " nullspace_dim=" << rep.nullspace_dim << " -> " << args.out_report << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "degen-report: " << e.what() << "\n";
    return kExitAlgorithm;
  }
}

}  // namespace dsl
