#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsl/cli_commands.hpp"
#include "dsl/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dsl: monocular direct sparse localization in a prior surfel map"};
  app.require_subcommand(1);

  dsl::BuildMapArgs build_args;
  auto* build = app.add_subcommand("build-map", "Build a surfel map from a point cloud PLY");
  build->add_option("--input", build_args.input_ply, "input point cloud (.ply)")->required();
  build->add_option("--output", build_args.output_ply, "output surfel map (.ply)")->required();
  build->add_option("--voxel", build_args.voxel, "downsampling voxel, meters");
  build->add_option("--k", build_args.k_neighbors, "PCA neighborhood size");

  dsl::SimulateArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "Render a synthetic sequence with ground truth");
  sim->add_option("--preset", sim_args.preset, "box-room | orbit | corridor | single-wall");
  sim->add_option("--out", sim_args.out_dir, "output directory")->required();
  sim->add_option("--frames", sim_args.frames, "frame count");
  sim->add_option("--seed", sim_args.seed, "texture/noise seed");
  sim->add_option("--voxel", sim_args.voxel, "surfel sampling voxel, meters");
  sim->add_option("--noise-sigma", sim_args.noise_sigma, "map position noise, meters");
  sim->add_option("--keep-fraction", sim_args.keep_fraction, "random surfel keep fraction");
  sim->add_option("--pca-k", sim_args.pca_k, "PCA k for noisy-map normal re-estimation");

  dsl::LocalizeArgs loc_args;
  std::vector<std::string> overrides;
  auto* loc = app.add_subcommand("localize", "Localize a sequence in a surfel map");
  loc->add_option("--sequence", loc_args.sequence_dir, "sequence directory")->required();
  loc->add_option("--map", loc_args.map_ply, "surfel map (.ply)")->required();
  loc->add_option("--out", loc_args.out_trajectory, "output trajectory (TUM)")->required();
  loc->add_option("--diagnostics", loc_args.diagnostics_prefix, "diagnostics file prefix");
  loc->add_option("--config", loc_args.config_file, "key=value config file");
  loc->add_option("--set", overrides, "config override key=value (repeatable)");
  loc->add_option("--init", loc_args.init_pose,
                  "initial pose 'tx ty tz qx qy qz qw' (default: first GT pose)");

  dsl::EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "Trajectory metrics (ATE / RPE)");
  ev->add_option("--est", eval_args.est_trajectory, "estimated trajectory")->required();
  ev->add_option("--gt", eval_args.gt_trajectory, "ground-truth trajectory")->required();
  ev->add_option("--segments", eval_args.segment_lengths, "RPE segment lengths, meters");
  ev->add_option("--out", eval_args.out_csv, "metrics CSV")->required();
  ev->add_flag("!--no-scale", eval_args.align_scale, "rigid alignment (no scale)");

  dsl::DegenReportArgs degen_args;
  auto* degen = app.add_subcommand("degen-report", "Degeneracy analysis of map + trajectory");
  degen->add_option("--map", degen_args.map_ply, "surfel map (.ply)")->required();
  degen->add_option("--trajectory", degen_args.trajectory, "trajectory (TUM)")->required();
  degen->add_option("--calib", degen_args.calib, "'fx fy cx cy width height'");
  degen->add_option("--out", degen_args.out_report, "report file")->required();
  degen->add_option("--stride", degen_args.pixel_stride, "constraint sampling stride, pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : dsl::kExitUsage;
  }

  try {
    if (*build) return dsl::cmd_build_map(build_args);
    if (*sim) return dsl::cmd_simulate(sim_args);
    if (*loc) {
      for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
          std::cerr << "localize: --set expects key=value, got '" << kv << "'\n";
          return dsl::kExitUsage;
        }
        loc_args.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
      }
      return dsl::cmd_localize(loc_args);
    }
    if (*ev) return dsl::cmd_eval(eval_args);
    if (*degen) return dsl::cmd_degen_report(degen_args);
  } catch (const std::exception& e) {
    std::cerr << "dsl: " << e.what() << "\n";
    return dsl::kExitAlgorithm;
  }
  return dsl::kExitUsage;
}
