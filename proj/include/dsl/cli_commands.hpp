#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsl/config.hpp"
#include "dsl/evaluation.hpp"
#include "dsl/image.hpp"
#include "dsl/se3.hpp"
#include "dsl/surfel_map.hpp"

namespace dsl {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitAlgorithm = 1;
inline constexpr int kExitUsage = 2;

struct BuildMapArgs {
  std::string input_ply;
  std::string output_ply;
  double voxel = 0.1;
  int k_neighbors = 10;
};
int cmd_build_map(const BuildMapArgs& args);

struct SimulateArgs {
  std::string preset = "box-room";
  std::string out_dir;
  int frames = 200;
  uint64_t seed = 1;
  double voxel = 0.08;
  double noise_sigma = 0.0;     // map corruption after sampling
  double keep_fraction = 1.0;   // random surfel subsampling (coverage studies)
  int pca_k = 10;
};
int cmd_simulate(const SimulateArgs& args);

struct LocalizeArgs {
  std::string sequence_dir;  // index.txt + frame_%06d.pgm + calib.txt
  std::string map_ply;
  std::string out_trajectory;
  std::string diagnostics_prefix;   // optional
  std::string config_file;          // optional
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string init_pose;            // "tx ty tz qx qy qz qw"; empty = first GT pose
};
int cmd_localize(const LocalizeArgs& args);

struct EvalArgs {
  std::string est_trajectory;
  std::string gt_trajectory;
  std::vector<double> segment_lengths;
  std::string out_csv;
  bool align_scale = true;
};
int cmd_eval(const EvalArgs& args);

struct DegenReportArgs {
  std::string map_ply;
  std::string trajectory;
  std::string calib;  // "fx fy cx cy width height"
  std::string out_report;
  int pixel_stride = 16;
};
int cmd_degen_report(const DegenReportArgs& args);

// Sequence emitted by cmd_simulate.
struct SequenceFrame {
  int frame_id = 0;
  double timestamp = 0.0;
  double exposure = 1.0;
  double a = 0.0, b = 0.0;
  std::string image_path;
};

struct Sequence {
  std::vector<SequenceFrame> frames;
  CameraIntrinsics K;
  std::string dir;
};

Sequence load_sequence(const std::string& dir);
CameraIntrinsics load_calib(const std::string& path);
Pose parse_pose_string(const std::string& text);

}  // namespace dsl
