#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nerfloc/eval.hpp"
#include "nerfloc/geom.hpp"
#include "nerfloc/localize.hpp"
#include "nerfloc/render.hpp"
#include "nerfloc/synthdata.hpp"
#include "nerfloc/train.hpp"

namespace nerfloc {

/// Cameras on horizontal circles around the scene, split evenly across rings.
struct RigConfig {
  int count = 50;
  std::vector<double> heights = {0.0, 0.7};
  double radius = 3.0;
  Eigen::Vector3d look_at = Eigen::Vector3d(0, 0, -1);
  double start_angle = 0.0;
};

struct RunConfig {
  uint64_t seed = 0;

  // [scene]
  std::array<int, 3> scene_dims = {64, 64, 64};

  // [mapping]
  CameraModel mapping_camera{110, 110, 63.5, 47.5, 128, 96};
  RigConfig mapping_rig;
  double noise_sigma = 0.0;
  double blur_fraction = 0.0;
  int blur_kernel = 5;
  double keep_fraction = 1.0;  ///< 1 keeps every image
  std::optional<double> blur_threshold;

  // [database]
  RigConfig database_rig{200, {0.0, 0.7}, 3.0, Eigen::Vector3d(0, 0, -1), 0.0};

  // [query]
  CameraModel query_camera{275, 275, 159.5, 119.5, 320, 240};
  TrajectoryKind query_kind = TrajectoryKind::Orbit;
  TrajectoryParams query_trajectory;
  int query_frames = 20;
  double query_noise_sigma = 0.01;

  // [field]
  std::array<int, 3> field_dims = {64, 64, 64};
  float init_density = 0.f;
  float init_color = 0.5f;

  // [train]
  TrainConfig train;
  double psnr_floor = 0.0;

  // [render]
  RenderOptions render;

  // [localize]
  LocalizeOptions localize;
  std::string mode = "field";
  int database_stride = 1;
  double initial_prior_offset = 0.0;  ///< meters along the first frame's camera x

  // [eval]
  double max_dt = 0.05;
  Alignment alignment = Alignment::None;

  RunConfig();
  /// Throws Error(Config) naming the first invalid setting.
  void validate() const;
};

/// Parses `key = value` lines grouped under `[section]` headers. Keys before
/// the first header belong to the top level. `#` and `;` start comments.
/// Unknown sections or keys and malformed values raise Error(Config) with a
/// "source:line:" prefix.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Applies one "section.key=value" override on top of `cfg`.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Renders every setting back in the config grammar.
std::string dump_config(const RunConfig& cfg);

/// Ring camera poses described by `rig`.
std::vector<StampedPose> rig_trajectory(const RigConfig& rig, double dt = 0.1);

}  // namespace nerfloc
