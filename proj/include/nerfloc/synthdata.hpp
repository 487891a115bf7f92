#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nerfloc/field.hpp"
#include "nerfloc/geom.hpp"
#include "nerfloc/image.hpp"
#include "nerfloc/render.hpp"
#include "nerfloc/train.hpp"

namespace nerfloc {

struct BoxShape {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extent = Eigen::Vector3d::Constant(0.5);
};

struct SphereShape {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0.5;
};

struct Primitive {
  std::variant<BoxShape, SphereShape> shape;
  Eigen::Vector3f color = Eigen::Vector3f::Constant(0.5f);
  float density = 50.f;  ///< 1/m

  bool contains(const Eigen::Vector3d& p) const;
  double volume() const;
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  Eigen::Vector3f bbox_min = Eigen::Vector3f::Constant(-1.5f);
  Eigen::Vector3f bbox_max = Eigen::Vector3f::Constant(1.5f);

  void validate() const;
};

/// Tabletop scene: a tiled floor, brick towers and spheres with per-piece colors.
SceneSpec default_scene();

/// Each voxel center takes the innermost (smallest-volume; later wins ties)
/// containing primitive, else vacuum. An empty primitive list yields vacuum;
/// EmptyScene is raised when primitives exist but no voxel center hits one.
RadianceField voxelize_scene(const SceneSpec& spec, std::array<int, 3> dims, const Eigen::Vector3f& bbox_min,
                             const Eigen::Vector3f& bbox_max);
RadianceField voxelize_scene(const SceneSpec& spec, std::array<int, 3> dims);

enum class TrajectoryKind { Orbit, Line, Lawnmower };

struct TrajectoryParams {
  double length = 10.0;  ///< total path length, meters
  // Orbit: horizontal circle around `pivot`; cameras look at `look_at` (default pivot).
  Eigen::Vector3d pivot = Eigen::Vector3d::Zero();
  double radius = 3.0;
  double start_angle = 0.0;
  std::optional<Eigen::Vector3d> look_at;
  // Line / lawnmower: start at `origin`, rows along horizontal `direction`;
  // lawnmower rows step sideways (to the left of travel) by `row_spacing`.
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitX();
  double row_length = 5.0;
  double row_spacing = 2.0;
  // Synthetic clock, 10 Hz by default.
  double t0 = 0.0;
  double dt = 0.1;
};

std::vector<StampedPose> generate_trajectory(TrajectoryKind kind, const TrajectoryParams& params, int n_poses);

enum class Split { Train, Holdout, Query };

struct DatasetEntry {
  double timestamp = 0;
  Pose pose;
  RgbImage image;
  Split split = Split::Train;
  bool blurred = false;  ///< ground-truth label of injected blur
};

struct Dataset {
  CameraModel camera;
  std::vector<DatasetEntry> entries;

  void validate() const;
  std::vector<int> indices(Split split) const;
  /// Entries of the given splits as a training set, plus the positions of
  /// holdout entries inside it.
  TrainingSet training_set(std::vector<int>* holdout_positions = nullptr) const;
  std::vector<StampedPose> trajectory() const;
};

struct DatasetOptions {
  double noise_sigma = 0.0;
  double blur_fraction = 0.0;
  int blur_kernel = 5;
  uint64_t seed = 0;
  RenderOptions render;
};

/// Renders every pose, box-blurs a seeded blur_fraction of the images, then
/// adds Gaussian noise and clamps to [0,1]. All entries are tagged Train.
Dataset make_dataset(const RadianceField& gt_field, const CameraModel& cam, const std::vector<StampedPose>& trajectory,
                     const DatasetOptions& options);

/// Variance of the 3x3 Laplacian over the interior of the grayscale image.
double blur_score(const RgbImage& image);
double blur_score(const GrayImage& image);

struct KeepFraction {
  double fraction = 0.5;
};
struct AbsoluteThreshold {
  double threshold = 0.0;
};
using BlurCriterion = std::variant<KeepFraction, AbsoluteThreshold>;

/// Keeps the top fraction by score (ties: earlier entry) or entries scoring
/// >= threshold. Order is preserved. Throws AllFiltered if nothing survives.
Dataset filter_blurred(const Dataset& dataset, const BlurCriterion& criterion,
                       std::vector<int>* kept_indices = nullptr);

/// Directory layout: camera.json, poses.txt (TUM), images/%06d.ppm, splits.json.
void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

std::string image_filename(int index);

}  // namespace nerfloc
