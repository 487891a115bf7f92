#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nerfloc/features.hpp"
#include "nerfloc/field.hpp"
#include "nerfloc/geom.hpp"
#include "nerfloc/image.hpp"
#include "nerfloc/render.hpp"

namespace nerfloc {

enum class ReferenceSource { Rendered, Database };

struct ReferenceView {
  RgbImage rgb;
  GrayImage depth;  ///< planar z-depth, meters; 0 = undefined; empty for database views
  Pose pose;
  ReferenceSource source = ReferenceSource::Rendered;
  int database_index = -1;
};

struct Correspondence2D3D {
  Eigen::Vector3d world_point = Eigen::Vector3d::Zero();
  Eigen::Vector2d query_pixel = Eigen::Vector2d::Zero();
};

enum class LocalizationStatus { Ok, Degenerate, InsufficientMatches };
std::string to_string(LocalizationStatus s);

struct RansacOptions {
  int iterations = 1000;
  double inlier_threshold_px = 3.0;
  int min_inliers = 12;
  uint64_t seed = 0;
};

struct LocalizeOptions {
  int n_references = 2;
  double lateral_offset = 0.2;  ///< meters
  RansacOptions ransac;
  int refine_iterations = 10;
  DetectOptions detect;
  MatchOptions match;
  RenderOptions render;

  void validate() const;
};

struct LocalizationResult {
  Pose pose;
  int inlier_count = 0;
  int total_matches = 0;
  double mean_reprojection_error = 0;  ///< pixels, over inliers
  LocalizationStatus status = LocalizationStatus::InsufficientMatches;
  bool scale_ambiguous = false;  ///< two-view solution with assumed baseline
  std::vector<int> matches_per_reference;
};

/// Stored posed images used in place of a field for the ablation.
struct ImageDatabase {
  CameraModel camera;
  std::vector<Pose> poses;
  std::vector<RgbImage> images;
};

/// Either a radiance field or an image database. Not owning.
struct MapSource {
  const RadianceField* field = nullptr;
  const ImageDatabase* database = nullptr;

  static MapSource from_field(const RadianceField& f) { return {&f, nullptr}; }
  static MapSource from_database(const ImageDatabase& db) { return {nullptr, &db}; }
};

/// n = 1: the prior. n = 2: +-offset along camera x. n = 4: also +-offset
/// along camera y. Beyond four, the rest sit on a circle of radius offset in
/// the camera x-y plane. Orientation always equals the prior's.
std::vector<Pose> sample_reference_poses(const Pose& prior, int n, double lateral_offset);

/// Indices of the n entries minimizing center distance + 0.5 m/rad * rotation
/// error to the prior. Equal costs keep the lower index.
std::vector<int> nearest_database_entries(const ImageDatabase& db, const Pose& prior, int n);

std::vector<ReferenceView> build_reference_views(const MapSource& map, const CameraModel& cam, const Pose& prior,
                                                 const LocalizeOptions& opts);

/// Lifts reference keypoints to world points through the reference depth.
std::vector<Correspondence2D3D> lift_matches(const ReferenceView& ref, const CameraModel& cam,
                                             const std::vector<Match>& matches,
                                             const std::vector<Keypoint>& query_keypoints,
                                             const std::vector<Keypoint>& ref_keypoints);

/// Candidate world-to-camera transforms from three bearing/point pairs.
std::vector<Pose> solve_p3p(const std::array<Eigen::Vector3d, 3>& bearings,
                            const std::array<Eigen::Vector3d, 3>& points);

struct PnPResult {
  Pose pose;  ///< camera-to-world
  std::vector<char> inliers;
  int inlier_count = 0;
  double mean_error = 0;  ///< pixels, over inliers
};

/// P3P + one disambiguation point inside RANSAC, then Gauss-Newton on the
/// inliers with step halving. The inlier mask is recomputed after refinement.
PnPResult solve_pnp_ransac(const std::vector<Correspondence2D3D>& corr, const CameraModel& cam,
                           const RansacOptions& opts, int refine_iterations = 10);

/// Mean reprojection error of `world_to_cam` over the flagged correspondences.
double mean_reprojection_error(const std::vector<Correspondence2D3D>& corr, const CameraModel& cam,
                               const Pose& world_to_cam, const std::vector<char>& mask);

/// Gauss-Newton refinement of a world-to-camera pose. Each step is halved up
/// to ten times until the mean error does not increase.
Pose refine_pose(const std::vector<Correspondence2D3D>& corr, const CameraModel& cam, const Pose& world_to_cam,
                 const std::vector<char>& mask, int iterations);

struct TwoViewResult {
  Pose pose;  ///< query camera-to-world
  std::vector<char> inliers;
  int inlier_count = 0;
  double mean_error = 0;  ///< Sampson distance, pixels
  bool degenerate = false;
};

/// Normalized 8-point essential matrix inside RANSAC (Sampson error), then
/// decomposition with a cheirality vote. The unit translation is scaled by
/// `baseline`.
TwoViewResult solve_two_view(const std::vector<Keypoint>& query_keypoints, const std::vector<Keypoint>& ref_keypoints,
                             const std::vector<Match>& matches, const CameraModel& cam, const Pose& ref_pose,
                             double baseline, const RansacOptions& opts);

/// Full render-match-solve step. Failures are reported in `status`, never thrown.
LocalizationResult localize_frame(const MapSource& map, const CameraModel& cam, const RgbImage& query,
                                  const Pose& prior, const LocalizeOptions& opts);

struct FrameRecord {
  int frame = 0;
  double timestamp = 0;
  LocalizationResult result;
  double elapsed_ms = 0;
};

struct TrajectoryEstimate {
  std::vector<StampedPose> poses;
  std::vector<FrameRecord> frames;
};

struct QueryFrame {
  double timestamp = 0;
  RgbImage image;
};

/// Each frame uses the previous estimate as its prior; a failed frame keeps
/// the last good estimate.
TrajectoryEstimate run_sequence(const MapSource& map, const CameraModel& cam, const std::vector<QueryFrame>& frames,
                                const Pose& initial_prior, const LocalizeOptions& opts);

/// One JSON object per line: frame, status, inliers, matches, reproj_error_px,
/// pose (TUM fields), elapsed_ms.
std::string frame_log_line(const FrameRecord& rec);
void write_frame_log(const std::string& path, const TrajectoryEstimate& est);

}  // namespace nerfloc
