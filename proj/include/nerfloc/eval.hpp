#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "nerfloc/geom.hpp"

namespace nerfloc {

struct PosePair {
  int est_index = 0;
  int gt_index = 0;
  StampedPose est;
  StampedPose gt;
};

/// Greedy global nearest-timestamp pairing: candidate pairs are taken in
/// order of |dt| (then est index, then gt index), each pose used at most
/// once. The result is sorted by est index.
std::vector<PosePair> associate(const std::vector<StampedPose>& est, const std::vector<StampedPose>& gt,
                                double max_dt);

enum class Alignment { None, Rigid, Similarity };
std::string to_string(Alignment a);
Alignment parse_alignment(const std::string& s);

/// x_gt ~ scale * rotation * x_est + translation.
struct SimilarityTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double scale = 1.0;

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return scale * (rotation * p) + translation; }
  Pose apply(const Pose& p) const;
};

/// Least-squares rigid or similarity transform taking est centers onto gt.
SimilarityTransform align_umeyama(const std::vector<PosePair>& pairs, bool with_scale);

/// Pairs with est poses mapped through `t`.
std::vector<PosePair> apply_alignment(const std::vector<PosePair>& pairs, const SimilarityTransform& t);

/// Root mean square of translation residual norms.
double ate_rmse(const std::vector<PosePair>& pairs, Alignment alignment = Alignment::None);
double mean_rotation_error(const std::vector<PosePair>& pairs);

struct StorageReport {
  uint64_t map_bytes = 0;
  uint64_t db_bytes = 0;
  double ratio = 0;  ///< map / db
};

/// Field file size against images/* plus poses.txt under `database_dir`.
StorageReport storage_report(const std::string& field_path, const std::string& database_dir);

struct FrameError {
  int frame = 0;
  double timestamp = 0;
  double translation_error = 0;
  double rotation_error = 0;
  std::string status = "ok";
};

struct EvalReport {
  double ate_rmse_m = 0;
  double mean_rotation_error_rad = 0;
  Alignment alignment = Alignment::None;
  std::vector<FrameError> frames;
  std::vector<StampedPose> est;  ///< paired, unaligned
  std::vector<StampedPose> gt;   ///< paired
  int frame_count = 0;
  int failure_count = 0;
  bool has_storage = false;
  StorageReport storage;
};

/// `status` is indexed like `est`; missing entries count as "ok".
EvalReport evaluate(const std::vector<StampedPose>& est, const std::vector<StampedPose>& gt, double max_dt,
                    Alignment alignment, const std::vector<std::string>& status = {});

/// Writes report.json, trajectory_est.txt, trajectory_gt.txt and errors.csv into `dir`.
void emit_report(const EvalReport& report, const std::string& dir);

}  // namespace nerfloc
