#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <iosfwd>
#include <string>
#include <vector>

namespace nerfloc {

/// Rigid camera-to-world transform: x_world = rotation * x_cam + translation.
/// The quaternion is kept at unit norm by every constructor and operation.
class Pose {
 public:
  Pose() = default;
  Pose(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation);
  Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static Pose identity() { return {}; }

  const Eigen::Quaterniond& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Matrix3d rotation_matrix() const { return rotation_.toRotationMatrix(); }
  Eigen::Matrix4d matrix() const;

  Eigen::Vector3d transform(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

 private:
  Eigen::Quaterniond rotation_ = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

/// Applies b first, then a.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

/// Geodesic angle of the relative rotation, in [0, pi].
double rotation_error(const Pose& a, const Pose& b);
double translation_error(const Pose& a, const Pose& b);

/// SO(3) exponential of a rotation vector.
Eigen::Matrix3d exp_so3(const Eigen::Vector3d& omega);
Eigen::Matrix3d skew(const Eigen::Vector3d& v);

/// Camera-to-world pose at `eye` looking toward `target`, with image y pointing
/// along -up.
Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
             const Eigen::Vector3d& up = Eigen::Vector3d::UnitZ());

/// Pinhole intrinsics. Pixel (u, v) refers to the center of pixel column u,
/// row v; axes are x right, y down, z forward.
struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  /// Throws InvalidArgument unless the invariants hold.
  static CameraModel create(double fx, double fy, double cx, double cy, int width, int height);
  void validate() const;

  bool in_bounds(const Eigen::Vector2d& px) const {
    return px.x() >= 0 && px.y() >= 0 && px.x() < width && px.y() < height;
  }
  bool operator==(const CameraModel&) const = default;
};

Eigen::Vector2d project(const CameraModel& cam, const Eigen::Vector3d& point_cam);
Eigen::Vector3d unproject(const CameraModel& cam, const Eigen::Vector2d& pixel, double depth);

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
};

Ray ray_for_pixel(const CameraModel& cam, const Pose& pose, const Eigen::Vector2d& pixel);

struct StampedPose {
  double timestamp = 0;
  Pose pose;
};

// TUM trajectory text: `timestamp tx ty tz qx qy qz qw`, 9 significant digits,
// quaternion canonicalized to qw >= 0.
std::string format_tum_line(const StampedPose& sp);
StampedPose parse_tum_line(const std::string& line);
void write_tum(std::ostream& os, const std::vector<StampedPose>& traj,
               const std::string& header_comment = {});
std::vector<StampedPose> read_tum(std::istream& is);
void write_tum_file(const std::string& path, const std::vector<StampedPose>& traj,
                    const std::string& header_comment = {});
std::vector<StampedPose> read_tum_file(const std::string& path);

}  // namespace nerfloc
