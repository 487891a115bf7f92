#include "nerfloc/geom.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nerfloc/error.hpp"

namespace nerfloc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::PixelOutOfBounds: return "PixelOutOfBounds";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::Io: return "Io";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DegenerateBounds: return "DegenerateBounds";
    case ErrorCode::EmptyScene: return "EmptyScene";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::AllFiltered: return "AllFiltered";
    case ErrorCode::BadCount: return "BadCount";
    case ErrorCode::EmptyDatabase: return "EmptyDatabase";
    case ErrorCode::NoDepth: return "NoDepth";
    case ErrorCode::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::InsufficientMatches: return "InsufficientMatches";
    case ErrorCode::Degenerate: return "Degenerate";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::NoPairs: return "NoPairs";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

Pose::Pose(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation.normalized()), translation_(translation) {}

Pose::Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(Eigen::Quaterniond(rotation).normalized()), translation_(translation) {}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

Pose inverse(const Pose& p) {
  const Eigen::Quaterniond qi = p.rotation().conjugate();
  return {qi, -(qi * p.translation())};
}

double rotation_error(const Pose& a, const Pose& b) {
  const Eigen::Quaterniond rel = a.rotation().conjugate() * b.rotation();
  // atan2 form stays accurate near 0 and pi, unlike acos of the trace.
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

double translation_error(const Pose& a, const Pose& b) {
  return (a.translation() - b.translation()).norm();
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Eigen::Matrix3d exp_so3(const Eigen::Vector3d& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) return Eigen::Matrix3d::Identity() + skew(omega);
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d y = -up + up.dot(z) * z;
  if (y.norm() < 1e-12) throw Error(ErrorCode::BadParams, "look_at: view direction parallel to up");
  y.normalize();
  const Eigen::Vector3d x = y.cross(z);
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return {r, eye};
}

CameraModel CameraModel::create(double fx, double fy, double cx, double cy, int width, int height) {
  CameraModel cam{fx, fy, cx, cy, width, height};
  cam.validate();
  return cam;
}

void CameraModel::validate() const {
  if (!(fx > 0 && fy > 0)) throw Error(ErrorCode::InvalidArgument, "camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "camera size must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
    throw Error(ErrorCode::InvalidArgument, "principal point outside image");
}

Eigen::Vector2d project(const CameraModel& cam, const Eigen::Vector3d& p) {
  if (p.z() <= 1e-9) throw Error(ErrorCode::NonPositiveDepth, "project: point behind camera");
  return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

Eigen::Vector3d unproject(const CameraModel& cam, const Eigen::Vector2d& px, double depth) {
  if (depth <= 1e-9) throw Error(ErrorCode::NonPositiveDepth, "unproject: depth must be positive");
  return {depth * (px.x() - cam.cx) / cam.fx, depth * (px.y() - cam.cy) / cam.fy, depth};
}

Ray ray_for_pixel(const CameraModel& cam, const Pose& pose, const Eigen::Vector2d& px) {
  if (!cam.in_bounds(px)) throw Error(ErrorCode::PixelOutOfBounds, "ray_for_pixel");
  const Eigen::Vector3d d_cam((px.x() - cam.cx) / cam.fx, (px.y() - cam.cy) / cam.fy, 1.0);
  return {pose.translation(), (pose.rotation() * d_cam).normalized()};
}

std::string format_tum_line(const StampedPose& sp) {
  Eigen::Quaterniond q = sp.pose.rotation();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  const Eigen::Vector3d& t = sp.pose.translation();
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g", sp.timestamp, t.x(), t.y(),
                t.z(), q.x(), q.y(), q.z(), q.w());
  return buf;
}

StampedPose parse_tum_line(const std::string& line) {
  std::istringstream ss(line);
  double ts, tx, ty, tz, qx, qy, qz, qw;
  if (!(ss >> ts >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
    throw Error(ErrorCode::Io, "malformed TUM line: '" + line + "'");
  const Eigen::Quaterniond q(qw, qx, qy, qz);
  if (q.norm() < 1e-6) throw Error(ErrorCode::Io, "zero quaternion in TUM line");
  return {ts, Pose(q, Eigen::Vector3d(tx, ty, tz))};
}

void write_tum(std::ostream& os, const std::vector<StampedPose>& traj, const std::string& header_comment) {
  if (!header_comment.empty()) os << "# " << header_comment << "\n";
  os << "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto& sp : traj) os << format_tum_line(sp) << "\n";
}

std::vector<StampedPose> read_tum(std::istream& is) {
  std::vector<StampedPose> out;
  std::string line;
  while (std::getline(is, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    out.push_back(parse_tum_line(line));
  }
  return out;
}

void write_tum_file(const std::string& path, const std::vector<StampedPose>& traj,
                    const std::string& header_comment) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path);
  write_tum(os, traj, header_comment);
  if (!os) throw Error(ErrorCode::Io, "write failed: " + path);
}

std::vector<StampedPose> read_tum_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + path);
  return read_tum(is);
}

}  // namespace nerfloc
