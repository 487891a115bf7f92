#include "nerfloc/eval.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <tuple>

#include <json.hpp>

#include "nerfloc/error.hpp"

namespace fs = std::filesystem;

namespace nerfloc {

std::vector<PosePair> associate(const std::vector<StampedPose>& est, const std::vector<StampedPose>& gt,
                                double max_dt) {
  if (est.empty() || gt.empty()) throw Error(ErrorCode::NoPairs, "associate: empty trajectory");
  if (!(max_dt >= 0)) throw Error(ErrorCode::InvalidArgument, "max_dt must be >= 0");
  std::vector<std::tuple<double, int, int>> cand;
  for (size_t i = 0; i < est.size(); ++i)
    for (size_t j = 0; j < gt.size(); ++j) {
      const double dt = std::abs(est[i].timestamp - gt[j].timestamp);
      if (dt <= max_dt) cand.emplace_back(dt, int(i), int(j));
    }
  std::sort(cand.begin(), cand.end());
  std::vector<char> est_used(est.size(), 0), gt_used(gt.size(), 0);
  std::vector<PosePair> out;
  for (const auto& [dt, i, j] : cand) {
    if (est_used[size_t(i)] || gt_used[size_t(j)]) continue;
    est_used[size_t(i)] = gt_used[size_t(j)] = 1;
    out.push_back({i, j, est[size_t(i)], gt[size_t(j)]});
  }
  if (out.empty()) throw Error(ErrorCode::NoPairs, "no timestamps within max_dt");
  std::sort(out.begin(), out.end(), [](const PosePair& a, const PosePair& b) { return a.est_index < b.est_index; });
  return out;
}

std::string to_string(Alignment a) {
  switch (a) {
    case Alignment::None: return "none";
    case Alignment::Rigid: return "rigid";
    case Alignment::Similarity: return "similarity";
  }
  return "none";
}

Alignment parse_alignment(const std::string& s) {
  if (s == "none") return Alignment::None;
  if (s == "rigid") return Alignment::Rigid;
  if (s == "similarity") return Alignment::Similarity;
  throw Error(ErrorCode::InvalidArgument, "unknown alignment '" + s + "'");
}

Pose SimilarityTransform::apply(const Pose& p) const {
  return Pose(Eigen::Matrix3d(rotation * p.rotation_matrix()), apply(p.translation()));
}

SimilarityTransform align_umeyama(const std::vector<PosePair>& pairs, bool with_scale) {
  const auto n = Eigen::Index(pairs.size());
  if (n < 3) throw Error(ErrorCode::Degenerate, "alignment needs at least 3 pairs");
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = pairs[size_t(i)].est.pose.translation();
    dst.col(i) = pairs[size_t(i)].gt.pose.translation();
  }
  for (const Eigen::Matrix3Xd* m : {&src, &dst}) {
    const Eigen::Matrix3Xd c = m->colwise() - m->rowwise().mean();
    const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(c * c.transpose()).singularValues();
    if (!(sv[1] > 1e-12 * std::max(sv[0], 1e-300))) throw Error(ErrorCode::Degenerate, "collinear or coincident centers");
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, with_scale);
  SimilarityTransform out;
  const Eigen::Matrix3d sr = t.topLeftCorner<3, 3>();
  out.scale = with_scale ? std::cbrt(sr.determinant()) : 1.0;
  out.rotation = sr / out.scale;
  out.translation = t.topRightCorner<3, 1>();
  return out;
}

std::vector<PosePair> apply_alignment(const std::vector<PosePair>& pairs, const SimilarityTransform& t) {
  std::vector<PosePair> out = pairs;
  for (auto& p : out) p.est.pose = t.apply(p.est.pose);
  return out;
}

double ate_rmse(const std::vector<PosePair>& pairs, Alignment alignment) {
  if (pairs.empty()) throw Error(ErrorCode::NoPairs, "ate_rmse: no pairs");
  const std::vector<PosePair> use =
      alignment == Alignment::None ? pairs : apply_alignment(pairs, align_umeyama(pairs, alignment == Alignment::Similarity));
  double sse = 0;
  for (const auto& p : use) sse += (p.est.pose.translation() - p.gt.pose.translation()).squaredNorm();
  return std::sqrt(sse / double(use.size()));
}

double mean_rotation_error(const std::vector<PosePair>& pairs) {
  if (pairs.empty()) throw Error(ErrorCode::NoPairs, "mean_rotation_error: no pairs");
  double sum = 0;
  for (const auto& p : pairs) sum += rotation_error(p.est.pose, p.gt.pose);
  return sum / double(pairs.size());
}

StorageReport storage_report(const std::string& field_path, const std::string& database_dir) {
  std::error_code ec;
  StorageReport r;
  r.map_bytes = fs::file_size(field_path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot stat field file " + field_path);
  if (!fs::is_directory(database_dir)) throw Error(ErrorCode::Io, "database directory not found: " + database_dir);
  const fs::path poses = fs::path(database_dir) / "poses.txt";
  if (fs::is_regular_file(poses)) r.db_bytes += fs::file_size(poses);
  const fs::path images = fs::path(database_dir) / "images";
  if (fs::is_directory(images))
    for (const auto& e : fs::directory_iterator(images))
      if (e.is_regular_file()) r.db_bytes += e.file_size();
  r.ratio = r.db_bytes ? double(r.map_bytes) / double(r.db_bytes) : 0.0;
  return r;
}

EvalReport evaluate(const std::vector<StampedPose>& est, const std::vector<StampedPose>& gt, double max_dt,
                    Alignment alignment, const std::vector<std::string>& status) {
  const auto pairs = associate(est, gt, max_dt);
  EvalReport rep;
  rep.alignment = alignment;
  const std::vector<PosePair> used =
      alignment == Alignment::None ? pairs : apply_alignment(pairs, align_umeyama(pairs, alignment == Alignment::Similarity));
  rep.ate_rmse_m = ate_rmse(used);
  rep.mean_rotation_error_rad = mean_rotation_error(used);
  for (size_t k = 0; k < pairs.size(); ++k) {
    FrameError fe;
    fe.frame = pairs[k].est_index;
    fe.timestamp = pairs[k].est.timestamp;
    fe.translation_error = translation_error(used[k].est.pose, used[k].gt.pose);
    fe.rotation_error = rotation_error(used[k].est.pose, used[k].gt.pose);
    if (size_t(fe.frame) < status.size()) fe.status = status[size_t(fe.frame)];
    if (fe.status != "ok") ++rep.failure_count;
    rep.frames.push_back(fe);
    rep.est.push_back(pairs[k].est);
    rep.gt.push_back(pairs[k].gt);
  }
  rep.frame_count = int(rep.frames.size());
  return rep;
}

void emit_report(const EvalReport& report, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir);
  nlohmann::ordered_json j;
  j["ate_rmse_m"] = report.ate_rmse_m;
  j["mean_rotation_error_rad"] = report.mean_rotation_error_rad;
  j["alignment"] = to_string(report.alignment);
  j["frame_count"] = report.frame_count;
  j["failure_count"] = report.failure_count;
  if (report.has_storage) {
    j["map_bytes"] = report.storage.map_bytes;
    j["db_bytes"] = report.storage.db_bytes;
    j["storage_ratio"] = report.storage.ratio;
  }
  nlohmann::ordered_json frames = nlohmann::ordered_json::array();
  for (const auto& f : report.frames)
    frames.push_back({{"frame", f.frame},
                      {"timestamp", f.timestamp},
                      {"translation_err_m", f.translation_error},
                      {"rotation_err_rad", f.rotation_error},
                      {"status", f.status}});
  j["frames"] = frames;
  const std::string base = (fs::path(dir) / "").string();
  {
    std::ofstream os(base + "report.json");
    if (!os) throw Error(ErrorCode::Io, "cannot write report.json in " + dir);
    os << j.dump(2) << "\n";
  }
  write_tum_file(base + "trajectory_est.txt", report.est);
  write_tum_file(base + "trajectory_gt.txt", report.gt);
  std::ofstream os(base + "errors.csv");
  if (!os) throw Error(ErrorCode::Io, "cannot write errors.csv in " + dir);
  os << "# frame,translation_err_m,rotation_err_rad,status\n";
  char buf[128];
  for (const auto& f : report.frames) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,", f.frame, f.translation_error, f.rotation_error);
    os << buf << f.status << "\n";
  }
  if (!os) throw Error(ErrorCode::Io, "write failed: errors.csv");
}

}  // namespace nerfloc
