#include <fstream>

#include <json.hpp>

#include "nerfloc/eval.hpp"
#include "test_support.hpp"

using namespace nerfloc;

namespace {

std::vector<StampedPose> wavy_trajectory(int n) {
  std::vector<StampedPose> t;
  for (int i = 0; i < n; ++i) {
    const double s = 0.3 * i;
    t.push_back({0.1 * i, Pose(Eigen::Quaterniond(Eigen::AngleAxisd(0.1 * i, Eigen::Vector3d::UnitZ())),
                               Eigen::Vector3d(std::cos(s) * 2, std::sin(s) * 2, 0.1 * i))});
  }
  return t;
}

}  // namespace

TEST_CASE("association is greedy on time difference") {
  std::vector<StampedPose> est{{0.00, {}}, {0.11, {}}, {0.12, {}}, {0.50, {}}};
  std::vector<StampedPose> gt{{0.0, {}}, {0.1, {}}, {0.2, {}}};
  const auto pairs = associate(est, gt, 0.05);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].est_index == 0);
  CHECK(pairs[0].gt_index == 0);
  CHECK(pairs[1].est_index == 1);
  CHECK(pairs[1].gt_index == 1);
  const auto wide = associate(est, gt, 0.1);
  REQUIRE(wide.size() == 3);
  CHECK(wide[2].est_index == 2);
  CHECK(wide[2].gt_index == 2);
  CHECK_THROWS_CODE(associate(est, {{5.0, {}}}, 0.05), ErrorCode::NoPairs);
  CHECK_THROWS_CODE(associate({}, gt, 0.05), ErrorCode::NoPairs);
}

TEST_CASE("identical trajectories have zero error") {
  const auto gt = wavy_trajectory(10);
  const EvalReport r = evaluate(gt, gt, 0.01, Alignment::None);
  CHECK(r.ate_rmse_m == 0);
  CHECK(r.mean_rotation_error_rad < 1e-7);
  CHECK(r.frame_count == 10);
  CHECK(r.failure_count == 0);
}

TEST_CASE("ATE is the RMS translation residual") {
  const auto gt = wavy_trajectory(4);
  auto est = gt;
  const double offs[4] = {0.1, 0.0, 0.2, 0.3};
  for (int i = 0; i < 4; ++i)
    est[size_t(i)].pose = Pose(gt[size_t(i)].pose.rotation(), gt[size_t(i)].pose.translation() + Eigen::Vector3d(0, offs[i], 0));
  const auto pairs = associate(est, gt, 0.01);
  CHECK(ate_rmse(pairs) == doctest::Approx(std::sqrt((0.01 + 0.04 + 0.09) / 4)));
}

TEST_CASE("Umeyama recovers a known similarity") {
  const auto gt = wavy_trajectory(12);
  SimilarityTransform s;
  s.rotation = Eigen::AngleAxisd(0.8, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  s.translation = Eigen::Vector3d(1, -2, 0.5);
  s.scale = 1.7;
  // est = s^-1(gt): aligning est onto gt must give back s.
  auto est = gt;
  for (auto& e : est) {
    const Eigen::Vector3d p = s.rotation.transpose() * (e.pose.translation() - s.translation) / s.scale;
    e.pose = Pose(Eigen::Matrix3d(s.rotation.transpose() * e.pose.rotation_matrix()), p);
  }
  const auto pairs = associate(est, gt, 0.01);
  const SimilarityTransform t = align_umeyama(pairs, true);
  CHECK(t.scale == doctest::Approx(1.7).epsilon(1e-9));
  CHECK((t.rotation - s.rotation).norm() < 1e-9);
  CHECK((t.translation - s.translation).norm() < 1e-9);
  CHECK(ate_rmse(pairs, Alignment::Similarity) < 1e-9);
  CHECK(ate_rmse(pairs, Alignment::Rigid) > 1e-3);
  CHECK(ate_rmse(pairs, Alignment::Rigid) < ate_rmse(pairs, Alignment::None));
  const EvalReport r = evaluate(est, gt, 0.01, Alignment::Similarity);
  CHECK(r.mean_rotation_error_rad < 1e-7);
}

TEST_CASE("alignment needs three non-collinear positions") {
  std::vector<StampedPose> line;
  for (int i = 0; i < 5; ++i) line.push_back({double(i), Pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d(i, 0, 0))});
  const auto pairs = associate(line, line, 0.01);
  CHECK_THROWS_CODE(align_umeyama(pairs, false), ErrorCode::Degenerate);
  CHECK_THROWS_CODE(align_umeyama({pairs.begin(), pairs.begin() + 2}, true), ErrorCode::Degenerate);
  CHECK(parse_alignment("rigid") == Alignment::Rigid);
  CHECK_THROWS_CODE(parse_alignment("affine"), ErrorCode::InvalidArgument);
}

TEST_CASE("reports are written with per-frame status") {
  const auto gt = wavy_trajectory(5);
  auto est = gt;
  est[2].pose = Pose(gt[2].pose.rotation(), gt[2].pose.translation() + Eigen::Vector3d(0.5, 0, 0));
  EvalReport r = evaluate(est, gt, 0.01, Alignment::None, {"ok", "ok", "insufficient_matches", "ok", "ok"});
  CHECK(r.failure_count == 1);
  CHECK(r.frames[2].translation_error == doctest::Approx(0.5));
  CHECK(r.ate_rmse_m == doctest::Approx(std::sqrt(0.25 / 5)));

  const auto dir = testing::scratch_dir("eval_report");
  std::ofstream(dir / "field.rfld") << std::string(100, 'x');
  std::filesystem::create_directories(dir / "db" / "images");
  std::ofstream(dir / "db" / "poses.txt") << std::string(50, 'p');
  std::ofstream(dir / "db" / "images" / "000000.ppm") << std::string(300, 'i');
  std::ofstream(dir / "db" / "images" / "000001.ppm") << std::string(300, 'i');
  r.storage = storage_report((dir / "field.rfld").string(), (dir / "db").string());
  r.has_storage = true;
  CHECK(r.storage.map_bytes == 100);
  CHECK(r.storage.db_bytes == 650);
  CHECK(r.storage.ratio == doctest::Approx(100.0 / 650.0));

  emit_report(r, (dir / "out").string());
  std::ifstream js(dir / "out" / "report.json");
  const auto j = nlohmann::json::parse(js);
  CHECK(j["ate_rmse_m"].get<double>() == doctest::Approx(r.ate_rmse_m));
  CHECK(j["failure_count"] == 1);
  CHECK(j["db_bytes"] == 650);
  CHECK(j["frames"].size() == 5);
  CHECK(j["frames"][2]["status"] == "insufficient_matches");
  std::ifstream csv(dir / "out" / "errors.csv");
  std::string header, first;
  std::getline(csv, header);
  std::getline(csv, first);
  CHECK(header == "# frame,translation_err_m,rotation_err_rad,status");
  CHECK(first.rfind("0,", 0) == 0);
  CHECK(read_tum_file((dir / "out" / "trajectory_gt.txt").string()).size() == 5);
  CHECK_THROWS_CODE(storage_report((dir / "missing").string(), (dir / "db").string()), ErrorCode::Io);
}
