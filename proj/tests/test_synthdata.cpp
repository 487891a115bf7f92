#include "nerfloc/synthdata.hpp"
#include "test_support.hpp"

using namespace nerfloc;

namespace {

double path_length(const std::vector<StampedPose>& t) {
  double s = 0;
  for (size_t k = 1; k < t.size(); ++k) s += (t[k].pose.translation() - t[k - 1].pose.translation()).norm();
  return s;
}

Dataset small_dataset(double blur_fraction, uint64_t seed, int n = 8) {
  static const RadianceField gt = voxelize_scene(default_scene(), {24, 24, 24});
  TrajectoryParams tp;
  tp.radius = 3;
  tp.pivot = Eigen::Vector3d(0, 0, 0.3);
  tp.look_at = Eigen::Vector3d(0, 0, -1);
  tp.length = 6;
  DatasetOptions o;
  o.blur_fraction = blur_fraction;
  o.seed = seed;
  o.render.samples_per_ray = 64;
  return make_dataset(gt, CameraModel::create(40, 40, 23.5, 17.5, 48, 36),
                      generate_trajectory(TrajectoryKind::Orbit, tp, n), o);
}

}  // namespace

TEST_CASE("default scene is valid and voxelizes to a non-empty field") {
  const SceneSpec s = default_scene();
  CHECK_NOTHROW(s.validate());
  const RadianceField f = voxelize_scene(s, {32, 32, 32});
  size_t occupied = 0;
  for (float d : f.density()) occupied += d > 0;
  CHECK(occupied > 100);
  CHECK(occupied < f.voxel_count() / 2);
}

TEST_CASE("voxelization picks the innermost primitive, later on ties") {
  SceneSpec s;
  s.bbox_min = Eigen::Vector3f::Constant(-1.f);
  s.bbox_max = Eigen::Vector3f::Constant(1.f);
  s.primitives.push_back({SphereShape{Eigen::Vector3d::Zero(), 0.3}, Eigen::Vector3f(0, 0, 1), 10.f});
  s.primitives.push_back({BoxShape{Eigen::Vector3d::Zero(), Eigen::Vector3d::Constant(0.8)}, Eigen::Vector3f(1, 0, 0), 5.f});
  s.primitives.push_back({BoxShape{Eigen::Vector3d(0.5, 0, 0), Eigen::Vector3d::Constant(0.2)}, Eigen::Vector3f(0, 1, 0), 7.f});
  s.primitives.push_back({BoxShape{Eigen::Vector3d(0.5, 0, 0), Eigen::Vector3d::Constant(0.2)}, Eigen::Vector3f(1, 1, 0), 8.f});
  const RadianceField f = voxelize_scene(s, {16, 16, 16});
  auto at = [&](int x, int y, int z) { return f.index(x, y, z); };
  CHECK(f.density()[at(8, 8, 8)] == 10.f);
  CHECK(f.color()[3 * at(8, 8, 8) + 2] == 1.f);
  CHECK(f.density()[at(2, 8, 8)] == 5.f);
  CHECK(f.density()[at(11, 8, 8)] == 8.f);
  CHECK(f.density()[at(0, 0, 0)] == 0.f);

  SceneSpec empty = s;
  empty.primitives.clear();
  const RadianceField vac = voxelize_scene(empty, {8, 8, 8});
  for (float d : vac.density()) CHECK(d == 0.f);

  SceneSpec missed = empty;
  missed.primitives.push_back({SphereShape{Eigen::Vector3d::Zero(), 0.01}, Eigen::Vector3f::Ones(), 1.f});
  CHECK_THROWS_CODE(voxelize_scene(missed, {8, 8, 8}), ErrorCode::EmptyScene);
}

TEST_CASE("orbit trajectory") {
  TrajectoryParams p;
  p.radius = 3;
  p.length = 10;
  p.pivot = Eigen::Vector3d(0, 0, 0.5);
  p.start_angle = 0.4;
  p.t0 = 2;
  p.dt = 0.5;
  const auto t = generate_trajectory(TrajectoryKind::Orbit, p, 20);
  REQUIRE(t.size() == 20);
  const double chord = 2 * 3 * std::sin(10.0 / 3 / 19 / 2);
  for (size_t k = 0; k < t.size(); ++k) {
    const Eigen::Vector3d c = t[k].pose.translation() - p.pivot;
    CHECK(c.z() == doctest::Approx(0).epsilon(1e-12));
    CHECK(c.norm() == doctest::Approx(3.0));
    CHECK(t[k].timestamp == doctest::Approx(2 + 0.5 * double(k)));
    CHECK((t[k].pose.rotation_matrix().col(2) + c.normalized()).norm() < 1e-9);
    if (k) CHECK((t[k].pose.translation() - t[k - 1].pose.translation()).norm() == doctest::Approx(chord));
  }
  CHECK(std::atan2(t[0].pose.translation().y(), t[0].pose.translation().x()) == doctest::Approx(0.4));
}

TEST_CASE("line and lawnmower trajectories have the requested length") {
  TrajectoryParams p;
  p.length = 10;
  p.origin = Eigen::Vector3d(-2, 1, 0.5);
  p.direction = Eigen::Vector3d(1, 1, 0.3);
  const auto line = generate_trajectory(TrajectoryKind::Line, p, 11);
  const Eigen::Vector3d dir = Eigen::Vector3d(1, 1, 0).normalized();
  CHECK((line.front().pose.translation() - p.origin).norm() < 1e-12);
  CHECK((line.back().pose.translation() - (p.origin + 10 * dir)).norm() < 1e-9);
  for (size_t k = 1; k < line.size(); ++k)
    CHECK((line[k].pose.translation() - line[k - 1].pose.translation()).norm() == doctest::Approx(1.0));
  CHECK((line[3].pose.rotation_matrix().col(2) - dir).norm() < 1e-9);

  p.row_length = 3;
  p.row_spacing = 1;
  const auto mow = generate_trajectory(TrajectoryKind::Lawnmower, p, 25);
  CHECK(mow.size() == 25);
  CHECK(path_length(mow) == doctest::Approx(10.0));
  CHECK_THROWS_CODE(generate_trajectory(TrajectoryKind::Line, p, 1), ErrorCode::BadParams);
  p.direction = Eigen::Vector3d::UnitZ();
  CHECK_THROWS_CODE(generate_trajectory(TrajectoryKind::Line, p, 5), ErrorCode::BadParams);
}

TEST_CASE("datasets are seeded and blur the requested fraction") {
  const Dataset a = small_dataset(0.5, 3), b = small_dataset(0.5, 3);
  int blurred = 0;
  for (size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].image.data == b.entries[i].image.data);
    CHECK(a.entries[i].blurred == b.entries[i].blurred);
    CHECK(a.entries[i].split == Split::Train);
    blurred += a.entries[i].blurred;
  }
  CHECK(blurred == 4);
  const Dataset sharp = small_dataset(0.0, 3);
  for (size_t i = 0; i < a.entries.size(); ++i)
    if (a.entries[i].blurred) CHECK(blur_score(a.entries[i].image) < blur_score(sharp.entries[i].image));
}

TEST_CASE("blur score is the Laplacian variance") {
  GrayImage checker(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) checker.at(x, y) = float((x + y) % 2);
  CHECK(blur_score(checker) == doctest::Approx(16.0));
  CHECK(blur_score(GrayImage(5, 5, 0.3f)) == doctest::Approx(0.0));
  CHECK_THROWS_CODE(blur_score(GrayImage(2, 5)), ErrorCode::TooSmall);
}

TEST_CASE("blur filter keeps order and applies both criteria") {
  Dataset ds;
  ds.camera = CameraModel::create(4, 4, 1.5, 1.5, 4, 4);
  const float amp[] = {0.1f, 1.0f, 0.5f, 1.0f, 0.0f};
  for (int i = 0; i < 5; ++i) {
    DatasetEntry e;
    e.timestamp = i;
    e.image = RgbImage(4, 4);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        for (int c = 0; c < 3; ++c) e.image.at(x, y, c) = amp[i] * float((x + y) % 2);
    ds.entries.push_back(e);
  }
  std::vector<int> kept;
  const Dataset top = filter_blurred(ds, KeepFraction{0.4}, &kept);
  CHECK(kept == std::vector<int>{1, 3});
  CHECK(top.entries[0].timestamp == 1);
  filter_blurred(ds, KeepFraction{0.2}, &kept);
  CHECK(kept == std::vector<int>{1});
  filter_blurred(ds, AbsoluteThreshold{16.0 * 0.25 - 1e-9}, &kept);
  CHECK(kept == std::vector<int>{1, 2, 3});
  CHECK_THROWS_CODE(filter_blurred(ds, AbsoluteThreshold{1e9}), ErrorCode::AllFiltered);
  CHECK_THROWS_CODE(filter_blurred(Dataset{}, KeepFraction{}), ErrorCode::EmptyDataset);
}

TEST_CASE("datasets round trip through disk") {
  Dataset ds = small_dataset(0.0, 4, 5);
  ds.entries[1].split = Split::Holdout;
  ds.entries[4].split = Split::Query;
  const auto dir = testing::scratch_dir("dataset");
  save_dataset(ds, dir.string());
  CHECK(std::filesystem::exists(dir / "camera.json"));
  CHECK(std::filesystem::exists(dir / "poses.txt"));
  CHECK(std::filesystem::exists(dir / "images" / image_filename(0)));
  CHECK(image_filename(7) == "000007.ppm");
  const Dataset back = load_dataset(dir.string());
  CHECK(back.camera == ds.camera);
  REQUIRE(back.entries.size() == 5);
  for (size_t i = 0; i < 5; ++i) {
    CHECK(back.entries[i].split == ds.entries[i].split);
    CHECK(back.entries[i].image.data == quantize8(ds.entries[i].image).data);
    CHECK(translation_error(back.entries[i].pose, ds.entries[i].pose) < 1e-8);
  }
  std::vector<int> holdout;
  const TrainingSet ts = back.training_set(&holdout);
  CHECK(ts.views.size() == 4);
  CHECK(holdout == std::vector<int>{1});
  CHECK(back.indices(Split::Query) == std::vector<int>{4});
  CHECK_THROWS_CODE(load_dataset((dir / "nope").string()), ErrorCode::Io);
}
