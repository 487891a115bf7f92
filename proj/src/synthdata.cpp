#include "nerfloc/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "march.hpp"
#include "nerfloc/error.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace nerfloc {

bool Primitive::contains(const Eigen::Vector3d& p) const {
  if (const auto* box = std::get_if<BoxShape>(&shape))
    return ((p - box->center).cwiseAbs().array() <= box->half_extent.array()).all();
  const auto& sphere = std::get<SphereShape>(shape);
  return (p - sphere.center).squaredNorm() <= sphere.radius * sphere.radius;
}

double Primitive::volume() const {
  if (const auto* box = std::get_if<BoxShape>(&shape)) return 8.0 * box->half_extent.prod();
  const double r = std::get<SphereShape>(shape).radius;
  return 4.0 / 3.0 * M_PI * r * r * r;
}

void SceneSpec::validate() const {
  if (!(bbox_max.array() > bbox_min.array()).all()) throw Error(ErrorCode::DegenerateBounds, "scene bbox");
  const Eigen::Vector3d lo = bbox_min.cast<double>(), hi = bbox_max.cast<double>();
  for (const auto& prim : primitives) {
    if (!(prim.density >= 0)) throw Error(ErrorCode::InvalidArgument, "primitive density must be >= 0");
    Eigen::Vector3d pmin, pmax;
    if (const auto* box = std::get_if<BoxShape>(&prim.shape)) {
      if ((box->half_extent.array() <= 0).any()) throw Error(ErrorCode::InvalidArgument, "box extent must be positive");
      pmin = box->center - box->half_extent;
      pmax = box->center + box->half_extent;
    } else {
      const auto& s = std::get<SphereShape>(prim.shape);
      if (!(s.radius > 0)) throw Error(ErrorCode::InvalidArgument, "sphere radius must be positive");
      pmin = s.center.array() - s.radius;
      pmax = s.center.array() + s.radius;
    }
    if ((pmin.array() < lo.array() - 1e-9).any() || (pmax.array() > hi.array() + 1e-9).any())
      throw Error(ErrorCode::InvalidArgument, "primitive extends outside the scene bbox");
  }
}

SceneSpec default_scene() {
  static const Eigen::Vector3f kPalette[] = {
      {0.85f, 0.15f, 0.15f}, {0.15f, 0.65f, 0.2f}, {0.15f, 0.3f, 0.85f}, {0.95f, 0.8f, 0.1f},
      {0.6f, 0.2f, 0.75f},   {0.1f, 0.75f, 0.8f},  {0.95f, 0.5f, 0.1f},  {0.2f, 0.2f, 0.2f},
      {0.55f, 0.35f, 0.2f},  {0.9f, 0.45f, 0.65f},
  };
  constexpr int kColors = int(std::size(kPalette));
  uint64_t state = 0x5eed;
  auto pick = [&]() { return kPalette[detail::splitmix64(state++) % kColors]; };
  constexpr float kSolid = 80.f;

  SceneSpec scene;
  auto box = [&](Eigen::Vector3d c, Eigen::Vector3d h, Eigen::Vector3f color) {
    scene.primitives.push_back({BoxShape{c, h}, color, kSolid});
  };

  // Floor of 0.25 m tiles.
  constexpr int kTiles = 12;
  constexpr double kTile = 3.0 / kTiles;
  for (int j = 0; j < kTiles; ++j)
    for (int i = 0; i < kTiles; ++i)
      box({-1.5 + (i + 0.5) * kTile, -1.5 + (j + 0.5) * kTile, -1.425}, {kTile / 2, kTile / 2, 0.075}, pick());

  // Brick towers standing on the floor.
  auto tower = [&](Eigen::Vector3d corner, int nx, int ny, int nz, double brick) {
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x)
          box(corner + brick * Eigen::Vector3d(x + 0.5, y + 0.5, z + 0.5), Eigen::Vector3d::Constant(brick / 2),
              pick());
  };
  tower({-0.9, -0.7, -1.35}, 3, 2, 5, 0.2);
  tower({0.2, 0.35, -1.35}, 4, 1, 3, 0.2);
  tower({0.45, -0.95, -1.35}, 2, 2, 2, 0.25);
  tower({-1.2, 0.6, -1.35}, 1, 3, 4, 0.18);

  scene.primitives.push_back({SphereShape{{-0.1, 0.0, -1.1}, 0.25}, pick(), kSolid});
  scene.primitives.push_back({SphereShape{{0.95, 0.2, -1.15}, 0.2}, pick(), kSolid});
  scene.primitives.push_back({SphereShape{{-0.4, 1.0, -1.2}, 0.15}, pick(), kSolid});
  return scene;
}

RadianceField voxelize_scene(const SceneSpec& spec, std::array<int, 3> dims, const Eigen::Vector3f& bbox_min,
                             const Eigen::Vector3f& bbox_max) {
  spec.validate();
  if (dims[0] < 8 || dims[1] < 8 || dims[2] < 8) throw Error(ErrorCode::InvalidArgument, "voxelize needs dims >= 8");
  RadianceField field(bbox_min, bbox_max, dims);
  std::vector<double> volumes;
  for (const auto& p : spec.primitives) volumes.push_back(p.volume());
  size_t filled = 0;
#pragma omp parallel for schedule(static) reduction(+ : filled)
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        const Eigen::Vector3d c = field.voxel_center(x, y, z);
        int best = -1;
        for (int k = 0; k < int(spec.primitives.size()); ++k)
          if (spec.primitives[k].contains(c) && (best < 0 || volumes[k] <= volumes[best])) best = k;
        if (best < 0) continue;
        field.set_voxel(field.index(x, y, z), spec.primitives[best].density, spec.primitives[best].color);
        ++filled;
      }
  if (!spec.primitives.empty() && filled == 0)
    throw Error(ErrorCode::EmptyScene, "no voxel center lies inside any primitive");
  return field;
}

RadianceField voxelize_scene(const SceneSpec& spec, std::array<int, 3> dims) {
  return voxelize_scene(spec, dims, spec.bbox_min, spec.bbox_max);
}

namespace {

// Splits n-1 intervals across segments proportionally to length, with at
// least one per segment (largest remainder).
std::vector<int> allocate_intervals(const std::vector<double>& lengths, int intervals) {
  const int segs = int(lengths.size());
  if (intervals < segs) throw Error(ErrorCode::BadParams, "too few poses for the path's segments");
  const double total = std::accumulate(lengths.begin(), lengths.end(), 0.0);
  std::vector<int> alloc(segs);
  std::vector<double> rem(segs);
  int used = 0;
  for (int s = 0; s < segs; ++s) {
    const double ideal = intervals * lengths[s] / total;
    alloc[s] = std::max(1, int(std::floor(ideal)));
    rem[s] = ideal - alloc[s];
    used += alloc[s];
  }
  std::vector<int> order(segs);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; used < intervals; k = (k + 1) % segs, ++used) ++alloc[order[k]];
  for (int k = segs - 1; used > intervals; k = (k + segs - 1) % segs)
    if (alloc[order[k]] > 1) {
      --alloc[order[k]];
      --used;
    }
  return alloc;
}

std::vector<StampedPose> polyline_trajectory(const std::vector<Eigen::Vector3d>& vertices, const TrajectoryParams& p,
                                             int n) {
  std::vector<double> lengths;
  for (size_t k = 0; k + 1 < vertices.size(); ++k) lengths.push_back((vertices[k + 1] - vertices[k]).norm());
  const auto alloc = allocate_intervals(lengths, n - 1);
  std::vector<StampedPose> out;
  out.reserve(n);
  for (size_t s = 0; s < lengths.size(); ++s) {
    const Eigen::Vector3d dir = (vertices[s + 1] - vertices[s]) / lengths[s];
    const int steps = alloc[s];
    const bool last = s + 1 == lengths.size();
    for (int k = 0; k < steps + (last ? 1 : 0); ++k) {
      const Eigen::Vector3d c = vertices[s] + (lengths[s] * k / steps) * dir;
      const double ts = p.t0 + p.dt * double(out.size());
      out.push_back({ts, look_at(c, c + dir)});
    }
  }
  return out;
}

}  // namespace

std::vector<StampedPose> generate_trajectory(TrajectoryKind kind, const TrajectoryParams& p, int n) {
  if (n < 2) throw Error(ErrorCode::BadParams, "need at least 2 poses");
  if (!(p.length > 0) || !(p.dt > 0)) throw Error(ErrorCode::BadParams, "length and dt must be positive");
  const Eigen::Vector3d up = Eigen::Vector3d::UnitZ();

  if (kind == TrajectoryKind::Orbit) {
    if (!(p.radius > 0)) throw Error(ErrorCode::BadParams, "orbit radius must be positive");
    const double arc = p.length / p.radius;
    const Eigen::Vector3d target = p.look_at.value_or(p.pivot);
    std::vector<StampedPose> out;
    for (int k = 0; k < n; ++k) {
      const double phi = p.start_angle + arc * k / (n - 1);
      const Eigen::Vector3d c = p.pivot + p.radius * Eigen::Vector3d(std::cos(phi), std::sin(phi), 0.0);
      if ((target - c).norm() < 1e-9) throw Error(ErrorCode::BadParams, "look_at target coincides with camera");
      out.push_back({p.t0 + p.dt * k, look_at(c, target, up)});
    }
    return out;
  }

  Eigen::Vector3d dir = p.direction - p.direction.dot(up) * up;
  if (dir.norm() < 1e-9) throw Error(ErrorCode::BadParams, "travel direction must have a horizontal component");
  dir.normalize();
  std::vector<Eigen::Vector3d> vertices{p.origin};
  if (kind == TrajectoryKind::Line) {
    vertices.push_back(p.origin + p.length * dir);
    return polyline_trajectory(vertices, p, n);
  }

  if (!(p.row_length > 0) || !(p.row_spacing > 0)) throw Error(ErrorCode::BadParams, "lawnmower rows must be positive");
  const Eigen::Vector3d side = up.cross(dir);
  double remaining = p.length;
  Eigen::Vector3d pos = p.origin;
  for (int seg = 0; remaining > 1e-12; ++seg) {
    const bool row = seg % 2 == 0;
    const Eigen::Vector3d d = row ? ((seg / 2) % 2 == 0 ? dir : Eigen::Vector3d(-dir)) : side;
    const double len = std::min(remaining, row ? p.row_length : p.row_spacing);
    pos += len * d;
    vertices.push_back(pos);
    remaining -= len;
  }
  return polyline_trajectory(vertices, p, n);
}

void Dataset::validate() const {
  camera.validate();
  for (size_t i = 0; i < entries.size(); ++i) {
    if (i > 0 && !(entries[i].timestamp > entries[i - 1].timestamp))
      throw Error(ErrorCode::InvalidArgument, "dataset timestamps must be strictly increasing");
    if (entries[i].image.width != camera.width || entries[i].image.height != camera.height)
      throw Error(ErrorCode::DimensionMismatch, "dataset image does not match camera");
  }
}

std::vector<int> Dataset::indices(Split split) const {
  std::vector<int> out;
  for (int i = 0; i < int(entries.size()); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

TrainingSet Dataset::training_set(std::vector<int>* holdout_positions) const {
  TrainingSet set{camera, {}};
  if (holdout_positions) holdout_positions->clear();
  for (const auto& e : entries) {
    if (e.split == Split::Query) continue;
    if (e.split == Split::Holdout && holdout_positions) holdout_positions->push_back(int(set.views.size()));
    set.views.push_back({e.timestamp, e.pose, e.image});
  }
  return set;
}

std::vector<StampedPose> Dataset::trajectory() const {
  std::vector<StampedPose> out;
  for (const auto& e : entries) out.push_back({e.timestamp, e.pose});
  return out;
}

Dataset make_dataset(const RadianceField& gt_field, const CameraModel& cam, const std::vector<StampedPose>& trajectory,
                     const DatasetOptions& options) {
  cam.validate();
  if (options.noise_sigma < 0 || options.blur_fraction < 0 || options.blur_fraction > 1)
    throw Error(ErrorCode::InvalidArgument, "noise_sigma >= 0 and blur_fraction in [0,1] required");
  const int n = int(trajectory.size());
  std::vector<char> blur(n, 0);
  const int n_blur = int(std::lround(options.blur_fraction * n));
  if (n_blur > 0) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(detail::splitmix64(options.seed ^ 0xb10bull));
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 0; k < n_blur; ++k) blur[order[k]] = 1;
  }

  Dataset ds;
  ds.camera = cam;
  ds.entries.resize(n);
  for (int i = 0; i < n; ++i) {
    auto& e = ds.entries[i];
    e.timestamp = trajectory[i].timestamp;
    e.pose = trajectory[i].pose;
    e.image = render_image(gt_field, cam, e.pose, options.render).rgb;
    e.blurred = blur[i] != 0;
    if (e.blurred) e.image = box_blur(e.image, options.blur_kernel);
    if (options.noise_sigma > 0) {
      std::mt19937_64 rng(detail::splitmix64(options.seed) ^ detail::splitmix64(uint64_t(i) + 1));
      std::normal_distribution<float> noise(0.f, float(options.noise_sigma));
      for (auto& v : e.image.data) v = std::clamp(v + noise(rng), 0.f, 1.f);
    }
  }
  ds.validate();
  return ds;
}

double blur_score(const GrayImage& g) {
  if (g.width < 3 || g.height < 3) throw Error(ErrorCode::TooSmall, "blur_score needs at least 3x3");
  double sum = 0, sum_sq = 0;
  const size_t count = size_t(g.width - 2) * (g.height - 2);
  for (int y = 1; y < g.height - 1; ++y)
    for (int x = 1; x < g.width - 1; ++x) {
      const double lap = double(g.at(x - 1, y)) + g.at(x + 1, y) + g.at(x, y - 1) + g.at(x, y + 1) - 4.0 * g.at(x, y);
      sum += lap;
      sum_sq += lap * lap;
    }
  const double mean = sum / double(count);
  return std::max(0.0, sum_sq / double(count) - mean * mean);
}

double blur_score(const RgbImage& image) { return blur_score(to_gray(image)); }

Dataset filter_blurred(const Dataset& dataset, const BlurCriterion& criterion, std::vector<int>* kept_indices) {
  const int n = int(dataset.entries.size());
  if (n == 0) throw Error(ErrorCode::EmptyDataset, "filter_blurred on empty dataset");
  std::vector<double> scores(n);
  for (int i = 0; i < n; ++i) scores[i] = blur_score(dataset.entries[i].image);

  std::vector<char> keep(n, 0);
  if (const auto* kf = std::get_if<KeepFraction>(&criterion)) {
    if (!(kf->fraction >= 0 && kf->fraction <= 1)) throw Error(ErrorCode::InvalidArgument, "keep fraction in [0,1]");
    const int count = int(std::lround(kf->fraction * n));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
    for (int k = 0; k < count; ++k) keep[order[k]] = 1;
  } else {
    const double t = std::get<AbsoluteThreshold>(criterion).threshold;
    for (int i = 0; i < n; ++i) keep[i] = scores[i] >= t;
  }

  Dataset out;
  out.camera = dataset.camera;
  if (kept_indices) kept_indices->clear();
  for (int i = 0; i < n; ++i)
    if (keep[i]) {
      out.entries.push_back(dataset.entries[i]);
      if (kept_indices) kept_indices->push_back(i);
    }
  if (out.entries.empty()) throw Error(ErrorCode::AllFiltered, "blur filter removed every image");
  return out;
}

std::string image_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.ppm", index);
  return buf;
}

void save_dataset(const Dataset& dataset, const std::string& dir) {
  dataset.validate();
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir + ": " + ec.message());
  const auto& c = dataset.camera;
  const json cam = {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height}};
  std::ofstream(fs::path(dir) / "camera.json") << cam.dump(2) << "\n";

  json splits = {{"train", json::array()}, {"holdout", json::array()}, {"query", json::array()},
                 {"blurred", json::array()}};
  for (int i = 0; i < int(dataset.entries.size()); ++i) {
    const auto& e = dataset.entries[i];
    const char* key = e.split == Split::Train ? "train" : e.split == Split::Holdout ? "holdout" : "query";
    splits[key].push_back(i);
    if (e.blurred) splits["blurred"].push_back(i);
    write_ppm((fs::path(dir) / "images" / image_filename(i)).string(), e.image);
  }
  std::ofstream(fs::path(dir) / "splits.json") << splits.dump(2) << "\n";
  write_tum_file((fs::path(dir) / "poses.txt").string(), dataset.trajectory(), "camera-to-world poses");
  if (!fs::exists(fs::path(dir) / "splits.json")) throw Error(ErrorCode::Io, "failed writing dataset " + dir);
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw Error(ErrorCode::Io, "dataset directory not found: " + dir);
  auto read_json = [&](const char* name) {
    std::ifstream is(root / name);
    if (!is) throw Error(ErrorCode::Io, std::string("missing ") + name + " in " + dir);
    try {
      return json::parse(is);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Io, std::string(name) + ": " + e.what());
    }
  };
  Dataset ds;
  try {
    const json cam = read_json("camera.json");
    ds.camera = CameraModel::create(cam.at("fx"), cam.at("fy"), cam.at("cx"), cam.at("cy"), cam.at("width"),
                                    cam.at("height"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("camera.json: ") + e.what());
  }
  const auto traj = read_tum_file((root / "poses.txt").string());
  ds.entries.resize(traj.size());
  for (size_t i = 0; i < traj.size(); ++i) {
    ds.entries[i].timestamp = traj[i].timestamp;
    ds.entries[i].pose = traj[i].pose;
    ds.entries[i].image = read_ppm((root / "images" / image_filename(int(i))).string());
  }
  const json splits = read_json("splits.json");
  auto mark = [&](const char* key, auto&& fn) {
    if (!splits.contains(key)) return;
    for (const auto& v : splits[key]) {
      const int i = v.get<int>();
      if (i < 0 || i >= int(ds.entries.size())) throw Error(ErrorCode::Io, "splits.json index out of range");
      fn(ds.entries[i]);
    }
  };
  mark("holdout", [](DatasetEntry& e) { e.split = Split::Holdout; });
  mark("query", [](DatasetEntry& e) { e.split = Split::Query; });
  mark("blurred", [](DatasetEntry& e) { e.blurred = true; });
  ds.validate();
  return ds;
}

}  // namespace nerfloc
