#include "nerfloc/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nerfloc/config.hpp"
#include "nerfloc/error.hpp"
#include "nerfloc/eval.hpp"
#include "nerfloc/field.hpp"
#include "nerfloc/localize.hpp"
#include "nerfloc/synthdata.hpp"
#include "nerfloc/train.hpp"

namespace fs = std::filesystem;

namespace nerfloc {

namespace {

struct GlobalArgs {
  std::string config;
  std::optional<uint64_t> seed;
  int threads = 0;
  std::string out = "out";
  std::vector<std::string> overrides;
};

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::Io:
    case ErrorCode::BadMagic:
    case ErrorCode::VersionUnsupported:
    case ErrorCode::ChecksumMismatch:
      return kExitIo;
    case ErrorCode::Config:
    case ErrorCode::InvalidArgument:
    case ErrorCode::BadParams:
    case ErrorCode::BadCount:
    case ErrorCode::EmptyDataset:
    case ErrorCode::DegenerateBounds:
      return kExitConfig;
    default:
      return kExitFailure;
  }
}

RunConfig resolve_config(const GlobalArgs& g) {
  RunConfig cfg = g.config.empty() ? RunConfig() : load_config(g.config);
  for (const auto& o : g.overrides) apply_override(cfg, o);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create directory " + dir);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path);
  os << text;
  if (!os) throw Error(ErrorCode::Io, "write failed: " + path);
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void tag_all(Dataset& ds, Split s) {
  for (auto& e : ds.entries) e.split = s;
}

// ---- synth ----

int cmd_synth(const GlobalArgs& g) {
  const RunConfig cfg = resolve_config(g);
  ensure_dir(g.out);
  const SceneSpec scene = default_scene();
  const RadianceField gt = voxelize_scene(scene, cfg.scene_dims);
  save_field(gt, path_in(g.out, "gt_field.rfld"));

  DatasetOptions mopt;
  mopt.noise_sigma = cfg.noise_sigma;
  mopt.blur_fraction = cfg.blur_fraction;
  mopt.blur_kernel = cfg.blur_kernel;
  mopt.seed = cfg.seed;
  mopt.render = cfg.render;
  Dataset mapping = make_dataset(gt, cfg.mapping_camera, rig_trajectory(cfg.mapping_rig), mopt);
  const size_t captured = mapping.entries.size();
  size_t blurred_in = 0;
  for (const auto& e : mapping.entries) blurred_in += e.blurred;
  if (cfg.blur_threshold)
    mapping = filter_blurred(mapping, AbsoluteThreshold{*cfg.blur_threshold});
  else if (cfg.keep_fraction < 1.0)
    mapping = filter_blurred(mapping, KeepFraction{cfg.keep_fraction});
  size_t blurred_left = 0;
  for (const auto& e : mapping.entries) blurred_left += e.blurred;
  tag_all(mapping, Split::Train);
  for (int i : select_holdout(int(mapping.entries.size()), cfg.train.holdout_fraction))
    mapping.entries[size_t(i)].split = Split::Holdout;
  save_dataset(mapping, path_in(g.out, "mapping"));
  std::printf("mapping: captured %zu, retained %zu, removed %zu (blurred removed %zu of %zu)\n", captured,
              mapping.entries.size(), captured - mapping.entries.size(), blurred_in - blurred_left, blurred_in);

  DatasetOptions qopt;
  qopt.noise_sigma = cfg.query_noise_sigma;
  qopt.seed = cfg.seed + 1;
  qopt.render = cfg.render;
  Dataset query = make_dataset(gt, cfg.query_camera,
                               generate_trajectory(cfg.query_kind, cfg.query_trajectory, cfg.query_frames), qopt);
  tag_all(query, Split::Query);
  save_dataset(query, path_in(g.out, "query"));
  std::printf("query: %zu frames\n", query.entries.size());

  DatasetOptions dopt = qopt;
  dopt.seed = cfg.seed + 2;
  Dataset database = make_dataset(gt, cfg.query_camera, rig_trajectory(cfg.database_rig), dopt);
  tag_all(database, Split::Train);
  save_dataset(database, path_in(g.out, "database"));
  std::printf("database: %zu images\n", database.entries.size());

  write_text(path_in(g.out, "config.ini"), dump_config(cfg));
  return kExitOk;
}

// ---- train ----

int cmd_train(const GlobalArgs& g, const std::string& dataset_dir) {
  const RunConfig cfg = resolve_config(g);
  const Dataset ds = load_dataset(dataset_dir);
  std::vector<int> holdout;
  const TrainingSet ts = ds.training_set(&holdout);
  RadianceField field(Eigen::Vector3f::Constant(-1.5f), Eigen::Vector3f::Constant(1.5f), cfg.field_dims,
                      cfg.init_density, Eigen::Vector3f::Constant(cfg.init_color));
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.render = cfg.render;
  const TrainReport rep = train(field, ts, tc, holdout.empty() ? std::nullopt : std::optional(holdout));

  ensure_dir(g.out);
  nlohmann::ordered_json j;
  j["iterations"] = rep.iterations;
  j["train_images"] = rep.train_indices.size();
  j["holdout_images"] = rep.holdout_indices.size();
  j["initial_holdout_psnr_db"] = rep.initial_holdout_psnr;
  j["final_holdout_psnr_db"] = rep.final_holdout_psnr;
  j["psnr_floor_db"] = cfg.psnr_floor;
  j["field_bytes"] = field_file_size(field.dims());
  j["loss_curve"] = rep.loss_curve;
  write_text(path_in(g.out, "train_report.json"), j.dump(2) + "\n");
  if (tc.iterations > 0) save_field(field, path_in(g.out, "field.rfld"));
  std::printf("holdout PSNR %.3f dB -> %.3f dB after %d iterations\n", rep.initial_holdout_psnr,
              rep.final_holdout_psnr, rep.iterations);
  if (cfg.psnr_floor > 0 && rep.final_holdout_psnr < cfg.psnr_floor) {
    std::fprintf(stderr, "holdout PSNR %.3f dB is below the floor %.3f dB\n", rep.final_holdout_psnr,
                 cfg.psnr_floor);
    return kExitQualityFloor;
  }
  return kExitOk;
}

// ---- render ----

int cmd_render(const GlobalArgs& g, const std::string& field_path, const std::string& pose_text,
               const std::string& trajectory_path, const std::string& camera_name) {
  const RunConfig cfg = resolve_config(g);
  if (pose_text.empty() == trajectory_path.empty())
    throw Error(ErrorCode::Config, "render needs exactly one of --pose or --trajectory");
  const CameraModel cam = camera_name == "mapping" ? cfg.mapping_camera : cfg.query_camera;
  const RadianceField field = load_field(field_path);
  std::vector<StampedPose> poses;
  if (!pose_text.empty()) {
    try {
      poses.push_back(parse_tum_line("0 " + pose_text));
    } catch (const Error& e) {
      throw Error(ErrorCode::Config, std::string("--pose: ") + e.what());
    }
  } else {
    poses = read_tum_file(trajectory_path);
  }
  ensure_dir(g.out);
  for (size_t i = 0; i < poses.size(); ++i) {
    const RenderedView v = render_image(field, cam, poses[i].pose, cfg.render);
    char name[64];
    std::snprintf(name, sizeof(name), "%06zu", i);
    write_ppm(path_in(g.out, std::string(name) + ".ppm"), v.rgb);
    write_pgm16(path_in(g.out, std::string(name) + "_depth.pgm"), cam.width, cam.height, encode_depth_mm(v.depth));
  }
  write_tum_file(path_in(g.out, "poses.txt"), poses);
  std::printf("rendered %zu views\n", poses.size());
  return kExitOk;
}

// ---- localize ----

int cmd_localize(const GlobalArgs& g, const std::string& query_dir, const std::string& field_path,
                 const std::string& database_dir, std::string mode) {
  const RunConfig cfg = resolve_config(g);
  if (mode.empty()) mode = cfg.mode;
  if (mode != "field" && mode != "database") throw Error(ErrorCode::Config, "--mode must be field or database");
  const Dataset queries = load_dataset(query_dir);
  if (queries.entries.empty()) throw Error(ErrorCode::Config, "query set is empty");

  std::optional<RadianceField> field;
  ImageDatabase db;
  MapSource map;
  if (mode == "field") {
    if (field_path.empty()) throw Error(ErrorCode::Config, "field mode needs --field");
    field = load_field(field_path);
    map = MapSource::from_field(*field);
  } else {
    if (database_dir.empty()) throw Error(ErrorCode::Config, "database mode needs --database");
    const Dataset dbset = load_dataset(database_dir);
    db.camera = dbset.camera;
    for (size_t i = 0; i < dbset.entries.size(); i += size_t(cfg.database_stride)) {
      db.poses.push_back(dbset.entries[i].pose);
      db.images.push_back(dbset.entries[i].image);
    }
    map = MapSource::from_database(db);
  }

  std::vector<QueryFrame> frames;
  for (const auto& e : queries.entries) frames.push_back({e.timestamp, e.image});
  const Pose first = queries.entries.front().pose;
  const Pose prior = compose(first, Pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d(cfg.initial_prior_offset, 0, 0)));
  LocalizeOptions lo = cfg.localize;
  lo.render = cfg.render;
  lo.ransac.seed = cfg.seed;
  const TrajectoryEstimate est = run_sequence(map, queries.camera, frames, prior, lo);

  ensure_dir(g.out);
  write_tum_file(path_in(g.out, "trajectory_est.txt"), est.poses);
  write_frame_log(path_in(g.out, "frames.jsonl"), est);
  int failed = 0;
  for (const auto& f : est.frames) failed += f.result.status != LocalizationStatus::Ok;
  std::printf("localized %zu frames, %d failed\n", est.frames.size(), failed);
  if (2 * failed > int(est.frames.size())) {
    std::fprintf(stderr, "more than half of the frames failed to localize\n");
    return kExitLocalization;
  }
  return kExitOk;
}

// ---- eval ----

std::vector<std::string> read_statuses(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const int frame = j.at("frame").get<int>();
      if (frame < 0) continue;
      if (size_t(frame) >= out.size()) out.resize(size_t(frame) + 1, "ok");
      out[size_t(frame)] = j.at("status").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::Io, "malformed frame log: " + path);
    }
  }
  return out;
}

int cmd_eval(const GlobalArgs& g, const std::string& est_path, const std::string& gt_path,
             const std::string& frames_path, const std::string& field_path, const std::string& database_dir) {
  const RunConfig cfg = resolve_config(g);
  const auto est = read_tum_file(est_path);
  const auto gt = read_tum_file(gt_path);
  std::vector<std::string> status;
  if (!frames_path.empty()) status = read_statuses(frames_path);
  EvalReport rep = evaluate(est, gt, cfg.max_dt, cfg.alignment, status);
  if (!field_path.empty() && !database_dir.empty()) {
    rep.storage = storage_report(field_path, database_dir);
    rep.has_storage = true;
  }
  emit_report(rep, g.out);
  std::printf("ATE %.6f m, mean rotation error %.6f rad over %d frames (%d failed)\n", rep.ate_rmse_m,
              rep.mean_rotation_error_rad, rep.frame_count, rep.failure_count);
  if (rep.has_storage)
    std::printf("map %llu bytes, database %llu bytes, ratio %.4f\n", (unsigned long long)rep.storage.map_bytes,
                (unsigned long long)rep.storage.db_bytes, rep.storage.ratio);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Visual localization against a voxel radiance-field map", "nerfloc"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalArgs g;
  app.add_option("--config", g.config, "Configuration file");
  app.add_option("--seed", g.seed, "Seed overriding the configuration");
  app.add_option("--threads", g.threads, "Worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--set", g.overrides, "Override a setting, section.key=value (repeatable)");

  auto* synth = app.add_subcommand("synth", "Generate the scene, mapping/query/database datasets");

  auto* train_cmd = app.add_subcommand("train", "Train a field on a dataset");
  std::string dataset_dir;
  train_cmd->add_option("--dataset", dataset_dir, "Mapping dataset directory")->required();

  auto* render_cmd = app.add_subcommand("render", "Render RGB and depth from a field");
  std::string field_path, pose_text, trajectory_path, camera_name = "query";
  render_cmd->add_option("--field", field_path, "Field file")->required();
  render_cmd->add_option("--pose", pose_text, "Pose as 'tx ty tz qx qy qz qw'");
  render_cmd->add_option("--trajectory", trajectory_path, "TUM trajectory file");
  render_cmd->add_option("--camera", camera_name, "Camera: query or mapping")
      ->check(CLI::IsMember({"query", "mapping"}));

  auto* loc_cmd = app.add_subcommand("localize", "Localize a query sequence");
  std::string query_dir, database_dir, mode;
  loc_cmd->add_option("--queries", query_dir, "Query dataset directory")->required();
  loc_cmd->add_option("--field", field_path, "Field file (field mode)");
  loc_cmd->add_option("--database", database_dir, "Image dataset used as database (database mode)");
  loc_cmd->add_option("--mode", mode, "field or database")->check(CLI::IsMember({"field", "database"}));

  auto* eval_cmd = app.add_subcommand("eval", "Compare an estimate against ground truth");
  std::string est_path, gt_path, frames_path;
  eval_cmd->add_option("--est", est_path, "Estimated TUM trajectory")->required();
  eval_cmd->add_option("--gt", gt_path, "Ground-truth TUM trajectory")->required();
  eval_cmd->add_option("--frames", frames_path, "frames.jsonl with per-frame status");
  eval_cmd->add_option("--field", field_path, "Field file for the storage report");
  eval_cmd->add_option("--database", database_dir, "Database directory for the storage report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (g.threads > 0) omp_set_num_threads(g.threads);
    if (*synth) return cmd_synth(g);
    if (*train_cmd) return cmd_train(g, dataset_dir);
    if (*render_cmd) return cmd_render(g, field_path, pose_text, trajectory_path, camera_name);
    if (*loc_cmd) return cmd_localize(g, query_dir, field_path, database_dir, mode);
    if (*eval_cmd) return cmd_eval(g, est_path, gt_path, frames_path, field_path, database_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace nerfloc
