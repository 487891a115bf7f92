#include <fstream>

#include <json.hpp>

#include "nerfloc/cli.hpp"
#include "nerfloc/synthdata.hpp"
#include "test_support.hpp"

using namespace nerfloc;

namespace {

const char* kSmallConfig = R"(seed = 3
[scene]
dims = 32 32 32
[mapping]
count = 10
[database]
count = 4
[query]
fx = 137.5
fy = 137.5
cx = 79.5
cy = 59.5
width = 160
height = 120
frames = 3
length = 0.6
[field]
dims = 16 16 16
[train]
iterations = 20
rays_per_batch = 256
[render]
samples_per_ray = 64
)";

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "nerfloc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(int(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("full pipeline through the command line") {
  const auto dir = testing::scratch_dir("cli");
  const std::string cfg = (dir / "small.ini").string(), d = dir.string();
  std::ofstream(cfg) << kSmallConfig;

  REQUIRE(run({"synth", "--config", cfg, "--out", d + "/data"}) == kExitOk);
  for (const char* sub : {"gt_field.rfld", "mapping/poses.txt", "query/poses.txt", "database/poses.txt", "config.ini"})
    CHECK(std::filesystem::exists(dir / "data" / sub));

  REQUIRE(run({"train", "--config", cfg, "--dataset", d + "/data/mapping", "--out", d + "/train"}) == kExitOk);
  CHECK(std::filesystem::file_size(dir / "train" / "field.rfld") == field_file_size({16, 16, 16}));
  std::ifstream tr(dir / "train" / "train_report.json");
  const auto report = nlohmann::json::parse(tr);
  CHECK(report["loss_curve"].size() == 20);
  CHECK(report["final_holdout_psnr_db"].get<double>() > report["initial_holdout_psnr_db"].get<double>());

  CHECK(run({"render", "--config", cfg, "--field", d + "/train/field.rfld", "--pose", "3 0 0.3 0.5 -0.5 0.5 -0.5",
             "--out", d + "/render"}) == kExitOk);
  CHECK(std::filesystem::exists(dir / "render" / "000000.ppm"));
  CHECK(std::filesystem::exists(dir / "render" / "000000_depth.pgm"));

  REQUIRE(run({"localize", "--config", cfg, "--queries", d + "/data/query", "--field", d + "/data/gt_field.rfld",
               "--out", d + "/loc"}) == kExitOk);
  CHECK(read_tum_file((dir / "loc" / "trajectory_est.txt").string()).size() == 3);

  REQUIRE(run({"eval", "--config", cfg, "--est", d + "/loc/trajectory_est.txt", "--gt", d + "/data/query/poses.txt",
               "--frames", d + "/loc/frames.jsonl", "--field", d + "/train/field.rfld", "--database",
               d + "/data/database", "--out", d + "/eval"}) == kExitOk);
  std::ifstream ev(dir / "eval" / "report.json");
  const auto j = nlohmann::json::parse(ev);
  CHECK(j["frame_count"] == 3);
  CHECK(j["failure_count"] == 0);
  CHECK(j["ate_rmse_m"].get<double>() < 0.1);
  CHECK(j.contains("storage_ratio"));

  CHECK(run({"localize", "--config", cfg, "--queries", d + "/data/query", "--database", d + "/data/database",
             "--mode", "database", "--out", d + "/loc_db"}) != kExitConfig);
  CHECK(read_tum_file((dir / "loc_db" / "trajectory_est.txt").string()).size() == 3);

  SUBCASE("quality floor") {
    CHECK(run({"train", "--config", cfg, "--set", "train.psnr_floor=60", "--dataset", d + "/data/mapping", "--out",
               d + "/floor"}) == kExitQualityFloor);
  }
  SUBCASE("zero iterations writes only the report") {
    CHECK(run({"train", "--config", cfg, "--set", "train.iterations=0", "--dataset", d + "/data/mapping", "--out",
               d + "/zero"}) == kExitOk);
    CHECK(std::filesystem::exists(dir / "zero" / "train_report.json"));
    CHECK(!std::filesystem::exists(dir / "zero" / "field.rfld"));
  }
  SUBCASE("localization failure on an empty map") {
    save_field(RadianceField(Eigen::Vector3f::Constant(-1.5f), Eigen::Vector3f::Constant(1.5f), {8, 8, 8}),
               d + "/empty.rfld");
    CHECK(run({"localize", "--config", cfg, "--queries", d + "/data/query", "--field", d + "/empty.rfld", "--out",
               d + "/loc_fail"}) == kExitLocalization);
  }
}

TEST_CASE("exit codes for bad input") {
  const auto dir = testing::scratch_dir("cli_errors");
  const std::string d = dir.string();
  CHECK(run({}) == kExitConfig);
  CHECK(run({"frobnicate"}) == kExitConfig);
  CHECK(run({"--help"}) == kExitOk);
  CHECK(run({"synth", "--config", d + "/missing.ini"}) == kExitConfig);
  CHECK(run({"synth", "--set", "train.nonsense=1"}) == kExitConfig);
  CHECK(run({"train", "--dataset", d + "/missing", "--out", d + "/t"}) == kExitIo);
  std::ofstream(dir / "est.txt") << "0 0 0 0 0 0 0 1\n";
  CHECK(run({"eval", "--est", d + "/est.txt", "--gt", d + "/missing.txt", "--out", d + "/e"}) == kExitIo);

  Dataset empty;
  empty.camera = CameraModel::create(137.5, 137.5, 79.5, 59.5, 160, 120);
  save_dataset(empty, d + "/empty_queries");
  save_field(RadianceField(Eigen::Vector3f::Constant(-1.f), Eigen::Vector3f::Constant(1.f), {8, 8, 8}), d + "/f.rfld");
  CHECK(run({"localize", "--queries", d + "/empty_queries", "--field", d + "/f.rfld", "--out", d + "/l"}) ==
        kExitConfig);
  CHECK(run({"render", "--field", d + "/f.rfld", "--out", d + "/r"}) == kExitConfig);
}
