#include "rmap/pipeline.hpp"

#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rmap;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config(const fs::path& out) {
  // A reduced corridor run: enough structure to exercise every stage while
  // keeping the test quick.
  ordered_json j;
  j["seed"] = 11;
  j["out_dir"] = out.string();
  j["scene"] = {{"layout", "corridor"}, {"extents", 8.0}};
  j["sampler"] = {{"seed_threshold", 2.0},
                  {"lidar_patch_size", 1024},
                  {"radar_patch_size", 256},
                  {"subpatch_factor", 4.0},
                  {"anchors_per_seed", 2}};
  j["train"] = {{"base_lr", 2e-3}, {"batch_size", 8}, {"epochs", 2}, {"checkpoint_every", 0}};
  return PipelineConfig::from_json(j);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config validation", "[pipeline]") {
  SECTION("unknown top-level key is rejected by name") {
    ordered_json j;
    j["seeed"] = 3;
    REQUIRE_THROWS_WITH(PipelineConfig::from_json(j), Catch::Contains("seeed"));
  }

  SECTION("unknown nested key is rejected") {
    ordered_json j;
    j["network"] = {{"d_modell", 64}};
    REQUIRE_THROWS_WITH(PipelineConfig::from_json(j), Catch::Contains("d_modell"));
  }

  SECTION("scene and data are mutually exclusive") {
    ordered_json j;
    j["scene"] = ordered_json::object();
    j["data"] = {{"lidar_scans", "a"}, {"radar_scans", "b"}, {"trajectory", "c"}};
    REQUIRE_THROWS_WITH(PipelineConfig::from_json(j), Catch::Contains("mutually exclusive"));
  }

  SECTION("global seed propagates into sub-configs") {
    ordered_json j;
    j["seed"] = 99;
    const PipelineConfig cfg = PipelineConfig::from_json(j);
    REQUIRE(cfg.scene.has_value());
    REQUIRE(cfg.scene->seed == 99);
    REQUIRE(cfg.network.seed == 99);
    REQUIRE(cfg.train.seed == 99);
  }

  SECTION("defaults form a desk-scale configuration") {
    const PipelineConfig cfg = PipelineConfig::from_json(ordered_json::object());
    REQUIRE(cfg.network.n_in == 256);
    REQUIRE(cfg.sampler.radar_patch_size == cfg.network.n_in);
    REQUIRE(cfg.sampler.lidar_patch_size == cfg.network.output_size());
  }
}

TEST_CASE("missing trajectory fails at stage map-build", "[pipeline]") {
  const fs::path out = fs::temp_directory_path() / "rmap_test_pipe_missing";
  fs::remove_all(out);
  fs::create_directories(out / "lidar");
  fs::create_directories(out / "radar");

  ordered_json j;
  j["out_dir"] = (out / "run").string();
  j["data"] = {{"lidar_scans", (out / "lidar").string()},
               {"radar_scans", (out / "radar").string()},
               {"trajectory", (out / "nope.csv").string()}};
  const PipelineConfig cfg = PipelineConfig::from_json(j);
  try {
    run_pipeline(cfg);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    REQUIRE(e.stage_name == "map-build");
    REQUIRE(std::string(e.what()).find("nope.csv") != std::string::npos);
  }
}

TEST_CASE("end-to-end pipeline on a small corridor", "[pipeline][slow]") {
  const fs::path out = fs::temp_directory_path() / "rmap_test_pipe_run";
  fs::remove_all(out);
  const PipelineConfig cfg = small_config(out);

  const PipelineResult result = run_pipeline(cfg);

  SECTION("artifacts exist and the report is well-formed") {
    for (const char* f : {"map_lidar.ply", "map_radar.ply", "map_pred.ply", "report.json",
                          "train_log.csv", "patches/patches.json"})
      REQUIRE(fs::exists(out / f));
    const auto report = ordered_json::parse(slurp(out / "report.json"));
    REQUIRE(report.at("format") == "rmap-report");
    REQUIRE(report.at("map_ratio").get<double>() > 1.0);
    REQUIRE(report.contains("input_radar"));
    REQUIRE(report.contains("predicted"));
    REQUIRE(report.at("improved").contains("all"));
    REQUIRE(result.map_ratio == report.at("map_ratio").get<double>());
  }

  SECTION("skip-train reuses the checkpoint and reproduces the artifacts") {
    const fs::path out2 = fs::temp_directory_path() / "rmap_test_pipe_skip";
    fs::remove_all(out2);
    PipelineConfig cfg2 = small_config(out2);
    PipelineOptions opts;
    opts.skip_train = true;
    opts.checkpoint = out / "ckpt" / "final.ckpt";
    run_pipeline(cfg2, opts);
    REQUIRE(slurp(out2 / "map_pred.ply") == slurp(out / "map_pred.ply"));
    REQUIRE(slurp(out2 / "report.json") == slurp(out / "report.json"));
  }
}

TEST_CASE("pipeline runs are byte-identical for one seed", "[pipeline][slow]") {
  const fs::path out_a = fs::temp_directory_path() / "rmap_test_det_a";
  const fs::path out_b = fs::temp_directory_path() / "rmap_test_det_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);
  run_pipeline(small_config(out_a));
  run_pipeline(small_config(out_b));

  for (const char* f : {"map_lidar.ply", "map_radar.ply", "map_pred.ply", "report.json",
                        "train_log.csv", "patches/patches.json", "scans/traj.csv"})
    REQUIRE(slurp(out_a / f) == slurp(out_b / f));
}
