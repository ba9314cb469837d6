#pragma once

#include "rmap/assembly.hpp"
#include "rmap/checkpoint.hpp"
#include "rmap/loss.hpp"
#include "rmap/metrics.hpp"
#include "rmap/network.hpp"
#include "rmap/occupancy.hpp"
#include "rmap/patch_sampler.hpp"
#include "rmap/ply_io.hpp"
#include "rmap/synth.hpp"
#include "rmap/train.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rmap {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

/// Configuration problems (bad JSON, unknown keys, missing files named in
/// the config). The CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A pipeline stage failed; carries the stage name. Exit code 3.
struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& cause)
      : std::runtime_error("stage " + stage + ": " + cause), stage_name(stage) {}
  std::string stage_name;
};

namespace cfgdetail {

inline void reject_unknown_keys(const ordered_json& j, const std::vector<std::string>& allowed,
                                const std::string& context) {
  if (!j.is_object()) throw ConfigError("config: " + context + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const std::string& a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("config: unknown key '" + key + "' in " + context);
  }
}

template <typename T>
T get_or(const ordered_json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception& e) {
    throw ConfigError("config: bad value for '" + key + "': " + e.what());
  }
}

}  // namespace cfgdetail

struct MapSettings {
  double resolution = 0.15;
  double clamp_min = -2.0;
  double clamp_max = 3.5;
  double occupied_threshold = 0.5;
  double lidar_fov_azimuth = 180.0;  // applied to lidar scans before insertion
  LidarSensorConfig lidar;
  RadarSensorConfig radar;

  OccupancyMap make_map() const {
    return OccupancyMap(resolution, clamp_min, clamp_max, occupied_threshold);
  }
};

struct MetricsSettings {
  double fscore_d = 0.01;
};

/// One document holding every module's configuration. Unknown keys are
/// rejected on load.
struct PipelineConfig {
  std::uint64_t seed = 1;
  fs::path out_dir = "rmap_out";
  std::size_t jobs = 1;
  std::optional<SceneSpec> scene;  // synthesize when set
  fs::path lidar_scan_dir, radar_scan_dir, trajectory_file;  // used when scene is absent
  MapSettings map;
  SamplerConfig sampler;
  NetworkConfig network;
  TrainConfig train;
  MetricsSettings metrics;

  static PipelineConfig from_json(const ordered_json& j);
  static PipelineConfig from_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path.string());
    ordered_json j;
    try {
      f >> j;
    } catch (const std::exception& e) {
      throw ConfigError("config: parse error in " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

inline NetworkConfig parse_network_config(const ordered_json& j) {
  using cfgdetail::get_or;
  cfgdetail::reject_unknown_keys(
      j,
      {"preset", "n_in", "n_coarse", "upsample_factors", "d_model", "n_heads", "n_enc_layers",
       "n_dec_layers", "knn_k", "n_proxies", "seed"},
      "network");
  const std::string preset = get_or<std::string>(j, "preset", "desk");
  NetworkConfig cfg;
  if (preset == "desk")
    cfg = NetworkConfig::desk();
  else if (preset == "full")
    cfg = NetworkConfig::full_scale();
  else
    throw ConfigError("config: unknown network preset '" + preset + "'");
  cfg.n_in = get_or(j, "n_in", cfg.n_in);
  cfg.n_coarse = get_or(j, "n_coarse", cfg.n_coarse);
  cfg.upsample_factors = get_or(j, "upsample_factors", cfg.upsample_factors);
  cfg.d_model = get_or(j, "d_model", cfg.d_model);
  cfg.n_heads = get_or(j, "n_heads", cfg.n_heads);
  cfg.n_enc_layers = get_or(j, "n_enc_layers", cfg.n_enc_layers);
  cfg.n_dec_layers = get_or(j, "n_dec_layers", cfg.n_dec_layers);
  cfg.knn_k = get_or(j, "knn_k", cfg.knn_k);
  cfg.n_proxies = get_or(j, "n_proxies", cfg.n_proxies);
  cfg.seed = get_or(j, "seed", cfg.seed);
  cfg.validate();
  return cfg;
}

inline ordered_json network_config_to_json(const NetworkConfig& cfg) {
  ordered_json j;
  j["n_in"] = cfg.n_in;
  j["n_coarse"] = cfg.n_coarse;
  j["upsample_factors"] = cfg.upsample_factors;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["n_enc_layers"] = cfg.n_enc_layers;
  j["n_dec_layers"] = cfg.n_dec_layers;
  j["knn_k"] = cfg.knn_k;
  j["n_proxies"] = cfg.n_proxies;
  j["seed"] = cfg.seed;
  return j;
}

inline TrainConfig parse_train_config(const ordered_json& j) {
  using cfgdetail::get_or;
  cfgdetail::reject_unknown_keys(j,
                                 {"base_lr", "weight_decay", "batch_size", "epochs",
                                  "checkpoint_every", "lr_decay", "lr_period",
                                  "continuous_decay", "seed"},
                                 "train");
  TrainConfig cfg;
  cfg.base_lr = get_or(j, "base_lr", cfg.base_lr);
  cfg.weight_decay = get_or(j, "weight_decay", cfg.weight_decay);
  cfg.batch_size = get_or(j, "batch_size", cfg.batch_size);
  cfg.epochs = get_or(j, "epochs", cfg.epochs);
  cfg.checkpoint_every = get_or(j, "checkpoint_every", cfg.checkpoint_every);
  cfg.lr_decay = get_or(j, "lr_decay", cfg.lr_decay);
  cfg.lr_period = get_or(j, "lr_period", cfg.lr_period);
  cfg.continuous_decay = get_or(j, "continuous_decay", cfg.continuous_decay);
  cfg.seed = get_or(j, "seed", cfg.seed);
  return cfg;
}

inline SamplerConfig parse_sampler_config(const ordered_json& j, const SamplerConfig& base) {
  using cfgdetail::get_or;
  cfgdetail::reject_unknown_keys(j,
                                 {"seed_threshold", "lidar_patch_size", "radar_patch_size",
                                  "subpatch_factor", "anchors_per_seed"},
                                 "sampler");
  SamplerConfig cfg = base;
  cfg.seed_threshold = get_or(j, "seed_threshold", cfg.seed_threshold);
  cfg.lidar_patch_size = get_or(j, "lidar_patch_size", cfg.lidar_patch_size);
  cfg.radar_patch_size = get_or(j, "radar_patch_size", cfg.radar_patch_size);
  cfg.subpatch_factor = get_or(j, "subpatch_factor", cfg.subpatch_factor);
  cfg.anchors_per_seed = get_or(j, "anchors_per_seed", cfg.anchors_per_seed);
  cfg.validate();
  return cfg;
}

inline SceneSpec parse_scene_spec(const ordered_json& j) {
  using cfgdetail::get_or;
  cfgdetail::reject_unknown_keys(
      j, {"layout", "extents", "wall_noise_sigma", "radar_dropout", "radar_clutter_rate", "seed"},
      "scene");
  SceneSpec spec;
  spec.layout = scene_layout_from_string(get_or<std::string>(j, "layout", "corridor"));
  spec.extents = get_or(j, "extents", spec.extents);
  spec.wall_noise_sigma = get_or(j, "wall_noise_sigma", spec.wall_noise_sigma);
  spec.radar_dropout = get_or(j, "radar_dropout", spec.radar_dropout);
  spec.radar_clutter_rate = get_or(j, "radar_clutter_rate", spec.radar_clutter_rate);
  spec.seed = get_or(j, "seed", spec.seed);
  spec.validate();
  return spec;
}

inline RadarSensorConfig parse_radar_config(const ordered_json& j, const RadarSensorConfig& base) {
  using cfgdetail::get_or;
  cfgdetail::reject_unknown_keys(
      j, {"azimuth_fov", "elevation_fov", "max_range", "l_hit", "l_miss", "hit_radius"},
      "map.radar");
  RadarSensorConfig cfg = base;
  cfg.azimuth_fov = get_or(j, "azimuth_fov", cfg.azimuth_fov);
  cfg.elevation_fov = get_or(j, "elevation_fov", cfg.elevation_fov);
  cfg.max_range = get_or(j, "max_range", cfg.max_range);
  cfg.l_hit = get_or(j, "l_hit", cfg.l_hit);
  cfg.l_miss = get_or(j, "l_miss", cfg.l_miss);
  cfg.hit_radius = get_or(j, "hit_radius", cfg.hit_radius);
  cfg.validate();
  return cfg;
}

inline MapSettings parse_map_settings(const ordered_json& j) {
  using cfgdetail::get_or;
  cfgdetail::reject_unknown_keys(j,
                                 {"resolution", "clamp_min", "clamp_max", "occupied_threshold",
                                  "lidar_fov_azimuth", "lidar", "radar"},
                                 "map");
  MapSettings m;
  m.resolution = get_or(j, "resolution", m.resolution);
  m.clamp_min = get_or(j, "clamp_min", m.clamp_min);
  m.clamp_max = get_or(j, "clamp_max", m.clamp_max);
  m.occupied_threshold = get_or(j, "occupied_threshold", m.occupied_threshold);
  m.lidar_fov_azimuth = get_or(j, "lidar_fov_azimuth", m.lidar_fov_azimuth);
  if (j.contains("lidar")) {
    cfgdetail::reject_unknown_keys(j.at("lidar"), {"l_hit", "l_miss"}, "map.lidar");
    m.lidar.l_hit = get_or(j.at("lidar"), "l_hit", m.lidar.l_hit);
    m.lidar.l_miss = get_or(j.at("lidar"), "l_miss", m.lidar.l_miss);
  }
  if (j.contains("radar")) m.radar = parse_radar_config(j.at("radar"), m.radar);
  return m;
}

inline PipelineConfig PipelineConfig::from_json(const ordered_json& j) {
  using cfgdetail::get_or;
  cfgdetail::reject_unknown_keys(
      j, {"seed", "out_dir", "jobs", "scene", "data", "map", "sampler", "network", "train",
          "metrics"},
      "top level");
  PipelineConfig cfg;
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.out_dir = get_or<std::string>(j, "out_dir", cfg.out_dir.string());
  cfg.jobs = get_or(j, "jobs", cfg.jobs);
  if (cfg.jobs == 0) cfg.jobs = 1;

  if (j.contains("scene") && j.contains("data"))
    throw ConfigError("config: 'scene' and 'data' are mutually exclusive");
  if (j.contains("data")) {
    const auto& d = j.at("data");
    cfgdetail::reject_unknown_keys(d, {"lidar_scans", "radar_scans", "trajectory"}, "data");
    if (!d.contains("lidar_scans") || !d.contains("radar_scans") || !d.contains("trajectory"))
      throw ConfigError("config: 'data' needs lidar_scans, radar_scans and trajectory");
    cfg.lidar_scan_dir = d.at("lidar_scans").get<std::string>();
    cfg.radar_scan_dir = d.at("radar_scans").get<std::string>();
    cfg.trajectory_file = d.at("trajectory").get<std::string>();
  } else {
    cfg.scene = j.contains("scene") ? parse_scene_spec(j.at("scene")) : SceneSpec{};
    cfg.scene->seed = j.contains("scene") && j.at("scene").contains("seed") ? cfg.scene->seed
                                                                            : cfg.seed;
  }

  if (j.contains("map")) cfg.map = parse_map_settings(j.at("map"));

  // Desk-scale sampler defaults to match the desk network preset
  // (N^L = network output size, N^R = network input size).
  cfg.sampler.lidar_patch_size = 1024;
  cfg.sampler.radar_patch_size = 256;
  if (j.contains("sampler")) cfg.sampler = parse_sampler_config(j.at("sampler"), cfg.sampler);
  cfg.network = j.contains("network") ? parse_network_config(j.at("network"))
                                      : NetworkConfig::desk();
  if (j.contains("train")) cfg.train = parse_train_config(j.at("train"));
  if (j.contains("metrics")) {
    cfgdetail::reject_unknown_keys(j.at("metrics"), {"fscore_d"}, "metrics");
    cfg.metrics.fscore_d = get_or(j.at("metrics"), "fscore_d", cfg.metrics.fscore_d);
  }

  // One seed drives everything unless a sub-config pins its own.
  if (!j.contains("network") || !j.at("network").contains("seed")) cfg.network.seed = cfg.seed;
  if (!j.contains("train") || !j.at("train").contains("seed")) cfg.train.seed = cfg.seed;
  return cfg;
}

/// RMAP_SEED overrides the config seed (and the seeds derived from it).
inline void apply_seed_override(PipelineConfig& cfg) {
  if (const char* env = std::getenv("RMAP_SEED")) {
    const std::uint64_t seed = std::strtoull(env, nullptr, 10);
    cfg.seed = seed;
    if (cfg.scene) cfg.scene->seed = seed;
    cfg.network.seed = seed;
    cfg.train.seed = seed;
  }
}

// ---------------------------------------------------------------------------
// Stage helpers (shared by the CLI subcommands and the pipeline)
// ---------------------------------------------------------------------------

inline void write_scene(const fs::path& dir, const SceneData& scene) {
  fs::create_directories(dir / "lidar");
  fs::create_directories(dir / "radar");
  for (const auto& [t, scan] : scene.lidar_scans)
    write_ply(dir / "lidar" / (detail::format_value(t) + ".ply"), scan);
  for (const auto& [t, scan] : scene.radar_scans)
    write_ply(dir / "radar" / (detail::format_value(t) + ".ply"), scan);
  write_trajectory_csv(dir / "traj.csv", scene.trajectory);
}

/// Pose for a scan timestamp: the trajectory pose with the nearest time.
inline const Pose& pose_at(const Trajectory& traj, double t) {
  if (traj.empty()) throw std::invalid_argument("pose_at: empty trajectory");
  const auto it = std::lower_bound(traj.timestamps.begin(), traj.timestamps.end(), t);
  std::size_t idx = static_cast<std::size_t>(it - traj.timestamps.begin());
  if (idx == traj.size()) return traj.poses.back();
  if (idx > 0 && t - traj.timestamps[idx - 1] <= traj.timestamps[idx] - t) --idx;
  return traj.poses[idx];
}

enum class SensorKind { lidar, radar };

inline OccupancyMap build_map(const std::vector<std::pair<double, PointCloud>>& scans,
                              const Trajectory& traj, SensorKind kind, const MapSettings& ms) {
  OccupancyMap map = ms.make_map();
  for (const auto& [t, scan] : scans) {
    const Pose& pose = pose_at(traj, t);
    if (kind == SensorKind::lidar) {
      const PointCloud filtered = fov_filter(scan, ms.lidar_fov_azimuth, 180.0);
      insert_lidar_scan(map, filtered, pose, ms.lidar);
    } else {
      insert_radar_scan(map, scan, pose, ms.radar);
    }
  }
  return map;
}

/// Writes patch PLYs plus the patches.json manifest. The stored scale is
/// derived from the lidar patch (max distance from the anchor), and is the
/// transform later applied to the radar input and inverted at assembly.
inline ordered_json write_patches(const fs::path& dir, const std::vector<PatchPair>& patches,
                                  double resolution) {
  fs::create_directories(dir);
  ordered_json manifest;
  manifest["format"] = "rmap-patches";
  manifest["resolution"] = resolution;
  manifest["frame"] = "world";
  manifest["count"] = patches.size();
  ordered_json list = ordered_json::array();
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const PatchPair& p = patches[k];
    const auto [lidar_norm, tf] = normalize_patch(p.lidar_patch, p.anchor);
    const std::string lidar_file = "patch_" + std::to_string(k) + "_lidar.ply";
    const std::string radar_file = "patch_" + std::to_string(k) + "_radar.ply";
    write_ply(dir / lidar_file, p.lidar_patch);
    write_ply(dir / radar_file, p.radar_patch);
    ordered_json e;
    e["index"] = k;
    e["seed_index"] = p.seed_index;
    e["anchor"] = {p.anchor.x(), p.anchor.y(), p.anchor.z()};
    e["scale"] = tf.scale;
    e["n_lidar"] = p.lidar_patch.size();
    e["n_radar"] = p.radar_patch.size();
    e["lidar_file"] = lidar_file;
    e["radar_file"] = radar_file;
    list.push_back(e);
  }
  manifest["patches"] = list;
  std::ofstream f(dir / "patches.json", std::ios::binary);
  const std::string body = manifest.dump(2) + "\n";
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw std::runtime_error("write_patches: cannot write manifest in " + dir.string());
  return manifest;
}

struct PatchMeta {
  std::size_t index = 0;
  std::size_t seed_index = 0;
  PatchTransform transform;
  std::string lidar_file, radar_file;
};

inline std::vector<PatchMeta> load_patch_manifest(const fs::path& manifest_file) {
  std::ifstream f(manifest_file);
  if (!f) throw std::runtime_error("cannot open manifest " + manifest_file.string());
  ordered_json manifest;
  try {
    f >> manifest;
  } catch (const std::exception& e) {
    throw std::runtime_error("bad manifest " + manifest_file.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "rmap-patches")
    throw std::runtime_error("unrecognized manifest format in " + manifest_file.string());
  std::vector<PatchMeta> out;
  for (const auto& e : manifest.at("patches")) {
    PatchMeta p;
    p.index = e.at("index");
    p.seed_index = e.at("seed_index");
    const auto& a = e.at("anchor");
    p.transform.center =
        Point3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
    p.transform.scale = e.at("scale");
    p.lidar_file = e.at("lidar_file");
    p.radar_file = e.at("radar_file");
    out.push_back(std::move(p));
  }
  return out;
}

struct StoredPatch {
  std::size_t index = 0;
  std::size_t seed_index = 0;
  PatchTransform transform;
  PointCloud lidar_patch;  // world frame
  PointCloud radar_patch;  // world frame
};

inline std::vector<StoredPatch> load_patches(const fs::path& dir, bool need_lidar = true) {
  std::vector<StoredPatch> out;
  for (const PatchMeta& m : load_patch_manifest(dir / "patches.json")) {
    StoredPatch p;
    p.index = m.index;
    p.seed_index = m.seed_index;
    p.transform = m.transform;
    p.radar_patch = read_ply(dir / m.radar_file, Frame::world);
    if (need_lidar) p.lidar_patch = read_ply(dir / m.lidar_file, Frame::world);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<TrainSample> make_dataset(const std::vector<StoredPatch>& patches,
                                             const NetworkConfig& net) {
  std::vector<TrainSample> dataset;
  dataset.reserve(patches.size());
  for (const StoredPatch& p : patches)
    dataset.push_back(make_train_sample(normalize_with(p.radar_patch, p.transform),
                                        normalize_with(p.lidar_patch, p.transform), net));
  return dataset;
}

/// Runs the network on every stored radar patch and writes
/// patch_{k}_pred.ply (normalized frame). Patches are independent, so they
/// fan out over `jobs` workers with results in index order.
inline void infer_patches(const std::vector<StoredPatch>& patches, const NetworkConfig& net,
                          const ParamMap& params, const fs::path& out_dir, std::size_t jobs = 1) {
  fs::create_directories(out_dir);
  std::vector<PointCloud> results(patches.size());
  const auto work = [&](std::size_t worker) {
    for (std::size_t k = worker; k < patches.size(); k += jobs) {
      const PointCloud input =
          fit_to_size(normalize_with(patches[k].radar_patch, patches[k].transform), net.n_in);
      results[k] = predict(input, net, params);
    }
  };
  if (jobs <= 1) {
    work(0);
  } else {
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) workers.emplace_back(work, w);
    for (auto& t : workers) t.join();
  }
  for (std::size_t k = 0; k < patches.size(); ++k)
    write_ply(out_dir / ("patch_" + std::to_string(patches[k].index) + "_pred.ply"), results[k]);
}

inline PointCloud assemble_predictions(const fs::path& pred_dir,
                                       const std::vector<PatchMeta>& patches, double resolution) {
  std::vector<std::pair<PointCloud, PatchTransform>> preds;
  preds.reserve(patches.size());
  for (const PatchMeta& p : patches) {
    const fs::path file = pred_dir / ("patch_" + std::to_string(p.index) + "_pred.ply");
    preds.emplace_back(read_ply(file, Frame::world), p.transform);
  }
  return merge_predictions(preds, resolution);
}

// ---------------------------------------------------------------------------
// End-to-end pipeline
// ---------------------------------------------------------------------------

struct PipelineOptions {
  bool skip_train = false;
  fs::path checkpoint;  // reused when skip_train is set
  std::function<void(const std::string&)> log;  // optional progress sink
};

struct PipelineResult {
  double map_ratio = 0.0;
  MetricsReport input_report;  // radar map vs lidar map
  MetricsReport pred_report;   // predicted map vs lidar map
  bool improved_all = false;
  fs::path report_file;
};

inline PipelineResult run_pipeline(const PipelineConfig& cfg, const PipelineOptions& opts = {}) {
  const auto log = [&](const std::string& msg) {
    if (opts.log) opts.log(msg);
  };
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);

  const auto stage = [&](const std::string& name, auto&& fn) {
    log("stage " + name);
    try {
      fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  };

  // -- data ----------------------------------------------------------------
  fs::path lidar_dir = cfg.lidar_scan_dir;
  fs::path radar_dir = cfg.radar_scan_dir;
  fs::path traj_file = cfg.trajectory_file;
  stage("data", [&] {
    if (cfg.scene) {
      const SceneData scene = synth_scene(*cfg.scene);
      write_scene(out / "scans", scene);
      lidar_dir = out / "scans" / "lidar";
      radar_dir = out / "scans" / "radar";
      traj_file = out / "scans" / "traj.csv";
    }
  });

  // -- map-build -----------------------------------------------------------
  stage("map-build", [&] {
    if (!fs::is_regular_file(traj_file))
      throw std::runtime_error("missing trajectory file " + traj_file.string());
    const Trajectory traj = read_trajectory_csv(traj_file);
    const OccupancyMap lidar_map = build_map(load_scan_dir(lidar_dir), traj, SensorKind::lidar,
                                             cfg.map);
    const OccupancyMap radar_map = build_map(load_scan_dir(radar_dir), traj, SensorKind::radar,
                                             cfg.map);
    write_ply(out / "map_lidar.ply", occupied_centers(lidar_map));
    write_ply(out / "map_radar.ply", occupied_centers(radar_map));
    write_map_csv(out / "map_lidar.csv", lidar_map);
    write_map_csv(out / "map_radar.csv", radar_map);
  });

  // -- patch-sample ----------------------------------------------------------
  stage("patch-sample", [&] {
    const PointCloud lidar_cloud = read_ply(out / "map_lidar.ply", Frame::world);
    const PointCloud radar_cloud = read_ply(out / "map_radar.ply", Frame::world);
    const Trajectory traj = read_trajectory_csv(traj_file);
    std::vector<std::string> warnings;
    const auto patches = sample_patches(lidar_cloud, radar_cloud, traj, cfg.sampler, &warnings);
    for (const std::string& w : warnings) log("patch-sample: warning: " + w);
    const double coverage = lidar_coverage_fraction(lidar_cloud, patches);
    if (coverage < 1.0) log("patch-sample: warning: lidar coverage " + std::to_string(coverage));
    write_patches(out / "patches", patches, cfg.map.resolution);
  });

  // -- train (or load) -------------------------------------------------------
  fs::path ckpt = opts.checkpoint;
  stage("train", [&] {
    if (opts.skip_train) {
      if (!fs::is_regular_file(ckpt))
        throw std::runtime_error("missing checkpoint " + ckpt.string());
      return;
    }
    const auto patches = load_patches(out / "patches");
    Trainer trainer(cfg.network, cfg.train);
    ordered_json meta;
    meta["network"] = network_config_to_json(cfg.network);
    trainer.set_checkpoint_meta(meta);
    std::ofstream log_csv(out / "train_log.csv", std::ios::binary);
    log_csv << "epoch,lr,mean_loss\n";
    trainer.train(make_dataset(patches, cfg.network), out / "ckpt",
                  [&](const EpochLog& e) {
                    log_csv << e.epoch << "," << detail::format_value(e.lr) << ","
                            << detail::format_value(e.mean_loss) << "\n";
                  });
    ckpt = out / "ckpt" / "final.ckpt";
  });

  // -- infer -----------------------------------------------------------------
  stage("infer", [&] {
    const auto patches = load_patches(out / "patches", /*need_lidar=*/false);
    ParamMap params = build_params(cfg.network);
    restore_params(load_checkpoint(ckpt), params);
    infer_patches(patches, cfg.network, params, out / "pred", cfg.jobs);
  });

  // -- assemble ----------------------------------------------------------------
  stage("assemble", [&] {
    const auto metas = load_patch_manifest(out / "patches" / "patches.json");
    write_ply(out / "map_pred.ply", assemble_predictions(out / "pred", metas, cfg.map.resolution));
  });

  // -- evaluate ----------------------------------------------------------------
  PipelineResult result;
  stage("evaluate", [&] {
    const PointCloud lidar_cloud = read_ply(out / "map_lidar.ply", Frame::world);
    const PointCloud radar_cloud = read_ply(out / "map_radar.ply", Frame::world);
    const PointCloud pred_cloud = read_ply(out / "map_pred.ply", Frame::world);

    result.input_report = evaluate(radar_cloud, lidar_cloud, "world", cfg.metrics.fscore_d);
    result.pred_report = evaluate(pred_cloud, lidar_cloud, "world", cfg.metrics.fscore_d);

    // The map clouds carry one center per occupied voxel, so the voxel
    // ratio is a straight count ratio.
    if (radar_cloud.empty())
      throw std::runtime_error("map_ratio: division by zero (no occupied radar voxels)");
    result.map_ratio =
        static_cast<double>(lidar_cloud.size()) / static_cast<double>(radar_cloud.size());

    ordered_json improved;
    improved["cd_l1"] = result.pred_report.cd_l1 < result.input_report.cd_l1;
    improved["cd_l2"] = result.pred_report.cd_l2 < result.input_report.cd_l2;
    ordered_json dev;
    bool all = improved["cd_l1"].get<bool>() && improved["cd_l2"].get<bool>();
    for (const auto& [p, v] : result.pred_report.deviation_percentiles) {
      const bool better = v < result.input_report.deviation_percentiles.at(p);
      std::ostringstream key;
      key << p;
      dev[key.str()] = better;
      all = all && better;
    }
    improved["deviation_percentiles"] = dev;
    improved["all"] = all;
    result.improved_all = all;

    ordered_json report;
    report["format"] = "rmap-report";
    report["map_ratio"] = result.map_ratio;
    report["input_radar"] = result.input_report.to_json();
    report["predicted"] = result.pred_report.to_json();
    report["improved"] = improved;
    result.report_file = out / "report.json";
    std::ofstream f(result.report_file, std::ios::binary);
    const std::string body = report.dump(2) + "\n";
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw std::runtime_error("cannot write " + result.report_file.string());
  });

  return result;
}

}  // namespace rmap
