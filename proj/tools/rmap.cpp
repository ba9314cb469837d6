// rmap command-line tool: build probabilistic voxel maps from radar/lidar
// scans, sample trajectory-anchored patches, train and run the patch
// completion network, reassemble predicted maps, and evaluate them.

#include "rmap/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

using namespace rmap;

namespace {

std::uint64_t seed_with_override(std::uint64_t seed) {
  if (const char* env = std::getenv("RMAP_SEED")) return std::strtoull(env, nullptr, 10);
  return seed;
}

int cmd_synth(const std::string& layout, double extents, double noise, double dropout,
              double clutter, std::uint64_t seed, const std::string& out) {
  SceneSpec spec;
  spec.layout = scene_layout_from_string(layout);
  spec.extents = extents;
  spec.wall_noise_sigma = noise;
  spec.radar_dropout = dropout;
  spec.radar_clutter_rate = clutter;
  spec.seed = seed_with_override(seed);
  spec.validate();
  const SceneData scene = synth_scene(spec);
  write_scene(out, scene);
  std::size_t lidar_points = 0, radar_points = 0;
  for (const auto& [t, s] : scene.lidar_scans) lidar_points += s.size();
  for (const auto& [t, s] : scene.radar_scans) radar_points += s.size();
  std::cout << "synth: " << layout << ", " << scene.trajectory.size() << " poses, "
            << lidar_points << " lidar / " << radar_points << " radar points -> " << out << "\n";
  return 0;
}

struct MapBuildArgs {
  std::string sensor, scans, traj, out, csv;
  MapSettings settings;
};

int cmd_map_build(const MapBuildArgs& a) {
  const Trajectory traj = read_trajectory_csv(a.traj);
  const auto scans = load_scan_dir(a.scans);
  const SensorKind kind = a.sensor == "lidar" ? SensorKind::lidar : SensorKind::radar;
  const OccupancyMap map = build_map(scans, traj, kind, a.settings);
  write_ply(a.out, occupied_centers(map));
  if (!a.csv.empty()) write_map_csv(a.csv, map);
  std::cout << "map-build: " << scans.size() << " scans, " << map.occupied_count()
            << " occupied voxels -> " << a.out << "\n";
  return 0;
}

struct PatchSampleArgs {
  std::string lidar, radar, traj, out;
  double resolution = 0.15;
  SamplerConfig sampler;
};

int cmd_patch_sample(const PatchSampleArgs& a) {
  const PointCloud lidar = read_ply(a.lidar, Frame::world);
  const PointCloud radar = read_ply(a.radar, Frame::world);
  const Trajectory traj = read_trajectory_csv(a.traj);
  std::vector<std::string> warnings;
  const auto patches = sample_patches(lidar, radar, traj, a.sampler, &warnings);
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
  const double coverage = lidar_coverage_fraction(lidar, patches);
  if (coverage < 1.0)
    std::cerr << "warning: only " << coverage * 100.0 << "% of lidar points covered\n";
  write_patches(a.out, patches, a.resolution);
  std::cout << "patch-sample: " << patches.size() << " patch pairs -> " << a.out << "\n";
  return 0;
}

int cmd_train(const std::string& patches_dir, const std::string& config_file,
              const std::string& out) {
  ordered_json j = ordered_json::object();
  if (!config_file.empty()) {
    std::ifstream f(config_file);
    if (!f) throw ConfigError("config: cannot open " + config_file);
    try {
      f >> j;
    } catch (const std::exception& e) {
      throw ConfigError("config: parse error in " + config_file + ": " + e.what());
    }
    cfgdetail::reject_unknown_keys(j, {"network", "train"}, "train config");
  }
  const NetworkConfig net = j.contains("network") ? parse_network_config(j.at("network"))
                                                  : NetworkConfig::desk();
  TrainConfig tc;
  if (j.contains("train")) tc = parse_train_config(j.at("train"));

  const auto patches = load_patches(patches_dir);
  Trainer trainer(net, tc);
  ordered_json meta;
  meta["network"] = network_config_to_json(net);
  trainer.set_checkpoint_meta(meta);

  fs::create_directories(out);
  std::ofstream log_csv(fs::path(out) / "train_log.csv", std::ios::binary);
  log_csv << "epoch,lr,mean_loss\n";
  trainer.train(make_dataset(patches, net), out, [&](const EpochLog& e) {
    log_csv << e.epoch << "," << detail::format_value(e.lr) << ","
            << detail::format_value(e.mean_loss) << "\n";
    std::cout << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.mean_loss << "\n";
  });
  std::cout << "train: checkpoints in " << out << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt_file, const std::string& patches_dir,
              const std::string& out, std::size_t jobs) {
  const auto ck = load_checkpoint(ckpt_file);
  if (!ck.meta.contains("network"))
    throw ConfigError("checkpoint " + ckpt_file + " carries no network config");
  const NetworkConfig net = parse_network_config(ck.meta.at("network"));
  ParamMap params = build_params(net);
  restore_params(ck, params);
  const auto patches = load_patches(patches_dir, /*need_lidar=*/false);
  infer_patches(patches, net, params, out, jobs);
  std::cout << "infer: " << patches.size() << " patches -> " << out << "\n";
  return 0;
}

int cmd_assemble(const std::string& pred_dir, const std::string& manifest, double resolution,
                 const std::string& out) {
  const auto metas = load_patch_manifest(manifest);
  const PointCloud merged = assemble_predictions(pred_dir, metas, resolution);
  write_ply(out, merged);
  std::cout << "assemble: " << metas.size() << " patches, " << merged.size() << " voxels -> "
            << out << "\n";
  return 0;
}

int cmd_evaluate(const std::string& pred, const std::string& gt, const std::string& frame,
                 double fscore_d, const std::string& out, const std::string& csv) {
  const PointCloud p = read_ply(pred, Frame::world);
  const PointCloud g = read_ply(gt, Frame::world);
  const MetricsReport report = evaluate(p, g, frame, fscore_d);
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    const std::string body = report.to_json().dump(2) + "\n";
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw std::runtime_error("cannot write " + out);
  }
  if (!csv.empty()) {
    std::ofstream f(csv, std::ios::binary);
    const std::string row = report.csv_row() + "\n";
    f.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  std::cout << report.to_json().dump(2) << "\n";
  return 0;
}

int cmd_pipeline(const std::string& config_file, const std::string& out_override,
                 bool skip_train, const std::string& ckpt, std::size_t jobs_override) {
  PipelineConfig cfg = PipelineConfig::from_file(config_file);
  apply_seed_override(cfg);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (jobs_override > 0) cfg.jobs = jobs_override;
  if (skip_train && ckpt.empty()) throw ConfigError("--skip-train requires --ckpt");

  PipelineOptions opts;
  opts.skip_train = skip_train;
  opts.checkpoint = ckpt;
  opts.log = [](const std::string& msg) { std::cout << msg << "\n"; };

  const PipelineResult result = run_pipeline(cfg, opts);
  std::cout << "map ratio (lidar/radar): " << result.map_ratio << "\n"
            << "input radar map:  cd_l1 " << result.input_report.cd_l1 << ", cd_l2 "
            << result.input_report.cd_l2 << "\n"
            << "predicted map:    cd_l1 " << result.pred_report.cd_l1 << ", cd_l2 "
            << result.pred_report.cd_l2 << "\n"
            << "improved on all metrics: " << (result.improved_all ? "yes" : "no") << "\n"
            << "report: " << result.report_file.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rmap: probabilistic radar/lidar voxel maps and patch completion"};
  app.require_subcommand(1);
  std::function<int()> action;

  // synth
  {
    auto* cmd = app.add_subcommand("synth", "Generate a synthetic scene (scans + trajectory)");
    auto layout = std::make_shared<std::string>("corridor");
    auto extents = std::make_shared<double>(12.0);
    auto noise = std::make_shared<double>(0.05);
    auto dropout = std::make_shared<double>(0.97);
    auto clutter = std::make_shared<double>(10.0);
    auto seed = std::make_shared<std::uint64_t>(1);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--layout", *layout, "corridor | two_room | L_tunnel");
    cmd->add_option("--extents", *extents, "principal dimension, meters");
    cmd->add_option("--noise", *noise, "radar wall noise sigma, meters");
    cmd->add_option("--dropout", *dropout, "radar dropout probability");
    cmd->add_option("--clutter", *clutter, "radar clutter points per scan");
    cmd->add_option("--seed", *seed, "scene seed (RMAP_SEED overrides)");
    cmd->add_option("--out", *out, "output directory")->required();
    cmd->callback([=, &action] {
      action = [=] {
        return cmd_synth(*layout, *extents, *noise, *dropout, *clutter, *seed, *out);
      };
    });
  }

  // map-build
  {
    auto* cmd = app.add_subcommand("map-build", "Build an occupancy map from posed scans");
    auto a = std::make_shared<MapBuildArgs>();
    cmd->add_option("--sensor", a->sensor, "lidar | radar")
        ->required()
        ->check(CLI::IsMember({"lidar", "radar"}));
    cmd->add_option("--res", a->settings.resolution, "voxel resolution, meters");
    cmd->add_option("--scans", a->scans, "directory of {timestamp}.ply scans")->required();
    cmd->add_option("--traj", a->traj, "trajectory CSV")->required();
    cmd->add_option("--out", a->out, "output PLY of occupied voxel centers")->required();
    cmd->add_option("--csv", a->csv, "optional debug CSV (i,j,k,logodds)");
    cmd->add_option("--clamp-min", a->settings.clamp_min, "log-odds clamp lower bound");
    cmd->add_option("--clamp-max", a->settings.clamp_max, "log-odds clamp upper bound");
    cmd->add_option("--occ-threshold", a->settings.occupied_threshold, "occupied probability");
    cmd->add_option("--lidar-fov", a->settings.lidar_fov_azimuth, "lidar azimuth filter, deg");
    cmd->add_option("--lidar-hit", a->settings.lidar.l_hit, "lidar hit log-odds");
    cmd->add_option("--lidar-miss", a->settings.lidar.l_miss, "lidar miss log-odds");
    cmd->add_option("--radar-az", a->settings.radar.azimuth_fov, "radar azimuth FoV, deg");
    cmd->add_option("--radar-el", a->settings.radar.elevation_fov, "radar elevation FoV, deg");
    cmd->add_option("--radar-range", a->settings.radar.max_range, "radar max range, meters");
    cmd->add_option("--radar-hit", a->settings.radar.l_hit, "radar hit log-odds");
    cmd->add_option("--radar-miss", a->settings.radar.l_miss, "radar miss log-odds");
    cmd->add_option("--hit-radius", a->settings.radar.hit_radius, "hit radius, voxels");
    cmd->callback([a, &action] { action = [a] { return cmd_map_build(*a); }; });
  }

  // patch-sample
  {
    auto* cmd = app.add_subcommand("patch-sample", "Sample co-located patch pairs from maps");
    auto a = std::make_shared<PatchSampleArgs>();
    cmd->add_option("--lidar", a->lidar, "lidar map PLY")->required();
    cmd->add_option("--radar", a->radar, "radar map PLY")->required();
    cmd->add_option("--traj", a->traj, "trajectory CSV")->required();
    cmd->add_option("--out", a->out, "output patch directory")->required();
    cmd->add_option("--res", a->resolution, "map resolution recorded in the manifest");
    cmd->add_option("--p-th", a->sampler.seed_threshold, "seed point spacing, meters");
    cmd->add_option("--nl", a->sampler.lidar_patch_size, "lidar patch size N^L");
    cmd->add_option("--nr", a->sampler.radar_patch_size, "radar patch size N^R");
    cmd->add_option("--a", a->sampler.subpatch_factor, "sub-patch factor a");
    cmd->add_option("--t", a->sampler.anchors_per_seed, "anchors per seed t");
    cmd->callback([a, &action] { action = [a] { return cmd_patch_sample(*a); }; });
  }

  // train
  {
    auto* cmd = app.add_subcommand("train", "Train the completion network on patch pairs");
    auto patches = std::make_shared<std::string>();
    auto config = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--patches", *patches, "patch directory (with patches.json)")->required();
    cmd->add_option("--config", *config, "JSON with 'network' and 'train' sections");
    cmd->add_option("--out", *out, "checkpoint output directory")->required();
    cmd->callback([=, &action] { action = [=] { return cmd_train(*patches, *config, *out); }; });
  }

  // infer
  {
    auto* cmd = app.add_subcommand("infer", "Run the network on stored radar patches");
    auto ckpt = std::make_shared<std::string>();
    auto patches = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto jobs = std::make_shared<std::size_t>(1);
    cmd->add_option("--ckpt", *ckpt, "checkpoint file")->required();
    cmd->add_option("--patches", *patches, "patch directory")->required();
    cmd->add_option("--out", *out, "prediction output directory")->required();
    cmd->add_option("--jobs", *jobs, "parallel workers");
    cmd->callback(
        [=, &action] { action = [=] { return cmd_infer(*ckpt, *patches, *out, *jobs); }; });
  }

  // assemble
  {
    auto* cmd = app.add_subcommand("assemble", "Merge predicted patches into a map cloud");
    auto pred = std::make_shared<std::string>();
    auto manifest = std::make_shared<std::string>();
    auto res = std::make_shared<double>(0.15);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--pred", *pred, "directory of patch_{k}_pred.ply")->required();
    cmd->add_option("--manifest", *manifest, "patches.json from patch-sample")->required();
    cmd->add_option("--res", *res, "voxel resolution, meters");
    cmd->add_option("--out", *out, "output PLY")->required();
    cmd->callback(
        [=, &action] { action = [=] { return cmd_assemble(*pred, *manifest, *res, *out); }; });
  }

  // evaluate
  {
    auto* cmd = app.add_subcommand("evaluate", "Compute CD, F-Score and deviation percentiles");
    auto pred = std::make_shared<std::string>();
    auto gt = std::make_shared<std::string>();
    auto frame = std::make_shared<std::string>("world");
    auto fscore_d = std::make_shared<double>(0.01);
    auto out = std::make_shared<std::string>();
    auto csv = std::make_shared<std::string>();
    cmd->add_option("--pred", *pred, "predicted cloud PLY")->required();
    cmd->add_option("--gt", *gt, "ground-truth cloud PLY")->required();
    cmd->add_option("--frame", *frame, "world | normalized")
        ->check(CLI::IsMember({"world", "normalized"}));
    cmd->add_option("--fscore-d", *fscore_d, "F-Score distance threshold");
    cmd->add_option("--out", *out, "report JSON path");
    cmd->add_option("--csv", *csv, "optional CSV row output path");
    cmd->callback([=, &action] {
      action = [=] { return cmd_evaluate(*pred, *gt, *frame, *fscore_d, *out, *csv); };
    });
  }

  // pipeline
  {
    auto* cmd = app.add_subcommand("pipeline", "Run the full pipeline from a config file");
    auto config = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto skip_train = std::make_shared<bool>(false);
    auto ckpt = std::make_shared<std::string>();
    auto jobs = std::make_shared<std::size_t>(0);
    cmd->add_option("--config", *config, "pipeline config JSON")->required();
    cmd->add_option("--out", *out, "override the config's out_dir");
    cmd->add_flag("--skip-train", *skip_train, "reuse an existing checkpoint");
    cmd->add_option("--ckpt", *ckpt, "checkpoint for --skip-train");
    cmd->add_option("--jobs", *jobs, "override worker parallelism");
    cmd->callback([=, &action] {
      action = [=] { return cmd_pipeline(*config, *out, *skip_train, *ckpt, *jobs); };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return action ? action() : 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
