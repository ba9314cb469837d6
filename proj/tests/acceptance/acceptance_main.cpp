// Acceptance suite: one pass/fail line per criterion, exit code 0 only when
// every criterion holds. Each criterion pins its thresholds in code.

#include "rmap/fps.hpp"
#include "rmap/kdtree.hpp"
#include "rmap/loss.hpp"
#include "rmap/metrics.hpp"
#include "rmap/network.hpp"
#include "rmap/pipeline.hpp"
#include "rmap/rng.hpp"
#include "rmap/synth.hpp"
#include "rmap/train.hpp"

#include "../oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace rmap;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void run_criterion(int number, const std::string& name, const std::function<bool(std::string&)>& fn) {
  const auto start = std::chrono::steady_clock::now();
  std::string detail;
  bool ok = false;
  try {
    ok = fn(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("[%s] %d. %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", number, name.c_str(), seconds,
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

PointCloud random_cloud(Rng& rng, std::size_t n, double extent = 5.0) {
  PointCloud c(Frame::world);
  for (std::size_t i = 0; i < n; ++i)
    c.points.push_back({rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                        rng.uniform(-extent, extent)});
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// --- 1: oracle equivalence --------------------------------------------------

bool criterion_oracles(std::string& detail) {
  Rng rng(2024);
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t n_pred = 1 + rng.uniform_index(500);
    const std::size_t n_gt = 1 + rng.uniform_index(500);
    const PointCloud pred = random_cloud(rng, n_pred);
    const PointCloud gt = random_cloud(rng, n_gt);

    if (std::abs(chamfer(pred, gt, ChamferNorm::l1_euclidean) - oracle::chamfer_l1(pred, gt)) >
        1e-12) {
      detail = "chamfer l1 mismatch at trial " + std::to_string(trial);
      return false;
    }
    if (std::abs(chamfer(pred, gt, ChamferNorm::l2_squared) - oracle::chamfer_l2(pred, gt)) >
        1e-12) {
      detail = "chamfer l2 mismatch at trial " + std::to_string(trial);
      return false;
    }
    const double d = rng.uniform(0.05, 3.0);
    if (std::abs(fscore(pred, gt, d) - oracle::fscore(pred, gt, d)) > 1e-12) {
      detail = "fscore mismatch at trial " + std::to_string(trial);
      return false;
    }
    const auto dev = deviation_distribution(pred, gt, default_percentiles());
    const auto dev_oracle = oracle::deviation(pred, gt, default_percentiles());
    for (const auto& [p, v] : dev)
      if (std::abs(v - dev_oracle.at(p)) > 1e-12) {
        detail = "deviation mismatch at trial " + std::to_string(trial);
        return false;
      }

    const KdTree index(gt);
    const Point3 q{rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(-6, 6)};
    const std::size_t k = 1 + rng.uniform_index(16);
    if (index.knn_indices(q, k) != oracle::knn(gt.points, q, k)) {
      detail = "knn index mismatch at trial " + std::to_string(trial);
      return false;
    }
    const std::size_t m = 1 + rng.uniform_index(n_gt);
    const std::size_t start = rng.uniform_index(n_gt);
    if (fps_indices(gt.points, m, start) != oracle::fps(gt.points, m, start)) {
      detail = "fps index mismatch at trial " + std::to_string(trial);
      return false;
    }
  }
  detail = std::to_string(trials) + " randomized clouds";
  return true;
}

// --- 2: metric arithmetic anchors --------------------------------------------

bool criterion_metric_anchors(std::string& detail) {
  PointCloud p(Frame::world), g(Frame::world);
  p.points.push_back({0, 0, 0});
  g.points.push_back({3, 4, 0});
  if (chamfer(p, g, ChamferNorm::l1_euclidean) != 10.0) {
    detail = "CD-l1 raw != 10.0";
    return false;
  }
  if (chamfer(p, g, ChamferNorm::l2_squared) != 50.0) {
    detail = "CD-l2 raw != 50.0";
    return false;
  }
  const MetricsReport r = evaluate(p, g);
  if (std::abs(r.cd_l1 - 10000.0) > 1e-9 || std::abs(r.cd_l2 - 50000.0) > 1e-9) {
    detail = "x1000 reporting scale broken";
    return false;
  }

  PointCloud p2(Frame::world), g2(Frame::world);
  p2.points.push_back({0, 0, 0});
  p2.points.push_back({1, 0, 0});
  g2.points.push_back({0, 0, 0});
  const double f = fscore(p2, g2, 0.01);
  if (std::abs(f - 2.0 / 3.0) > 1e-12) {
    detail = "precision example F != 2/3";
    return false;
  }
  return true;
}

// --- 3: gradient correctness --------------------------------------------------

bool criterion_gradients(std::string& detail) {
  NetworkConfig cfg;
  cfg.n_in = 32;
  cfg.n_coarse = 8;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.knn_k = 4;
  cfg.n_proxies = 8;
  cfg.upsample_factors = {1, 4, 4};
  cfg.seed = 5;

  ParamMap params = build_params(cfg);
  Rng rng(23);
  const PointCloud patch = random_cloud(rng, cfg.n_in, 1.0);
  const PointCloud gt = random_cloud(rng, 200, 1.0);
  const auto targets = chamfer_targets(gt, cfg.stage_sizes());

  const auto loss_value = [&] {
    return total_loss_with_targets(forward(patch, cfg, params), targets).item();
  };
  zero_grads(params);
  backward(total_loss_with_targets(forward(patch, cfg, params), targets));

  // The ranking head is excluded: top-k selection is not differentiable,
  // its parameters receive no gradient by construction.
  std::vector<std::string> names;
  for (const auto& [name, t] : params)
    if (name.rfind("query.score", 0) != 0) names.push_back(name);
  Rng pick(123);
  const double h = 1e-4;
  double max_rel = 0.0;
  for (int checked = 0; checked < 50; ++checked) {
    const std::string& name = names[pick.uniform_index(names.size())];
    Tensor& t = params.at(name);
    const std::size_t j = pick.uniform_index(t.size());
    const double analytic = t.grad()[j];
    const double saved = t.value()[j];
    t.value_mut()[j] = saved + h;
    const double up = loss_value();
    t.value_mut()[j] = saved - h;
    const double dn = loss_value();
    t.value_mut()[j] = saved;
    const double numeric = (up - dn) / (2.0 * h);
    const double rel =
        std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-3});
    max_rel = std::max(max_rel, rel);
  }
  std::ostringstream ss;
  ss << "50 parameters, max relative error " << max_rel;
  detail = ss.str();
  return max_rel <= 1e-3;
}

// --- 4: shape contract ---------------------------------------------------------

bool criterion_shapes(std::string& detail) {
  {
    const NetworkConfig cfg = NetworkConfig::full_scale();
    const ParamMap params = build_params(cfg);
    Rng rng(7);
    const auto stages = forward(random_cloud(rng, cfg.n_in, 1.0), cfg, params);
    const std::vector<std::size_t> want{512, 512, 2048, 8192};
    if (stages.size() != want.size()) {
      detail = "full-scale stage count";
      return false;
    }
    for (std::size_t i = 0; i < want.size(); ++i)
      if (stages[i].dim(0) != want[i] || stages[i].dim(1) != 3) {
        detail = "full-scale stage " + std::to_string(i) + " has " +
                 std::to_string(stages[i].dim(0)) + " points";
        return false;
      }
  }
  {
    const NetworkConfig cfg = NetworkConfig::desk();
    const ParamMap params = build_params(cfg);
    Rng rng(8);
    const auto stages = forward(random_cloud(rng, cfg.n_in, 1.0), cfg, params);
    const std::vector<std::size_t> want{64, 64, 256, 1024};
    for (std::size_t i = 0; i < want.size(); ++i)
      if (stages[i].dim(0) != want[i]) {
        detail = "desk-scale stage " + std::to_string(i);
        return false;
      }
  }
  detail = "2048 -> [512, 512, 2048, 8192]; 256 -> [64, 64, 256, 1024]";
  return true;
}

// --- 5: overfit descent ---------------------------------------------------------

bool criterion_overfit(std::string& detail) {
  // One real patch pair from the corridor scene, desk-scale network.
  SceneSpec spec;
  const SceneData scene = synth_scene(spec);
  const MapSettings ms;
  const OccupancyMap lidar_map = build_map(scene.lidar_scans, scene.trajectory,
                                           SensorKind::lidar, ms);
  const OccupancyMap radar_map = build_map(scene.radar_scans, scene.trajectory,
                                           SensorKind::radar, ms);
  SamplerConfig sampler;
  sampler.lidar_patch_size = 1024;
  sampler.radar_patch_size = 256;
  const auto patches = sample_patches(occupied_centers(lidar_map), occupied_centers(radar_map),
                                      scene.trajectory, sampler);
  if (patches.empty()) {
    detail = "no patches";
    return false;
  }
  const PatchPair& pair = patches.front();
  const auto [lidar_norm, tf] = normalize_patch(pair.lidar_patch, pair.anchor);

  const NetworkConfig net = NetworkConfig::desk();
  TrainConfig tc;
  tc.base_lr = 0.031;
  tc.weight_decay = 5e-5;
  tc.batch_size = 1;
  tc.epochs = 200;
  tc.checkpoint_every = 0;
  tc.lr_decay = 0.64;
  tc.lr_period = 9.0;
  tc.seed = 1;

  Trainer trainer(net, tc);
  const std::vector<TrainSample> dataset{
      make_train_sample(normalize_with(pair.radar_patch, tf), lidar_norm, net)};
  const auto logs = trainer.train(dataset);

  const double initial = logs.front().mean_loss;
  const double final_loss = logs.back().mean_loss;
  std::ostringstream ss;
  ss << "J: " << initial << " -> " << final_loss;
  detail = ss.str();
  if (!(final_loss < 0.1 * initial)) {
    detail += " (needs < 10% of initial)";
    return false;
  }

  // 10-epoch moving average must not increase.
  std::vector<double> ma;
  for (std::size_t i = 0; i + 10 <= logs.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = i; j < i + 10; ++j) s += logs[j].mean_loss;
    ma.push_back(s / 10.0);
  }
  for (std::size_t i = 1; i < ma.size(); ++i)
    if (ma[i] > ma[i - 1] + 1e-12) {
      detail += "; moving average rises at epoch " + std::to_string(i);
      return false;
    }
  return true;
}

// --- 6: end-to-end improvement direction -----------------------------------------

bool criterion_improvement(std::string& detail) {
  const fs::path out = fs::temp_directory_path() / "rmap_acceptance_corridor";
  fs::remove_all(out);
  PipelineConfig cfg = PipelineConfig::from_file(RMAP_SOURCE_DIR "/configs/corridor_desk.json");
  cfg.out_dir = out;

  const PipelineResult r = run_pipeline(cfg);
  std::ostringstream ss;
  ss << "cd_l1 " << r.input_report.cd_l1 << " -> " << r.pred_report.cd_l1 << ", cd_l2 "
     << r.input_report.cd_l2 << " -> " << r.pred_report.cd_l2;
  detail = ss.str();

  if (!(r.pred_report.cd_l1 < r.input_report.cd_l1)) return false;
  if (!(r.pred_report.cd_l2 < r.input_report.cd_l2)) return false;
  for (const auto& [p, v] : r.pred_report.deviation_percentiles)
    if (!(v < r.input_report.deviation_percentiles.at(p))) {
      detail += "; percentile " + std::to_string(p) + " not improved";
      return false;
    }
  return true;
}

// --- 7 + 8: sampler coverage and map-ratio band ------------------------------------

struct SceneMaps {
  std::string name;
  PointCloud lidar, radar;
  Trajectory traj;
};

std::vector<SceneMaps> build_all_scene_maps() {
  std::vector<SceneMaps> out;
  for (const SceneLayout layout :
       {SceneLayout::corridor, SceneLayout::two_room, SceneLayout::L_tunnel}) {
    SceneSpec spec;
    spec.layout = layout;
    const SceneData scene = synth_scene(spec);
    const MapSettings ms;
    SceneMaps m;
    m.name = to_string(layout);
    m.lidar = occupied_centers(build_map(scene.lidar_scans, scene.trajectory,
                                         SensorKind::lidar, ms));
    m.radar = occupied_centers(build_map(scene.radar_scans, scene.trajectory,
                                         SensorKind::radar, ms));
    m.traj = scene.trajectory;
    out.push_back(std::move(m));
  }
  return out;
}

bool criterion_coverage(const std::vector<SceneMaps>& scenes, std::string& detail) {
  for (const SceneMaps& s : scenes) {
    const SamplerConfig cfg;  // module defaults: N^L 8192, N^R 2048, a 4, t 4
    const auto patches = sample_patches(s.lidar, s.radar, s.traj, cfg);
    const double coverage = lidar_coverage_fraction(s.lidar, patches);
    if (coverage < 1.0) {
      std::ostringstream ss;
      ss << s.name << " coverage " << coverage;
      detail = ss.str();
      return false;
    }
  }
  detail = "corridor, two_room, L_tunnel all fully covered";
  return true;
}

bool criterion_ratio(const std::vector<SceneMaps>& scenes, std::string& detail) {
  std::ostringstream ss;
  for (const SceneMaps& s : scenes) {
    const double ratio =
        static_cast<double>(s.lidar.size()) / static_cast<double>(s.radar.size());
    ss << s.name << " " << ratio << "  ";
    if (!(ratio >= 2.0 && ratio <= 7.0)) {
      detail = ss.str() + "(outside [2, 7])";
      return false;
    }
  }
  detail = ss.str();
  return true;
}

// --- 9: determinism -------------------------------------------------------------

bool criterion_determinism(std::string& detail) {
  const auto make_cfg = [](const fs::path& out) {
    ordered_json j;
    j["seed"] = 21;
    j["out_dir"] = out.string();
    j["scene"] = {{"layout", "corridor"}, {"extents", 8.0}};
    j["sampler"] = {{"seed_threshold", 2.0},
                    {"lidar_patch_size", 1024},
                    {"radar_patch_size", 256},
                    {"subpatch_factor", 4.0},
                    {"anchors_per_seed", 2}};
    j["train"] = {{"base_lr", 2e-3}, {"batch_size", 8}, {"epochs", 3}, {"checkpoint_every", 0}};
    return PipelineConfig::from_json(j);
  };
  const fs::path out_a = fs::temp_directory_path() / "rmap_acceptance_det_a";
  const fs::path out_b = fs::temp_directory_path() / "rmap_acceptance_det_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);
  run_pipeline(make_cfg(out_a));
  run_pipeline(make_cfg(out_b));

  std::size_t compared = 0;
  for (auto it = fs::recursive_directory_iterator(out_a);
       it != fs::recursive_directory_iterator(); ++it) {
    if (!it->is_regular_file()) continue;
    const std::string ext = it->path().extension().string();
    if (ext != ".ply" && ext != ".json") continue;
    const fs::path rel = fs::relative(it->path(), out_a);
    if (slurp(it->path()) != slurp(out_b / rel)) {
      detail = "artifact differs: " + rel.string();
      return false;
    }
    ++compared;
  }
  detail = std::to_string(compared) + " PLY/JSON artifacts byte-identical";
  return compared > 0;
}

}  // namespace

int main() {
  std::printf("rmap acceptance suite\n");

  run_criterion(1, "oracle equivalence (chamfer, fscore, deviation, knn, fps)",
                criterion_oracles);
  run_criterion(2, "metric arithmetic anchors (3-4-5, F = 2/3)", criterion_metric_anchors);
  run_criterion(3, "full-network gradient check vs central differences", criterion_gradients);
  run_criterion(4, "forward shape contract (full-scale and desk presets)", criterion_shapes);
  run_criterion(5, "overfit descent on one patch pair (200 epochs)", criterion_overfit);
  run_criterion(6, "end-to-end improvement on the corridor scene", criterion_improvement);

  const auto scenes = build_all_scene_maps();
  run_criterion(7, "sampler coverage on all shipped scenes",
                [&](std::string& d) { return criterion_coverage(scenes, d); });
  run_criterion(8, "lidar/radar map-ratio band [2, 7]",
                [&](std::string& d) { return criterion_ratio(scenes, d); });
  run_criterion(9, "pipeline determinism (byte-identical artifacts)", criterion_determinism);

  if (g_failures == 0) {
    std::printf("all criteria passed\n");
    return 0;
  }
  std::printf("%d criteria failed\n", g_failures);
  return 1;
}
