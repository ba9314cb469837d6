#include "rmap/patch_sampler.hpp"
#include "rmap/rng.hpp"

#include <catch2/catch.hpp>

#include <set>

using namespace rmap;

namespace {

Trajectory line_trajectory(std::size_t n, double step = 1.0) {
  Trajectory traj;
  for (std::size_t i = 0; i < n; ++i)
    traj.push_back(0.1 * static_cast<double>(i),
                   Pose::from_yaw(0.0, {step * static_cast<double>(i), 0.0, 0.0}));
  return traj;
}

PointCloud gaussian_cluster(Rng& rng, const Point3& center, double sigma, std::size_t n) {
  PointCloud c(Frame::world);
  for (std::size_t i = 0; i < n; ++i)
    c.points.push_back(center + Point3(rng.normal(0, sigma), rng.normal(0, sigma),
                                       rng.normal(0, sigma)));
  return c;
}

}  // namespace

TEST_CASE("select_seed_points", "[sampler]") {
  SECTION("stationary trajectory gives one seed") {
    Trajectory traj;
    for (int i = 0; i < 5; ++i)
      traj.push_back(0.1 * i, Pose::from_yaw(0.0, {1.0, 2.0, 0.0}));
    REQUIRE(select_seed_points(traj, 0.5).size() == 1);
  }

  SECTION("hand-run example: x = 0..9, p_Th = 2.5") {
    const PointCloud seeds = select_seed_points(line_trajectory(10), 2.5);
    REQUIRE(seeds.size() == 4);
    REQUIRE(seeds[0].x() == 0.0);
    REQUIRE(seeds[1].x() == 3.0);
    REQUIRE(seeds[2].x() == 6.0);
    REQUIRE(seeds[3].x() == 9.0);
  }

  SECTION("threshold larger than the diameter gives one seed") {
    REQUIRE(select_seed_points(line_trajectory(10), 100.0).size() == 1);
  }

  SECTION("empty trajectory is an error") {
    REQUIRE_THROWS_AS(select_seed_points(Trajectory{}, 1.0), std::invalid_argument);
  }
}

TEST_CASE("sample_patches saturation: one seed, full clouds", "[sampler]") {
  Rng rng(5);
  const PointCloud lidar = gaussian_cluster(rng, {0, 0, 0}, 1.0, 60);
  const PointCloud radar = gaussian_cluster(rng, {0, 0, 0}, 1.0, 20);
  Trajectory traj;
  traj.push_back(0.0, Pose::identity());

  SamplerConfig cfg;
  cfg.seed_threshold = 1.0;
  cfg.lidar_patch_size = 60;
  cfg.radar_patch_size = 20;
  cfg.subpatch_factor = 2.0;
  cfg.anchors_per_seed = 1;

  std::vector<std::string> warnings;
  const auto patches = sample_patches(lidar, radar, traj, cfg, &warnings);
  REQUIRE(patches.size() == 1);
  REQUIRE(patches[0].lidar_patch.size() == 60);
  REQUIRE(patches[0].radar_patch.size() == 20);
  REQUIRE(patches[0].seed_index == 0);

  std::set<std::array<double, 3>> lidar_set, patch_set;
  for (const Point3& p : lidar.points) lidar_set.insert({p.x(), p.y(), p.z()});
  for (const Point3& p : patches[0].lidar_patch.points) patch_set.insert({p.x(), p.y(), p.z()});
  REQUIRE(lidar_set == patch_set);
}

TEST_CASE("sample_patches keeps clusters separate", "[sampler]") {
  Rng rng(9);
  // Two clusters 100 m apart; trajectory visits both.
  const Point3 c1{0, 0, 0}, c2{100, 0, 0};
  PointCloud lidar = gaussian_cluster(rng, c1, 0.5, 80);
  const PointCloud l2 = gaussian_cluster(rng, c2, 0.5, 80);
  lidar.points.insert(lidar.points.end(), l2.points.begin(), l2.points.end());
  PointCloud radar = gaussian_cluster(rng, c1, 0.5, 30);
  const PointCloud r2 = gaussian_cluster(rng, c2, 0.5, 30);
  radar.points.insert(radar.points.end(), r2.points.begin(), r2.points.end());

  Trajectory traj;
  traj.push_back(0.0, Pose::from_yaw(0.0, c1));
  traj.push_back(0.1, Pose::from_yaw(0.0, c2));

  SamplerConfig cfg;
  cfg.seed_threshold = 10.0;
  cfg.lidar_patch_size = 40;
  cfg.radar_patch_size = 15;
  cfg.subpatch_factor = 1.5;
  cfg.anchors_per_seed = 1;

  const auto patches = sample_patches(lidar, radar, traj, cfg);
  REQUIRE(patches.size() == 2);
  for (const auto& patch : patches) {
    // Max intra-patch spread is far below the inter-cluster gap.
    double max_d = 0.0;
    for (const Point3& p : patch.lidar_patch.points)
      max_d = std::max(max_d, distance(p, patch.anchor));
    for (const Point3& p : patch.radar_patch.points)
      max_d = std::max(max_d, distance(p, patch.anchor));
    REQUIRE(max_d < 50.0);
  }
}

TEST_CASE("sample_patches output count and subset property", "[sampler][property]") {
  Rng rng(13);
  const PointCloud lidar = gaussian_cluster(rng, {0, 0, 0}, 4.0, 500);
  const PointCloud radar = gaussian_cluster(rng, {0, 0, 0}, 4.0, 120);
  const Trajectory traj = line_trajectory(8, 1.0);

  SamplerConfig cfg;
  cfg.seed_threshold = 1.5;
  cfg.lidar_patch_size = 100;
  cfg.radar_patch_size = 25;
  cfg.subpatch_factor = 2.0;
  cfg.anchors_per_seed = 3;

  const PointCloud seeds = select_seed_points(traj, cfg.seed_threshold);
  const auto patches = sample_patches(lidar, radar, traj, cfg);
  REQUIRE(patches.size() == seeds.size() * cfg.anchors_per_seed);

  std::set<std::array<double, 3>> lidar_set, radar_set;
  for (const Point3& p : lidar.points) lidar_set.insert({p.x(), p.y(), p.z()});
  for (const Point3& p : radar.points) radar_set.insert({p.x(), p.y(), p.z()});
  for (const auto& patch : patches) {
    REQUIRE(patch.lidar_patch.size() == cfg.lidar_patch_size);
    REQUIRE(patch.radar_patch.size() == cfg.radar_patch_size);
    REQUIRE(lidar_set.count({patch.anchor.x(), patch.anchor.y(), patch.anchor.z()}) == 1);
    for (const Point3& p : patch.lidar_patch.points)
      REQUIRE(lidar_set.count({p.x(), p.y(), p.z()}) == 1);
    for (const Point3& p : patch.radar_patch.points)
      REQUIRE(radar_set.count({p.x(), p.y(), p.z()}) == 1);
  }

  SECTION("identical inputs give identical patch lists") {
    const auto again = sample_patches(lidar, radar, traj, cfg);
    REQUIRE(again.size() == patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i) {
      REQUIRE(again[i].anchor == patches[i].anchor);
      REQUIRE(again[i].seed_index == patches[i].seed_index);
      REQUIRE(again[i].lidar_patch.points == patches[i].lidar_patch.points);
      REQUIRE(again[i].radar_patch.points == patches[i].radar_patch.points);
    }
  }
}

TEST_CASE("sample_patches coverage on a dense line world", "[sampler][property]") {
  // World points spread along the trajectory; enough patch capacity that
  // every lidar point must appear in some patch.
  Rng rng(17);
  PointCloud lidar(Frame::world);
  for (int i = 0; i < 400; ++i)
    lidar.points.push_back({rng.uniform(0, 8), rng.uniform(-1.5, 1.5), rng.uniform(0, 2)});
  PointCloud radar(Frame::world);
  for (int i = 0; i < 100; ++i)
    radar.points.push_back({rng.uniform(0, 8), rng.uniform(-1.5, 1.5), rng.uniform(0, 2)});

  SamplerConfig cfg;
  cfg.seed_threshold = 1.5;
  cfg.lidar_patch_size = 150;
  cfg.radar_patch_size = 40;
  cfg.subpatch_factor = 2.0;
  cfg.anchors_per_seed = 4;

  const Trajectory traj = line_trajectory(9, 1.0);
  const auto patches = sample_patches(lidar, radar, traj, cfg);
  REQUIRE(lidar_coverage_fraction(lidar, patches) == 1.0);
}

TEST_CASE("sample_patches rejects empty inputs and bad configs", "[sampler]") {
  PointCloud cloud(Frame::world);
  cloud.points.push_back({0, 0, 0});
  const Trajectory traj = line_trajectory(2);
  SamplerConfig cfg;
  REQUIRE_THROWS_AS(sample_patches(PointCloud(Frame::world), cloud, traj, cfg),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(sample_patches(cloud, PointCloud(Frame::world), traj, cfg),
                    std::invalid_argument);

  SamplerConfig bad;
  bad.lidar_patch_size = 10;
  bad.radar_patch_size = 20;  // N^L < N^R
  REQUIRE_THROWS_AS(sample_patches(cloud, cloud, traj, bad), std::invalid_argument);
}
