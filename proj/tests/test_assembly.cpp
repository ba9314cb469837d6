#include "rmap/assembly.hpp"
#include "rmap/rng.hpp"

#include <catch2/catch.hpp>

#include <set>

using namespace rmap;

namespace {

PointCloud random_cloud(Rng& rng, std::size_t n, const Point3& center, double extent) {
  PointCloud c(Frame::world);
  for (std::size_t i = 0; i < n; ++i)
    c.points.push_back(center + Point3(rng.uniform(-extent, extent),
                                       rng.uniform(-extent, extent),
                                       rng.uniform(-extent, extent)));
  return c;
}

}  // namespace

TEST_CASE("normalize_patch", "[assembly]") {
  SECTION("single point at anchor + (1,0,0) with unit scale") {
    PointCloud patch(Frame::world);
    const Point3 anchor{5.0, -2.0, 1.0};
    patch.points.push_back(anchor + Point3(1.0, 0.0, 0.0));
    const auto [normalized, tf] = normalize_patch(patch, anchor);
    REQUIRE(tf.scale == Approx(1.0));
    REQUIRE(normalized[0] == Point3(1.0, 0.0, 0.0));
  }

  SECTION("round-trip is the identity within 1e-9") {
    Rng rng(1);
    const Point3 anchor{2.0, 3.0, -1.0};
    const PointCloud patch = random_cloud(rng, 100, anchor, 4.0);
    const auto [normalized, tf] = normalize_patch(patch, anchor);
    const PointCloud back = denormalize(normalized, tf);
    for (std::size_t i = 0; i < patch.size(); ++i)
      REQUIRE(distance(back[i], patch[i]) < 1e-9);
  }

  SECTION("normalized patch fits the unit ball") {
    Rng rng(2);
    const Point3 anchor{0.5, 0.5, 0.5};
    const PointCloud patch = random_cloud(rng, 200, anchor, 7.0);
    const auto [normalized, tf] = normalize_patch(patch, anchor);
    for (const Point3& p : normalized.points) REQUIRE(p.norm() <= 1.0 + 1e-9);
  }

  SECTION("degenerate patch (all points at the anchor) is an error") {
    PointCloud patch(Frame::world);
    const Point3 anchor{1, 1, 1};
    patch.points.push_back(anchor);
    patch.points.push_back(anchor);
    REQUIRE_THROWS_WITH(normalize_patch(patch, anchor), Catch::Contains("zero scale"));
  }

  SECTION("denormalization preserves distance ratios exactly") {
    Rng rng(3);
    const PointCloud patch = random_cloud(rng, 30, {0, 0, 0}, 2.0);
    const PatchTransform tf{{4.0, -1.0, 2.0}, 3.5};
    const PointCloud world = denormalize(patch, tf);
    for (std::size_t a = 0; a < 5; ++a)
      for (std::size_t b = a + 1; b < 5; ++b)
        REQUIRE(distance(world[a], world[b]) ==
                Approx(tf.scale * distance(patch[a], patch[b])));
  }
}

TEST_CASE("merge_predictions", "[assembly]") {
  const double res = 0.15;

  SECTION("one patch is just its denormalized cloud voxelized") {
    Rng rng(4);
    const PointCloud patch = random_cloud(rng, 50, {0, 0, 0}, 0.9);
    const PatchTransform tf{{1.0, 1.0, 0.0}, 2.0};
    const PointCloud merged = merge_predictions({{patch, tf}}, res);

    std::set<std::array<std::int64_t, 3>> expected;
    for (const Point3& p : patch.points) {
      const VoxelKey k = voxel_key_of(tf.to_world(p), res);
      expected.insert({k.i, k.j, k.k});
    }
    REQUIRE(merged.size() == expected.size());
    for (const Point3& p : merged.points) {
      const VoxelKey k = voxel_key_of(p, res);
      REQUIRE(expected.count({k.i, k.j, k.k}) == 1);
    }
  }

  SECTION("duplicate patches are idempotent") {
    Rng rng(5);
    const PointCloud patch = random_cloud(rng, 80, {0, 0, 0}, 1.0);
    const PatchTransform tf{{0.0, 0.0, 0.0}, 1.5};
    const PointCloud once = merge_predictions({{patch, tf}}, res);
    const PointCloud twice = merge_predictions({{patch, tf}, {patch, tf}}, res);
    REQUIRE(once.points == twice.points);
  }

  SECTION("multiple patches merge to the union of per-patch voxel sets") {
    Rng rng(6);
    std::vector<std::pair<PointCloud, PatchTransform>> patches;
    std::set<std::array<std::int64_t, 3>> expected;
    for (int k = 0; k < 8; ++k) {
      const PointCloud patch = random_cloud(rng, 40, {0, 0, 0}, 1.0);
      const PatchTransform tf{{rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0},
                              rng.uniform(0.5, 2.0)};
      for (const Point3& p : patch.points) {
        const VoxelKey key = voxel_key_of(tf.to_world(p), res);
        expected.insert({key.i, key.j, key.k});
      }
      patches.emplace_back(patch, tf);
    }
    const PointCloud merged = merge_predictions(patches, res);
    REQUIRE(merged.size() == expected.size());
  }

  SECTION("merge is order-independent") {
    Rng rng(7);
    const PointCloud a = random_cloud(rng, 60, {0, 0, 0}, 1.0);
    const PointCloud b = random_cloud(rng, 60, {0.4, 0.1, 0}, 1.0);
    const PatchTransform ta{{1, 0, 0}, 1.0}, tb{{0.8, 0.3, 0}, 1.2};
    REQUIRE(merge_predictions({{a, ta}, {b, tb}}, res).points ==
            merge_predictions({{b, tb}, {a, ta}}, res).points);
  }

  SECTION("every output point is a voxel center") {
    Rng rng(8);
    const PointCloud patch = random_cloud(rng, 100, {0, 0, 0}, 1.0);
    const PointCloud merged = merge_predictions({{patch, PatchTransform{}}}, res);
    for (const Point3& p : merged.points) {
      const Point3 center = voxel_center(voxel_key_of(p, res), res);
      REQUIRE(distance(p, center) < 1e-12);
    }
  }
}
