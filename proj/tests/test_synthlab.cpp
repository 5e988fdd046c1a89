#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "dwpnp/synthlab.hpp"

namespace dwpnp {
namespace {

TEST(SynthLab, SquareScene) {
  const auto s = make_square_scene(8);
  ASSERT_EQ(s.source.size(), 8u);
  EXPECT_EQ(s.source[0], Vec3(5, 0, 10));
  EXPECT_EQ(s.source[2], Vec3(10, 0, 10));
  EXPECT_EQ(s.source[4], Vec3(10, 0, 15));
  EXPECT_EQ(s.source[6], Vec3(5, 0, 15));
  EXPECT_EQ(s.source[1], Vec3(7.5, 0, 10));
  ASSERT_EQ(s.targets.size(), 8u);
  EXPECT_DOUBLE_EQ(s.targets[0].x(), 772.0);
  for (std::size_t n : {44u, 84u, 124u, 164u}) EXPECT_EQ(make_square_scene(n).source.size(), n);
  EXPECT_THROW(make_square_scene(6), ConfigError);
  EXPECT_THROW(make_square_scene(0), ConfigError);
}

TEST(SynthLab, TreeSceneStructure) {
  for (std::size_t branches : {2u, 5u, 13u}) {
    const auto s = make_tree_scene(branches, 17);
    EXPECT_GE(s.source.size(), 1500u);
    EXPECT_LE(s.source.size(), 3000u);
    EXPECT_EQ(s.branch_count(), branches);
    const auto bif = std::count(s.source.labels.begin(), s.source.labels.end(), 1);
    EXPECT_EQ(static_cast<std::size_t>(bif), branches - 1);
    EXPECT_EQ(s.targets.size(), s.source.size());
    for (const auto& q : s.targets) EXPECT_TRUE(s.camera.contains(q));
    EXPECT_EQ(s.branch_parent[0], -1);
    for (std::size_t b = 1; b < branches; ++b) EXPECT_LT(s.branch_parent[b], static_cast<int>(b));
  }
  EXPECT_THROW(make_tree_scene(1, 0), ConfigError);
}

TEST(SynthLab, TreeSceneIsDeterministic) {
  const auto a = make_tree_scene(8, 5);
  const auto b = make_tree_scene(8, 5);
  const auto c = make_tree_scene(8, 6);
  EXPECT_EQ(a.source.points, b.source.points);
  EXPECT_EQ(a.targets, b.targets);
  EXPECT_NE(a.source.points, c.source.points);
}

TEST(SynthLab, PerturbationStatistics) {
  const DisturbanceSpec spec{2.0, 3.0, 1, PerturbFrame::sensor};
  const int n = 20000;
  double st = 0.0, sa = 0.0;
  for (int k = 0; k < n; ++k) {
    const Pose T = perturb_pose(Pose::identity(), spec, static_cast<std::uint64_t>(k));
    const Vec6 d = log_map(T).vector();
    st += d[0] * d[0];
    sa += d[3] * d[3];
  }
  EXPECT_NEAR(std::sqrt(st / n), 2.0, 0.05 * 2.0);
  EXPECT_NEAR(std::sqrt(sa / n) * kRadToDeg, 3.0, 0.05 * 3.0);
}

TEST(SynthLab, PerturbationFrames) {
  const Pose gt(Mat3::Identity(), Vec3(0, 0, 800));
  const DisturbanceSpec s{0.0, 5.0, 1, PerturbFrame::sensor};
  const DisturbanceSpec o{0.0, 5.0, 1, PerturbFrame::object};
  // Object-frame rotation keeps the object origin in place.
  EXPECT_LT((perturb_pose(gt, o, 1).translation() - gt.translation()).norm(), 1e-9);
  EXPECT_GT((perturb_pose(gt, s, 1).translation() - gt.translation()).norm(), 1.0);
  EXPECT_EQ(perturb_pose(gt, s, 1).matrix(), perturb_pose(gt, s, 1).matrix());
}

TEST(SynthLab, BallTwistInsideRadius) {
  std::mt19937_64 rng(61);
  double mx = 0.0;
  for (int k = 0; k < 5000; ++k) mx = std::max(mx, sample_ball_twist(0.5, rng).norm());
  EXPECT_LE(mx, 0.5);
  EXPECT_GT(mx, 0.45);
}

TEST(SynthLab, PruningRemovesWholeLeaves) {
  const auto s = make_tree_scene(13, 9);
  const auto leaves = s.leaf_branches();
  const auto p = prune_branches(s, 3, 4);
  EXPECT_EQ(p.source.size(), s.source.size());
  EXPECT_LT(p.targets.size(), s.targets.size());
  std::set<int> kept;
  for (auto i : p.target_source) kept.insert(s.branch_of[i]);
  std::size_t removed = 0;
  for (std::size_t b = 0; b < s.branch_count(); ++b) {
    if (kept.count(static_cast<int>(b)) == 0) {
      ++removed;
      EXPECT_NE(std::find(leaves.begin(), leaves.end(), static_cast<int>(b)), leaves.end());
    }
  }
  EXPECT_EQ(removed, 3u);
  for (std::size_t t = 0; t < p.targets.size(); ++t) {
    EXPECT_EQ(p.targets[t], s.targets[p.target_source[t]]);
  }
  EXPECT_EQ(prune_branches(s, 0, 4).targets, s.targets);
  EXPECT_THROW(prune_branches(s, leaves.size(), 4), ConfigError);
}

TEST(SynthLab, AmbiguityWithoutTranslation) {
  const auto p = square_at_depth_ratio(5.0);
  const auto r = ambiguity_demo(p, Vec3::Zero(), toy_camera());
  EXPECT_EQ(r.phi, Vec3::Zero());
  EXPECT_DOUBLE_EQ(r.mean_residual, 0.0);
  EXPECT_DOUBLE_EQ(r.ratio, 0.0);
}

TEST(SynthLab, AmbiguityDualRotationMimicsTranslation) {
  const auto p = square_at_depth_ratio(5.0);
  EXPECT_NEAR(detail::depth_ratio_of(p), 5.0, 1e-12);
  const auto r = ambiguity_demo(p, Vec3(0.5, 0, 0), toy_camera());
  EXPECT_GT(r.phi.y(), 0.0);
  EXPECT_LT(r.ratio, 0.15);
  EXPECT_THROW(ambiguity_demo(make_square_scene(8).source, Vec3(0.5, 0, 0), toy_camera()),
               PreconditionError);
}

}  // namespace
}  // namespace dwpnp
