#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dwpnp/objectives.hpp"
#include "test_util.hpp"

namespace dwpnp {
namespace {

TEST(Objectives, GaussianKernelValues) {
  EXPECT_DOUBLE_EQ(gaussian_kernel(0.0, 3.0), 1.0);
  EXPECT_NEAR(gaussian_kernel(2.0, 1.0), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(gaussian_kernel(4.0 * 4.0, 2.0), std::exp(-2.0), 1e-15);
}

TEST(Objectives, RowExtentKeepsNearestAndTruncates) {
  const std::vector<Neighbor> row = {{0, 100.0}, {1, 101.0}};
  EXPECT_EQ(kernel_row_extent(row, 1.0, 3.0), 1u);
  const std::vector<Neighbor> row2 = {{0, 1.0}, {1, 8.9}, {2, 9.0}, {3, 9.1}};
  EXPECT_EQ(kernel_row_extent(row2, 1.0, 3.0), 3u);
  EXPECT_EQ(kernel_row_extent({}, 1.0, 3.0), 0u);
}

TEST(Objectives, TruncatedSumCloseToFullSum) {
  std::mt19937_64 rng(21);
  const auto K = test::test_camera();
  const PointSet3D src = test::random_cloud(rng, 30);
  std::normal_distribution<double> noise(0.0, 1.5);
  PointSet2D tgt;
  for (const auto& p : src.points) tgt.push_back(project(Pose::identity(), p, K) + Vec2(noise(rng), noise(rng)));
  const TargetIndex idx(tgt);
  KernelConfig cfg;
  cfg.ell = 2.0;
  const double truncated = rkhs_energy(Pose::identity(), src, idx, K, cfg).e_data;
  double full = 0.0;
  for (const auto& p : src.points) {
    const Vec2 uv = project(Pose::identity(), p, K);
    for (const auto& q : tgt) full += gaussian_kernel((uv - q).squaredNorm(), cfg.ell);
  }
  EXPECT_LE(truncated, full);
  EXPECT_LT((full - truncated) / full, 0.02);
}

TEST(Objectives, DataEnergyDecreasesWithDistance) {
  const auto K = test::test_camera();
  PointSet3D src;
  src.points = {Vec3(0, 0, 10)};
  KernelConfig cfg;
  cfg.ell = 5.0;
  double prev = 2.0;
  for (double d : {0.0, 1.0, 3.0, 7.0, 20.0}) {
    const TargetIndex idx({Vec2(512.0 + d, 512.0)});
    const double e = rkhs_energy(Pose::identity(), src, idx, K, cfg).e_data;
    EXPECT_LT(e, prev);
    EXPECT_NEAR(e, std::exp(-d * d / 50.0), 1e-14);
    prev = e;
  }
}

TEST(Objectives, PriorTermIsSquaredTwistDistance) {
  const auto K = test::test_camera();
  PointSet3D src;
  src.points = {Vec3(0, 0, 10)};
  const TargetIndex idx({Vec2(512, 512)});
  const Pose prior(Mat3::Identity(), Vec3(0.3, 0.4, 0.0));
  const auto e = rkhs_energy(Pose::identity(), src, idx, K, KernelConfig{}, prior);
  EXPECT_NEAR(e.e_init, 0.25, 1e-14);
}

TEST(Objectives, IrlsWeightsMatchKernelOfCurrentDistances) {
  std::mt19937_64 rng(22);
  const auto K = test::test_camera();
  const PointSet3D src = test::random_cloud(rng, 20);
  std::uniform_real_distribution<double> u(0.0, 1024.0);
  PointSet2D tgt;
  for (int i = 0; i < 200; ++i) tgt.emplace_back(u(rng), u(rng));
  const TargetIndex idx(tgt);
  KernelConfig cfg;
  cfg.ell = 30.0;
  const Pose T = exp_map(test::random_twist(rng, 0.05, 0.02));
  const auto w = irls_weights(T, src, idx, K, cfg);
  ASSERT_GE(w.size(), src.size());
  for (const auto& pw : w) {
    const double d2 = (project(T, src[pw.source], K) - tgt[pw.target]).squaredNorm();
    EXPECT_NEAR(pw.weight, std::exp(-d2 / (2.0 * 30.0 * 30.0)), 1e-12);
  }
}

TEST(Objectives, WeightedGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(23);
  const auto K = test::test_camera();
  const PointSet3D src = test::random_cloud(rng, 50);
  PointSet2D tgt;
  for (const auto& p : src.points) tgt.push_back(project(Pose::identity(), p, K));
  const TargetIndex idx(tgt);
  KernelConfig cfg;
  cfg.ell = 20.0;
  const Pose T = exp_map(test::random_twist(rng, 0.05, 0.02));
  const auto w = irls_weights(T, src, idx, K, cfg);
  auto f = [&](const Pose& P) {
    double s = 0.0;
    for (const auto& pw : w) s += pw.weight * (project(P, src[pw.source], K) - tgt[pw.target]).squaredNorm();
    return s;
  };
  const Vec6 g = weighted_ls_gradient(T, src, tgt, K, w, cfg);
  const double h = 1e-6;
  for (int a = 0; a < 6; ++a) {
    Vec6 e = Vec6::Zero();
    e[a] = h;
    const double fd = (f(exp_map(e) * T) - f(exp_map(-e) * T)) / (2 * h);
    EXPECT_NEAR(fd, g[a], 1e-5 * std::max(1.0, std::abs(g[a])));
  }
}

TEST(Objectives, ScaleSchedule) {
  KernelConfig cfg;
  const std::vector<double> d2 = {4.0, 400.0, 25.0};
  cfg = update_scale(cfg, 0, d2);
  EXPECT_DOUBLE_EQ(cfg.ell, 20.0);
  for (std::size_t it = 1; it < 5; ++it) {
    cfg = update_scale(cfg, it, d2);
    EXPECT_DOUBLE_EQ(cfg.ell, 20.0);
  }
  cfg = update_scale(cfg, 5, d2);
  EXPECT_DOUBLE_EQ(cfg.ell, 10.0);
  for (int k = 0; k < 20; ++k) cfg = shrink_scale(cfg);
  EXPECT_DOUBLE_EQ(cfg.ell, 0.5);
  const std::vector<double> zero = {0.0};
  EXPECT_DOUBLE_EQ(update_scale(KernelConfig{}, 0, zero).ell, 0.5);
}

TEST(Objectives, EuclideanEnergy) {
  const auto K = test::test_camera();
  PointSet3D src;
  src.points = {Vec3(0, 0, 10)};
  const PointSet2D tgt = {Vec2(515, 512)};
  const TargetIndex idx(tgt);
  const auto corr = closest_point_search(idx, project_all(Pose::identity(), src, K));
  EXPECT_DOUBLE_EQ(euclidean_energy(Pose::identity(), corr, src, tgt, K), 9.0);
}

TEST(Objectives, EuclideanEnergyMatchesNaiveSum) {
  std::mt19937_64 rng(24);
  const auto K = test::test_camera();
  const PointSet3D src = test::random_cloud(rng, 40);
  std::uniform_real_distribution<double> u(300.0, 700.0);
  PointSet2D tgt;
  for (int i = 0; i < 60; ++i) tgt.emplace_back(u(rng), u(rng));
  const TargetIndex idx(tgt);
  const Pose T = exp_map(test::random_twist(rng, 0.1, 0.05));
  const auto corr = closest_point_search(idx, project_all(T, src, K));
  double naive = 0.0;
  for (const auto& p : src.points) {
    const Vec2 uv = project(T, p, K);
    double best = 1e300;
    for (const auto& q : tgt) best = std::min(best, (uv - q).squaredNorm());
    naive += best;
  }
  EXPECT_NEAR(euclidean_energy(T, corr, src, tgt, K), naive, 1e-9 * naive);
}

TEST(Objectives, HuberLoss) {
  EXPECT_DOUBLE_EQ(huber_loss(2.0, 5.0), 2.0);
  EXPECT_DOUBLE_EQ(huber_loss(10.0, 5.0), 37.5);
  EXPECT_DOUBLE_EQ(huber_loss(5.0, 5.0), 12.5);
}

TEST(Objectives, ConfigValidation) {
  KernelConfig cfg;
  cfg.ell = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.max_neighbors = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.point_weights = {1.0, -1.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace dwpnp
