#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dwpnp/metrics.hpp"
#include "test_util.hpp"

namespace dwpnp {
namespace {

TEST(Metrics, ProjectionResidualKnownPairs) {
  const auto K = test::test_camera();
  PointSet3D src;
  src.points = {Vec3(0, 0, 10), Vec3(1, 0, 10)};
  PointSet2D tgt = {Vec2(515, 512), Vec2(564, 508)};
  // Residuals 3 and sqrt(0 + 16) = 4 -> RMSE sqrt((9 + 16) / 2)
  EXPECT_NEAR(projection_residual(Pose::identity(), src, CorrespondenceMode::known, tgt, K),
              std::sqrt(12.5), 1e-12);
  src.points = {Vec3(0, 0, 10)};
  tgt = {Vec2(515, 512)};
  EXPECT_DOUBLE_EQ(projection_residual(Pose::identity(), src, CorrespondenceMode::known, tgt, K), 3.0);
}

TEST(Metrics, ProjectionResidualClosestMatchesOracle) {
  std::mt19937_64 rng(31);
  const auto K = test::test_camera();
  const PointSet3D src = test::random_cloud(rng, 25);
  std::uniform_real_distribution<double> u(300.0, 700.0);
  PointSet2D tgt;
  for (int i = 0; i < 50; ++i) tgt.emplace_back(u(rng), u(rng));
  const TargetIndex idx(tgt);
  double sum = 0.0;
  for (const auto& p : src.points) {
    double best = 1e300;
    for (const auto& q : tgt) best = std::min(best, (project(Pose::identity(), p, K) - q).squaredNorm());
    sum += best;
  }
  EXPECT_NEAR(projection_residual(Pose::identity(), src, CorrespondenceMode::closest, tgt, K, &idx),
              std::sqrt(sum / 25.0), 1e-9);
}

TEST(Metrics, ProjectionResidualPreconditions) {
  const auto K = test::test_camera();
  PointSet3D src;
  src.points = {Vec3(0, 0, 10)};
  EXPECT_THROW(projection_residual(Pose::identity(), src, CorrespondenceMode::known, {}, K),
               PreconditionError);
  EXPECT_THROW(projection_residual(Pose::identity(), src, CorrespondenceMode::closest, {}, K),
               PreconditionError);
  EXPECT_THROW(projection_residual(Pose::identity(), PointSet3D{}, CorrespondenceMode::known, {}, K),
               PreconditionError);
}

TEST(Metrics, GrossFailureRate) {
  const std::vector<double> prs = {1.0, 6.0, 2.0, 10.0};
  EXPECT_DOUBLE_EQ(gross_failure_rate(prs), 0.5);
  EXPECT_DOUBLE_EQ(gross_failure_rate(prs, 20.0), 0.0);
  const std::vector<double> edge = {5.0};
  EXPECT_DOUBLE_EQ(gross_failure_rate(edge), 0.0);
  EXPECT_THROW(gross_failure_rate(std::vector<double>{}), PreconditionError);
}

TEST(Metrics, Percentiles) {
  EXPECT_DOUBLE_EQ(median({1, 2, 3, 4}), 2.5);
  EXPECT_DOUBLE_EQ(median({7}), 7.0);
  EXPECT_DOUBLE_EQ(percentile({0, 10}, 75.0), 7.5);
  EXPECT_DOUBLE_EQ(percentile({3, 1, 2}, 100.0), 3.0);
  EXPECT_THROW(median({}), PreconditionError);
}

TEST(Metrics, PoseDifference) {
  Vec6 xi = Vec6::Zero();
  xi[5] = kPi / 2;
  const auto d = pose_difference(exp_map(xi), Pose::identity());
  EXPECT_NEAR(d.angle_deg, 90.0, 1e-12);
  EXPECT_NEAR(d.distance, 0.0, 1e-15);
  const Pose A(Mat3::Identity(), Vec3(1, 2, 2));
  EXPECT_NEAR(pose_difference(A, Pose::identity()).distance, 3.0, 1e-15);
}

TEST(Metrics, PoseDifferenceIsSymmetric) {
  std::mt19937_64 rng(32);
  for (int k = 0; k < 50; ++k) {
    const Pose A = exp_map(test::random_twist(rng, 1.0, 2.0));
    const Pose B = exp_map(test::random_twist(rng, 1.0, 2.0));
    const auto ab = pose_difference(A, B);
    const auto ba = pose_difference(B, A);
    EXPECT_NEAR(ab.angle_deg, ba.angle_deg, 1e-9);
    EXPECT_NEAR(ab.distance, ba.distance, 1e-12);
  }
}

TEST(Metrics, MedianTreSkipsExcluded) {
  CorrespondenceSet s;
  s.pairs = {{0, 0, 9.0, false}, {1, kNoTarget, 0.0, true}, {2, 1, 25.0, false}};
  EXPECT_DOUBLE_EQ(median_tre(s), 4.0);
}

TEST(Metrics, DepthScaleError) {
  PointSet3D src;
  src.points = {Vec3(0, 0, 10)};
  const Pose far(Mat3::Identity(), Vec3(0, 0, 5));
  EXPECT_NEAR(depth_scale_error(far, Pose::identity(), src), 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(depth_scale_error(Pose::identity(), Pose::identity(), src), 0.0);
}

TEST(Metrics, Spearman) {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const std::vector<double> y = {10, 20, 25, 100, 1000};
  const std::vector<double> z = {5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman(x, y), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, z), -1.0);
  const std::vector<double> a = {1, 2, 3, 4};
  const std::vector<double> b = {1, 3, 2, 4};
  // 1 - 6 * sum(d^2) / (n (n^2 - 1)) = 1 - 12 / 60
  EXPECT_NEAR(spearman(a, b), 0.8, 1e-12);
  const auto r = average_ranks(std::vector<double>{2, 1, 2});
  EXPECT_DOUBLE_EQ(r[0], 2.5);
  EXPECT_DOUBLE_EQ(r[1], 1.0);
  EXPECT_DOUBLE_EQ(r[2], 2.5);
}

}  // namespace
}  // namespace dwpnp
