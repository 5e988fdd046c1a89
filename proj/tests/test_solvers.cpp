#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dwpnp/metrics.hpp"
#include "dwpnp/solvers.hpp"
#include "dwpnp/synthlab.hpp"
#include "test_util.hpp"

namespace dwpnp {
namespace {

PointSet2D project_points(const Pose& T, const PointSet3D& src, const CameraIntrinsics& K) {
  PointSet2D out;
  for (const auto& p : src.points) out.push_back(project(T, p, K));
  return out;
}

TEST(Solvers, LmStepAtZeroResidualIsNoOp) {
  const auto K = test::test_camera();
  PointSet3D src;
  src.points = {Vec3(0, 0, 10), Vec3(1, 0, 10), Vec3(0, 1, 11)};
  std::vector<WeightedTerm> terms;
  for (std::uint32_t i = 0; i < 3; ++i) terms.push_back({i, project(Pose::identity(), src[i], K), 1.0});
  const LeastSquaresProblem problem(src, K, terms, std::nullopt, 0.0, DofMode::full);
  const LmStep s = lm_step(Pose::identity(), problem, 1e-3, SolverConfig{});
  EXPECT_FALSE(s.improved);
  EXPECT_EQ(s.cost_before, 0.0);
  EXPECT_TRUE(s.candidate.matrix().isIdentity(0.0));
}

TEST(Solvers, LinearizationMatchesFiniteDifferences) {
  std::mt19937_64 rng(41);
  const auto K = test::test_camera();
  const PointSet3D src = test::random_cloud(rng, 12);
  std::vector<WeightedTerm> terms;
  std::uniform_real_distribution<double> u(400.0, 600.0), w(0.1, 1.0);
  for (std::uint32_t i = 0; i < 12; ++i) terms.push_back({i, Vec2(u(rng), u(rng)), w(rng)});
  const Pose T0 = exp_map(test::random_twist(rng, 0.1, 0.1));
  const LeastSquaresProblem problem(src, K, terms, T0, 2.0, DofMode::full);
  const Pose T = exp_map(test::random_twist(rng, 0.05, 0.05)) * T0;
  const auto lin = problem.linearize(T);
  EXPECT_NEAR(lin.cost, problem.cost(T), 1e-9 * lin.cost);
  const double h = 1e-6;
  for (int a = 0; a < 6; ++a) {
    Vec6 e = Vec6::Zero();
    e[a] = h;
    const double fd = (problem.cost(exp_map(e) * T) - problem.cost(exp_map(-e) * T)) / (2 * h);
    // d(r^T r) = 2 J^T r
    EXPECT_NEAR(fd, 2.0 * lin.g[a], 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Solvers, SinglePointMovesTowardTarget) {
  const auto K = test::test_camera();
  PointSet3D src;
  src.points = {Vec3(0, 0, 10)};
  const Vec2 target(530, 500);
  const LeastSquaresProblem problem(src, K, {{0, target, 1.0}}, std::nullopt, 0.0, DofMode::full);
  const LmStep s = lm_step(Pose::identity(), problem, 1e-3, SolverConfig{});
  EXPECT_TRUE(s.improved);
  EXPECT_LT((project(s.candidate, src[0], K) - target).norm(),
            (project(Pose::identity(), src[0], K) - target).norm());
}

TEST(Solvers, AlignedStartConvergesImmediately) {
  const auto scene = make_square_scene(8);
  const TargetIndex idx(scene.targets);
  SolverConfig scfg;
  const auto r = irls_register(scene.source, idx, scene.camera, scene.ground_truth, KernelConfig{}, scfg);
  EXPECT_EQ(r.termination, Termination::converged);
  EXPECT_LE(r.trace.size(), 2u);
  EXPECT_LT(pose_difference(r.pose, scene.ground_truth).angle_deg, 1e-9);
  const auto d = dticp_register(scene.source, idx, scene.camera, scene.ground_truth, scfg);
  EXPECT_EQ(d.termination, Termination::converged);
  EXPECT_LE(d.trace.size(), 2u);
}

TEST(Solvers, ToySquareRecoveredFromSmallDisturbance) {
  const auto scene = make_square_scene(8);
  const TargetIndex idx(scene.targets);
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    const Pose T0 = exp_map(sample_ball_twist(0.01, rng)) * scene.ground_truth;
    const auto r = irls_register(scene.source, idx, scene.camera, T0, KernelConfig{}, SolverConfig{});
    const double tre = median_tre(known_correspondences(r.pose, scene.source, scene.targets, scene.camera));
    EXPECT_LT(tre, 1.0) << "trial " << trial;
    const auto d = dticp_register(scene.source, idx, scene.camera, T0, SolverConfig{});
    EXPECT_LT(median_tre(known_correspondences(d.pose, scene.source, scene.targets, scene.camera)), 1e-3);
  }
}

TEST(Solvers, KernelDataTermNeverDecreases) {
  std::mt19937_64 rng(43);
  const auto K = test::test_camera();
  for (int trial = 0; trial < 10; ++trial) {
    const PointSet3D src = test::random_cloud(rng, 40);
    const Pose gt = exp_map(test::random_twist(rng, 0.05, 0.05));
    const TargetIndex idx(project_points(gt, src, K));
    const Pose T0 = exp_map(test::random_twist(rng, 0.2, 0.05)) * gt;
    const auto r = irls_register(src, idx, K, T0, KernelConfig{}, SolverConfig{});
    for (const auto& rec : r.trace) {
      EXPECT_GE(rec.e_data, rec.e_data_before);
      if (rec.accepted) EXPECT_GE(rec.e_data_candidate, rec.e_data_before);
    }
  }
}

TEST(Solvers, RotationOnlyRecoversPureRotation) {
  std::mt19937_64 rng(44);
  const auto K = test::test_camera();
  const PointSet3D src = test::random_cloud(rng, 60);
  Vec6 xi = Vec6::Zero();
  xi.tail<3>() = Vec3(0.01, -0.015, 0.02);
  const Pose gt = exp_map(xi);
  const TargetIndex idx(project_points(gt, src, K));
  const auto r = rotation_only_register(src, idx, K, Pose::identity(), KernelConfig{}, SolverConfig{});
  EXPECT_LT(r.pose.translation().norm(), 1e-12);
  EXPECT_LT(pose_difference(r.pose, gt).angle_deg, 0.01);
}

TEST(Solvers, RotationOnlyKeepsCameraCenter) {
  std::mt19937_64 rng(45);
  const auto K = test::test_camera();
  const PointSet3D src = test::random_cloud(rng, 40);
  const Pose gt = exp_map(test::random_twist(rng, 0.2, 0.05));
  const TargetIndex idx(project_points(gt, src, K));
  const Pose T0(Mat3::Identity(), Vec3(0.1, -0.2, 0.3));
  const auto r = rotation_only_register(src, idx, K, T0, KernelConfig{}, SolverConfig{});
  // Left rotations about the camera center leave R^T t unchanged.
  const Vec3 c0 = T0.rotation().transpose() * T0.translation();
  const Vec3 c1 = r.pose.rotation().transpose() * r.pose.translation();
  EXPECT_LT((c1 - c0).norm(), 1e-9);
}

TEST(Solvers, DeterministicResults) {
  std::mt19937_64 rng(46);
  const auto K = test::test_camera();
  const PointSet3D src = test::random_cloud(rng, 80);
  const Pose gt = exp_map(test::random_twist(rng, 0.05, 0.05));
  const TargetIndex idx(project_points(gt, src, K));
  const Pose T0 = exp_map(test::random_twist(rng, 0.2, 0.05)) * gt;
  const auto a = irls_register(src, idx, K, T0, KernelConfig{}, SolverConfig{});
  const auto b = irls_register(src, idx, K, T0, KernelConfig{}, SolverConfig{});
  EXPECT_EQ(a.pose.matrix(), b.pose.matrix());
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].e_data, b.trace[i].e_data);
}

TEST(Solvers, AllPointsBehindCameraIsDegenerate) {
  const auto K = test::test_camera();
  PointSet3D src;
  src.points = {Vec3(0, 0, -10), Vec3(1, 0, -10), Vec3(0, 1, -10)};
  const TargetIndex idx({Vec2(500, 500)});
  const auto r = irls_register(src, idx, K, Pose::identity(), KernelConfig{}, SolverConfig{});
  EXPECT_EQ(r.termination, Termination::degenerate);
  const auto d = dticp_register(src, idx, K, Pose::identity(), SolverConfig{});
  EXPECT_EQ(d.termination, Termination::degenerate);
}

TEST(Solvers, SingularNormalMatrixRaises) {
  // One point on the optical axis: rotation about z leaves the cost unchanged,
  // and with a negligible damping the normal matrix stays singular.
  const auto K = test::test_camera();
  PointSet3D src;
  src.points = {Vec3(0, 0, 10)};
  const LeastSquaresProblem problem(src, K, {{0, Vec2(530, 500), 1.0}}, std::nullopt, 0.0,
                                    DofMode::full);
  SolverConfig cfg;
  cfg.lm_damping_up = 1.5;
  EXPECT_THROW(lm_step(Pose::identity(), problem, 1e-9, cfg), DegenerateGeometryError);
}

TEST(Solvers, ConfigValidation) {
  SolverConfig cfg;
  cfg.lm_damping_down = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.max_outer_iterations = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace dwpnp
