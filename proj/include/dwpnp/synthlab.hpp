#pragma once

// Synthetic scenes: the planar square toy model, branching tree curves,
// pose disturbances, leaf pruning and the rotation/translation duality demo.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "dwpnp/liegeo.hpp"
#include "dwpnp/pointset.hpp"
#include "dwpnp/spatial.hpp"

namespace dwpnp {

struct SyntheticScene {
  PointSet3D source;
  Pose ground_truth;
  PointSet2D targets;
  /// Source index each target was projected from (identity before pruning).
  std::vector<std::uint32_t> target_source;
  CameraIntrinsics camera;
  std::uint64_t seed = 0;
  /// Tree structure, empty for non-tree scenes.
  std::vector<int> branch_of;      // per source point
  std::vector<int> branch_parent;  // per branch, -1 for the trunk

  std::size_t branch_count() const { return branch_parent.size(); }

  std::vector<int> leaf_branches() const {
    std::vector<bool> has_child(branch_parent.size(), false);
    for (int p : branch_parent) {
      if (p >= 0) has_child[static_cast<std::size_t>(p)] = true;
    }
    std::vector<int> leaves;
    for (std::size_t b = 0; b < has_child.size(); ++b) {
      if (!has_child[b]) leaves.push_back(static_cast<int>(b));
    }
    return leaves;
  }

  /// Targets paired with their generating source, usable for known-pair metrics
  /// only while the scene is unpruned.
  bool pruned() const { return targets.size() != source.size(); }
};

inline CameraIntrinsics toy_camera() { return {520.0, 520.0, 512.0, 512.0, 1024.0, 1024.0}; }

inline CameraIntrinsics tree_camera(double focal = 3000.0) {
  return {focal, focal, 512.0, 512.0, 1024.0, 1024.0};
}

namespace detail {

inline void project_scene(SyntheticScene& s) {
  s.targets.clear();
  s.target_source.clear();
  s.targets.reserve(s.source.size());
  for (std::size_t i = 0; i < s.source.size(); ++i) {
    s.targets.push_back(project(s.ground_truth, s.source[i], s.camera));
    s.target_source.push_back(static_cast<std::uint32_t>(i));
  }
}

}  // namespace detail

/// Points spread uniformly along the perimeter of the square with corners
/// (5,0,10), (10,0,10), (10,0,15), (5,0,15). Corners are always included.
/// Ground truth is the identity. Note that the square lies in the plane y = 0,
/// which contains the camera center, so its image is the row v = cy.
inline SyntheticScene make_square_scene(std::size_t edge_point_count) {
  if (edge_point_count < 4 || edge_point_count % 4 != 0) {
    throw ConfigError("square point count must be a multiple of 4 and at least 4");
  }
  const Vec3 corners[4] = {{5, 0, 10}, {10, 0, 10}, {10, 0, 15}, {5, 0, 15}};
  const std::size_t per_edge = edge_point_count / 4;
  SyntheticScene s;
  s.camera = toy_camera();
  for (std::size_t e = 0; e < 4; ++e) {
    const Vec3& a = corners[e];
    const Vec3& b = corners[(e + 1) % 4];
    for (std::size_t k = 0; k < per_edge; ++k) {
      const double u = static_cast<double>(k) / static_cast<double>(per_edge);
      s.source.points.push_back(a + u * (b - a));
    }
  }
  detail::project_scene(s);
  return s;
}

/// Uniform rotation drawn from a normalized Gaussian quaternion.
template <class Rng>
Mat3 random_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

struct TreeSceneOptions {
  std::size_t target_points = 2000;
  double lateral_half_extent = 60.0;  // mm
  double depth_half_extent = 40.0;    // mm, object-frame z
  double min_distance = 700.0;        // mm, camera to object center
  double max_distance = 900.0;
  double focal = 3000.0;              // pixels
};

/// Random branching curve built from cubic Bezier segments. Each branch after
/// the trunk starts on an earlier branch; that start point carries the
/// bifurcation label. The object is centered at the origin and seen by
/// `tree_camera()` under a random rotation at a depth of 700-900 mm.
inline SyntheticScene make_tree_scene(std::size_t branches, std::uint64_t seed,
                                      const TreeSceneOptions& opt = {}) {
  if (branches < 2) throw ConfigError("a tree needs at least 2 branches");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double L = opt.lateral_half_extent;
  const double D = opt.depth_half_extent;
  auto in_box = [&] {
    return Vec3((2 * unit(rng) - 1) * L, (2 * unit(rng) - 1) * L, (2 * unit(rng) - 1) * D);
  };
  auto clamp_box = [&](Vec3 p) {
    p.x() = std::clamp(p.x(), -L, L);
    p.y() = std::clamp(p.y(), -L, L);
    p.z() = std::clamp(p.z(), -D, D);
    return p;
  };

  struct Bezier {
    Vec3 c[4];
    Vec3 at(double u) const {
      const double v = 1.0 - u;
      return v * v * v * c[0] + 3 * v * v * u * c[1] + 3 * v * u * u * c[2] + u * u * u * c[3];
    }
  };
  std::vector<Bezier> curves;
  std::vector<int> parent;
  std::vector<int> generation;

  // Trunk spans the box along y.
  {
    Bezier b;
    b.c[0] = clamp_box(Vec3(0.2 * L * (2 * unit(rng) - 1), -L, 0.0));
    b.c[3] = clamp_box(Vec3(0.2 * L * (2 * unit(rng) - 1), L, 0.0));
    b.c[1] = clamp_box(b.c[0] + (b.c[3] - b.c[0]) / 3.0 + 0.3 * in_box());
    b.c[2] = clamp_box(b.c[0] + 2.0 * (b.c[3] - b.c[0]) / 3.0 + 0.3 * in_box());
    curves.push_back(b);
    parent.push_back(-1);
    generation.push_back(0);
  }
  std::vector<double> start_param(1, 0.0);
  for (std::size_t k = 1; k < branches; ++k) {
    std::vector<int> eligible;
    for (std::size_t j = 0; j < curves.size(); ++j) {
      if (generation[j] < 2) eligible.push_back(static_cast<int>(j));
    }
    const int p = eligible[static_cast<std::size_t>(unit(rng) * static_cast<double>(eligible.size())) %
                           eligible.size()];
    const double u = 0.15 + 0.7 * unit(rng);
    Bezier b;
    b.c[0] = curves[static_cast<std::size_t>(p)].at(u);
    const Vec3 end = in_box();
    const Vec3 dir = end - b.c[0];
    b.c[3] = clamp_box(b.c[0] + (0.4 + 0.4 * unit(rng)) * dir);
    b.c[1] = clamp_box(b.c[0] + (b.c[3] - b.c[0]) / 3.0 + 0.15 * in_box());
    b.c[2] = clamp_box(b.c[0] + 2.0 * (b.c[3] - b.c[0]) / 3.0 + 0.15 * in_box());
    curves.push_back(b);
    parent.push_back(p);
    generation.push_back(generation[static_cast<std::size_t>(p)] + 1);
    start_param.push_back(u);
  }

  // Arc-length sampling at a common spacing.
  constexpr int kFine = 400;
  std::vector<std::vector<double>> cum(curves.size());
  double total = 0.0;
  for (std::size_t b = 0; b < curves.size(); ++b) {
    cum[b].assign(kFine + 1, 0.0);
    for (int i = 1; i <= kFine; ++i) {
      cum[b][i] = cum[b][i - 1] +
                  (curves[b].at(i / double(kFine)) - curves[b].at((i - 1) / double(kFine))).norm();
    }
    total += cum[b][kFine];
  }
  const double spacing = total / static_cast<double>(opt.target_points);

  SyntheticScene s;
  s.seed = seed;
  s.camera = tree_camera(opt.focal);
  s.branch_parent = parent;
  for (std::size_t b = 0; b < curves.size(); ++b) {
    const double len = cum[b][kFine];
    const auto n = static_cast<std::size_t>(std::max(2.0, std::round(len / spacing)));
    for (std::size_t k = 0; k < n; ++k) {
      const double target = len * static_cast<double>(k) / static_cast<double>(n - 1);
      const auto it = std::lower_bound(cum[b].begin(), cum[b].end(), target);
      const auto i = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(it - cum[b].begin(), 1, kFine));
      const double seg = cum[b][i] - cum[b][i - 1];
      const double f = seg > 0.0 ? (target - cum[b][i - 1]) / seg : 0.0;
      const double u = (static_cast<double>(i - 1) + std::clamp(f, 0.0, 1.0)) / kFine;
      s.source.points.push_back(curves[b].at(u));
      s.source.labels.push_back(b > 0 && k == 0 ? static_cast<int>(NodeLabel::bifurcation)
                                                : static_cast<int>(NodeLabel::none));
      s.branch_of.push_back(static_cast<int>(b));
    }
  }

  std::uniform_real_distribution<double> dist(opt.min_distance, opt.max_distance);
  s.ground_truth = Pose(random_rotation(rng), Vec3(0.0, 0.0, dist(rng)));
  detail::project_scene(s);
  return s;
}

/// Frame the disturbance twist acts in. `sensor` composes on the left and
/// rotates about the camera centre; `object` composes on the right and rotates
/// about the object origin.
enum class PerturbFrame { sensor, object };

struct DisturbanceSpec {
  double sigma_translation = 0.0;  // scene length units, per axis
  double sigma_angle = 0.0;        // degrees, per axis
  std::size_t trials = 1;
  PerturbFrame frame = PerturbFrame::sensor;

  void validate() const {
    if (!(sigma_translation >= 0.0) || !(sigma_angle >= 0.0)) {
      throw ConfigError("disturbance sigmas must be non-negative");
    }
  }
};

/// T0 = exp(d) * T_gt (sensor frame) or T_gt * exp(d) (object frame), with d
/// Gaussian per axis.
inline Pose perturb_pose(const Pose& T_gt, const DisturbanceSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Vec6 d;
  for (int i = 0; i < 3; ++i) d[i] = spec.sigma_translation * n(rng);
  for (int i = 3; i < 6; ++i) d[i] = spec.sigma_angle * kDegToRad * n(rng);
  return spec.frame == PerturbFrame::sensor ? exp_map(d) * T_gt : T_gt * exp_map(d);
}

/// Twist drawn uniformly from the 6-ball of the given radius.
inline Vec6 sample_ball_twist(double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec6 d;
  do {
    for (int i = 0; i < 6; ++i) d[i] = n(rng);
  } while (d.norm() == 0.0);
  return d.normalized() * radius * std::pow(unit(rng), 1.0 / 6.0);
}

/// Removes the target points of `leaf_count` randomly chosen leaf branches.
/// The source keeps every point.
inline SyntheticScene prune_branches(const SyntheticScene& scene, std::size_t leaf_count,
                                     std::uint64_t seed) {
  if (leaf_count == 0) return scene;
  if (scene.branch_parent.empty()) throw ConfigError("scene has no branch structure");
  std::vector<int> leaves = scene.leaf_branches();
  if (leaf_count >= leaves.size()) {
    throw ConfigError("cannot prune " + std::to_string(leaf_count) + " of " +
                      std::to_string(leaves.size()) + " leaves");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(leaves.begin(), leaves.end(), rng);
  std::vector<bool> drop(scene.branch_parent.size(), false);
  for (std::size_t k = 0; k < leaf_count; ++k) drop[static_cast<std::size_t>(leaves[k])] = true;

  SyntheticScene out = scene;
  out.targets.clear();
  out.target_source.clear();
  for (std::size_t t = 0; t < scene.targets.size(); ++t) {
    const std::uint32_t i = scene.target_source[t];
    if (drop[static_cast<std::size_t>(scene.branch_of[i])]) continue;
    out.targets.push_back(scene.targets[t]);
    out.target_source.push_back(i);
  }
  return out;
}

/// Square scene shifted along z so that min depth / max lateral extent equals
/// `depth_ratio`.
inline PointSet3D square_at_depth_ratio(double depth_ratio, std::size_t count = 8) {
  PointSet3D p = make_square_scene(count).source;
  const double lateral = 10.0;  // max |x| of the square
  const double shift = depth_ratio * lateral - 10.0;
  for (auto& v : p.points) v.z() += shift;
  return p;
}

struct AmbiguityReport {
  Vec3 phi = Vec3::Zero();      // dual rotation
  std::vector<double> residual;      // |q^R - q^T| per point
  std::vector<double> displacement;  // |q^T - q^id| per point
  double depth_ratio = 0.0;
  double mean_residual = 0.0;
  double mean_displacement = 0.0;
  double ratio = 0.0;  // mean_residual / mean_displacement
};

namespace detail {

inline double depth_ratio_of(const PointSet3D& p) {
  double min_z = std::numeric_limits<double>::infinity();
  double lateral = 0.0;
  for (const auto& v : p.points) {
    min_z = std::min(min_z, v.z());
    lateral = std::max({lateral, std::abs(v.x()), std::abs(v.y())});
  }
  return lateral > 0.0 ? min_z / lateral : std::numeric_limits<double>::infinity();
}

template <class F>
double golden_section_min(F f, double a, double b, int iterations = 100) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a);
  double d = a + g * (b - a);
  double fc = f(c);
  double fd = f(d);
  for (int i = 0; i < iterations && b - a > 1e-12; ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

/// Compares translating the points by t with rotating them about the camera
/// center by the dual rotation phi2 = t_x / (z + t_z), phi1 = -t_y / (z + t_z)
/// at the mean depth z. phi3 minimizes the summed squared mismatch.
inline AmbiguityReport ambiguity_demo(const PointSet3D& p, const Vec3& t, const CameraIntrinsics& K,
                                      double min_depth_ratio = 5.0) {
  if (p.empty()) throw PreconditionError("empty point set");
  AmbiguityReport r;
  r.depth_ratio = detail::depth_ratio_of(p);
  if (!(r.depth_ratio >= min_depth_ratio)) {
    throw PreconditionError("depth ratio " + std::to_string(r.depth_ratio) + " is below " +
                            std::to_string(min_depth_ratio));
  }
  double z = 0.0;
  for (const auto& v : p.points) z += v.z();
  z /= static_cast<double>(p.size());
  const Pose Tt(Mat3::Identity(), t);
  r.phi = Vec3(0.0 - t.y() / (z + t.z()), t.x() / (z + t.z()), 0.0);

  auto mismatch = [&](const Vec3& phi) {
    const Pose Tr(so3_exp(phi), Vec3::Zero());
    double s = 0.0;
    for (const auto& v : p.points) s += (project(Tr, v, K) - project(Tt, v, K)).squaredNorm();
    return s;
  };
  if (t.squaredNorm() > 0.0) {
    r.phi.z() = detail::golden_section_min(
        [&](double phi3) { return mismatch(Vec3(r.phi.x(), r.phi.y(), phi3)); }, -0.2, 0.2);
  }

  const Pose Tr(so3_exp(r.phi), Vec3::Zero());
  for (const auto& v : p.points) {
    const Vec2 qt = project(Tt, v, K);
    r.residual.push_back((project(Tr, v, K) - qt).norm());
    r.displacement.push_back((qt - project(Pose::identity(), v, K)).norm());
  }
  const double n = static_cast<double>(p.size());
  r.mean_residual = std::accumulate(r.residual.begin(), r.residual.end(), 0.0) / n;
  r.mean_displacement = std::accumulate(r.displacement.begin(), r.displacement.end(), 0.0) / n;
  r.ratio = r.mean_displacement > 0.0 ? r.mean_residual / r.mean_displacement : 0.0;
  return r;
}

}  // namespace dwpnp
