#pragma once

// Registration energies: the Euclidean closest-point loss (and its Huber
// flavour), the Gaussian-kernel data term with its pose prior, frozen IRLS
// weights and the coarse-to-fine kernel scale schedule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dwpnp/liegeo.hpp"
#include "dwpnp/pointset.hpp"
#include "dwpnp/spatial.hpp"

namespace dwpnp {

/// Kernel scale, prior weight and truncation settings.
struct KernelConfig {
  double ell = 1.0;            // current kernel scale, pixels
  double lambda = 1.0;         // pose-prior weight
  std::size_t shrink_period = 5;
  double ell_floor = 0.5;      // pixels
  std::size_t max_neighbors = 8;
  double truncation_radius = 3.0;  // in units of ell
  std::vector<double> point_weights;  // empty means all ones

  double point_weight(std::size_t i) const {
    return point_weights.empty() ? 1.0 : point_weights[i];
  }

  void validate() const {
    if (!(ell > 0.0)) throw ConfigError("kernel scale must be positive");
    if (!(ell_floor > 0.0)) throw ConfigError("kernel scale floor must be positive");
    if (!(lambda >= 0.0)) throw ConfigError("prior weight must be non-negative");
    if (shrink_period == 0) throw ConfigError("shrink period must be at least 1");
    if (max_neighbors == 0 || max_neighbors > 255) {
      throw ConfigError("neighbor cap must be in [1, 255]");
    }
    if (!(truncation_radius > 0.0)) throw ConfigError("truncation radius must be positive");
    for (double w : point_weights) {
      if (!(w >= 0.0)) throw ConfigError("point weights must be non-negative");
    }
  }
};

struct EnergyBreakdown {
  double e_data = 0.0;       // kernel sum, higher is better
  double e_init = 0.0;       // squared twist distance to the prior pose
  double weighted_ls = 0.0;  // sum of kernel * squared distance, px^2
  std::size_t excluded = 0;  // points behind the camera
};

inline double gaussian_kernel(double squared_distance, double ell) {
  return std::exp(-squared_distance / (2.0 * ell * ell));
}

/// Neighbors of one row that enter the kernel sum: the closest always, the
/// others only inside truncation_radius * ell.
inline std::size_t kernel_row_extent(std::span<const Neighbor> row, double ell,
                                     double truncation_radius) {
  if (row.empty()) return 0;
  const double r = truncation_radius * ell;
  const double r2 = r * r;
  std::size_t n = 1;
  while (n < row.size() && row[n].squared_distance <= r2) ++n;
  return n;
}

/// Kernel data term of a neighbor table. Summation runs in ascending source order.
inline double data_energy(const NeighborTable& table, const KernelConfig& cfg) {
  double e = 0.0;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    const auto row = table.row(i);
    const std::size_t n = kernel_row_extent(row, cfg.ell, cfg.truncation_radius);
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += gaussian_kernel(row[k].squared_distance, cfg.ell);
    e += cfg.point_weight(i) * s;
  }
  return e;
}

inline EnergyBreakdown rkhs_energy(const Pose& T, const PointSet3D& src, const TargetIndex& index,
                                   const CameraIntrinsics& K, const KernelConfig& cfg,
                                   const Pose& prior = Pose::identity()) {
  cfg.validate();
  const auto projected = project_all(T, src, K);
  const NeighborTable table(index, projected, cfg.max_neighbors);
  EnergyBreakdown out;
  out.e_data = data_energy(table, cfg);
  for (std::size_t i = 0; i < table.rows(); ++i) {
    if (!projected[i]) {
      ++out.excluded;
      continue;
    }
    const auto row = table.row(i);
    const std::size_t n = kernel_row_extent(row, cfg.ell, cfg.truncation_radius);
    for (std::size_t k = 0; k < n; ++k) {
      const double d2 = row[k].squared_distance;
      out.weighted_ls += cfg.point_weight(i) * gaussian_kernel(d2, cfg.ell) * d2;
    }
  }
  out.e_init = se3_distance(prior, T);
  return out;
}

/// Frozen IRLS weight w_ij for one (source, target) pair.
struct PairWeight {
  std::uint32_t source = 0;
  std::uint32_t target = 0;
  double weight = 0.0;  // kernel value only, in (0, 1]
};

/// Snapshot of kernel weights at the current iterate. The weights are plain
/// numbers afterwards: they do not follow the pose during the LS solve.
inline std::vector<PairWeight> irls_weights(const Pose& Tk, const PointSet3D& src,
                                            const TargetIndex& index, const CameraIntrinsics& K,
                                            const KernelConfig& cfg) {
  cfg.validate();
  const auto projected = project_all(Tk, src, K);
  const NeighborTable table(index, projected, cfg.max_neighbors);
  std::vector<PairWeight> out;
  out.reserve(table.rows() * 2);
  for (std::size_t i = 0; i < table.rows(); ++i) {
    const auto row = table.row(i);
    const std::size_t n = kernel_row_extent(row, cfg.ell, cfg.truncation_radius);
    for (std::size_t k = 0; k < n; ++k) {
      out.push_back({static_cast<std::uint32_t>(i), row[k].index,
                     gaussian_kernel(row[k].squared_distance, cfg.ell)});
    }
  }
  return out;
}

/// Gradient, w.r.t. a left twist at T, of sum_i w_i sum_j w_ij |pi(T p_i) - q_j|^2
/// with the weights held fixed.
inline Vec6 weighted_ls_gradient(const Pose& T, const PointSet3D& src, const PointSet2D& targets,
                                 const CameraIntrinsics& K, std::span<const PairWeight> weights,
                                 const KernelConfig& cfg) {
  Vec6 g = Vec6::Zero();
  for (const auto& pw : weights) {
    const Vec3 x = T * src[pw.source];
    const auto uv = project_camera_point(x, K);
    if (!uv) continue;
    const Vec2 r = *uv - targets[pw.target];
    g += 2.0 * cfg.point_weight(pw.source) * pw.weight *
         projection_twist_jacobian(x, K).transpose() * r;
  }
  return g;
}

/// One halving step of the kernel scale, clamped at the floor.
inline KernelConfig shrink_scale(KernelConfig cfg) {
  cfg.ell = std::max(0.5 * cfg.ell, cfg.ell_floor);
  return cfg;
}

/// Coarse-to-fine schedule. Iteration 0 initializes ell from the largest
/// squared pairing distance; afterwards ell halves every shrink_period
/// iterations and never drops below ell_floor.
inline KernelConfig update_scale(KernelConfig cfg, std::size_t iteration,
                                 std::span<const double> initial_squared_distances) {
  if (initial_squared_distances.empty()) throw ConfigError("no distances to initialize the kernel scale");
  if (iteration == 0) {
    const double mx =
        *std::max_element(initial_squared_distances.begin(), initial_squared_distances.end());
    cfg.ell = std::max(std::sqrt(std::max(mx, 0.0)), cfg.ell_floor);
  } else if (iteration % cfg.shrink_period == 0) {
    cfg = shrink_scale(std::move(cfg));
  }
  return cfg;
}

/// Sum of squared closest-point distances under T. Excluded pairs and points
/// that fall behind the camera contribute zero.
inline double euclidean_energy(const Pose& T, const CorrespondenceSet& corr, const PointSet3D& src,
                               const PointSet2D& tgt, const CameraIntrinsics& K) {
  double e = 0.0;
  for (const auto& c : corr.pairs) {
    if (c.excluded || c.target == kNoTarget) continue;
    const auto uv = try_project(T, src[c.source], K);
    if (!uv) continue;
    e += (*uv - tgt[c.target]).squaredNorm();
  }
  return e;
}

/// Huber penalty of a residual norm r (quadratic inside delta, linear outside).
inline double huber_loss(double r, double delta) {
  return r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
}

inline double huber_energy(const Pose& T, const CorrespondenceSet& corr, const PointSet3D& src,
                           const PointSet2D& tgt, const CameraIntrinsics& K, double delta) {
  double e = 0.0;
  for (const auto& c : corr.pairs) {
    if (c.excluded || c.target == kNoTarget) continue;
    const auto uv = try_project(T, src[c.source], K);
    if (!uv) continue;
    e += huber_loss((*uv - tgt[c.target]).norm(), delta);
  }
  return e;
}

}  // namespace dwpnp
