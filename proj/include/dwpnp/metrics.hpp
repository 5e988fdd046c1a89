#pragma once

// Evaluation metrics: projection residual, gross failure rate, TRE and pose
// differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dwpnp/liegeo.hpp"
#include "dwpnp/pointset.hpp"
#include "dwpnp/spatial.hpp"

namespace dwpnp {

inline constexpr double kDefaultGfrThreshold = 5.0;

struct MetricsReport {
  double mean_pr = 0.0;
  double median_pr = 0.0;
  double pr_p75 = 0.0;
  double pr_p95 = 0.0;
  double gfr = 0.0;
  double median_tre = 0.0;
  double angular_error = 0.0;        // degrees
  double translational_error = 0.0;  // scene length units
  double runtime_ms = 0.0;
};

/// Linear-interpolation percentile (q in [0, 100]) of unsorted values.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw PreconditionError("percentile of an empty list");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) { return percentile(std::move(values), 50.0); }

inline double mean(std::span<const double> values) {
  if (values.empty()) throw PreconditionError("mean of an empty list");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

/// Ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

/// Spearman rank correlation: Pearson correlation of the average ranks.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw PreconditionError("rank correlation needs two equally long lists of at least 2 values");
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean(rx);
  const double my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

enum class CorrespondenceMode { known, closest };

/// RMSE of projected-source-to-target distances. In known mode target i is the
/// counterpart of source i; in closest mode each projection is paired with its
/// nearest target. Points behind the camera are skipped.
inline double projection_residual(const Pose& T, const PointSet3D& src, CorrespondenceMode mode,
                                  const PointSet2D& targets, const CameraIntrinsics& K,
                                  const TargetIndex* index = nullptr) {
  if (src.empty()) throw PreconditionError("projection residual of an empty source");
  if (mode == CorrespondenceMode::known && targets.size() != src.size()) {
    throw PreconditionError("known pairing needs one target per source point");
  }
  if (mode == CorrespondenceMode::closest && index == nullptr) {
    throw PreconditionError("closest pairing needs a target index");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto uv = try_project(T, src[i], K);
    if (!uv) continue;
    sum += mode == CorrespondenceMode::known ? (*uv - targets[i]).squaredNorm()
                                             : index->nearest(*uv).squared_distance;
    ++n;
  }
  if (n == 0) throw PreconditionError("no source point projects in front of the camera");
  return std::sqrt(sum / static_cast<double>(n));
}

inline double gross_failure_rate(std::span<const double> prs,
                                 double threshold = kDefaultGfrThreshold) {
  if (prs.empty()) throw PreconditionError("gross failure rate of an empty list");
  if (!(threshold > 0.0)) throw PreconditionError("threshold must be positive");
  const auto fails = std::count_if(prs.begin(), prs.end(), [&](double p) { return p > threshold; });
  return static_cast<double>(fails) / static_cast<double>(prs.size());
}

struct PoseDifference {
  double angle_deg = 0.0;
  double distance = 0.0;
};

inline PoseDifference pose_difference(const Pose& A, const Pose& B) {
  return {rotation_angle(A.rotation() * B.rotation().transpose()) * kRadToDeg,
          (A.translation() - B.translation()).norm()};
}

/// Median of pair distances, skipping excluded pairs.
inline double median_tre(const CorrespondenceSet& corr) {
  std::vector<double> d;
  d.reserve(corr.pairs.size());
  for (const auto& c : corr.pairs) {
    if (!c.excluded) d.push_back(std::sqrt(c.squared_distance));
  }
  if (d.empty()) throw PreconditionError("median TRE of an empty pairing");
  return median(std::move(d));
}

/// Known-pair correspondences (source i with target i) at pose T.
inline CorrespondenceSet known_correspondences(const Pose& T, const PointSet3D& src,
                                               const PointSet2D& targets,
                                               const CameraIntrinsics& K) {
  if (targets.size() != src.size()) {
    throw PreconditionError("known pairing needs one target per source point");
  }
  CorrespondenceSet set;
  set.pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    Correspondence c;
    c.source = static_cast<std::uint32_t>(i);
    if (const auto uv = try_project(T, src[i], K)) {
      c.target = static_cast<std::uint32_t>(i);
      c.squared_distance = (*uv - targets[i]).squaredNorm();
    } else {
      c.excluded = true;
    }
    set.pairs.push_back(c);
  }
  return set;
}

inline CorrespondenceSet closest_correspondences(const Pose& T, const PointSet3D& src,
                                                 const TargetIndex& index,
                                                 const CameraIntrinsics& K) {
  return closest_point_search(index, project_all(T, src, K));
}

/// Ratio of mean camera depth under T to mean depth under the ground truth.
/// 1 means the projected size is right; the scale error is |ratio - 1|.
inline double depth_scale_error(const Pose& T, const Pose& T_gt, const PointSet3D& src) {
  const double gt = mean_depth(T_gt, src);
  if (!(gt > 0.0)) throw PreconditionError("ground-truth mean depth must be positive");
  return std::abs(mean_depth(T, src) / gt - 1.0);
}

}  // namespace dwpnp
