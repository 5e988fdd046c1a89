#pragma once

#include <optional>
#include <vector>

#include "dwpnp/liegeo.hpp"

namespace dwpnp {

/// Node annotation carried by 3-d points (label column of the point file).
enum class NodeLabel : int { none = 0, bifurcation = 1 };

/// Source shape: 3-d points with an optional per-point label.
struct PointSet3D {
  std::vector<Vec3> points;
  std::vector<int> labels;  // empty, or one entry per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_labels() const { return !labels.empty(); }
  const Vec3& operator[](std::size_t i) const { return points[i]; }
};

/// Projects every source point; entries behind the camera are nullopt.
inline std::vector<std::optional<Vec2>> project_all(const Pose& T, const PointSet3D& src,
                                                    const CameraIntrinsics& K) {
  std::vector<std::optional<Vec2>> out;
  out.reserve(src.size());
  for (const auto& p : src.points) out.push_back(try_project(T, p, K));
  return out;
}

/// Mean camera-frame depth of the source under T.
inline double mean_depth(const Pose& T, const PointSet3D& src) {
  if (src.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : src.points) sum += (T * p).z();
  return sum / static_cast<double>(src.size());
}

}  // namespace dwpnp
