#pragma once

// Static 2-d KD-tree over the fixed target set plus closest-point search.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "dwpnp/liegeo.hpp"

namespace dwpnp {

using PointSet2D = std::vector<Vec2>;

struct Neighbor {
  std::uint32_t index = 0;
  double squared_distance = std::numeric_limits<double>::infinity();

  /// Strict order used everywhere: distance first, then lowest index.
  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    if (a.squared_distance != b.squared_distance) return a.squared_distance < b.squared_distance;
    return a.index < b.index;
  }
};

/// Balanced KD-tree over immutable 2-d targets with small leaf buckets. Queries
/// are const and thread-safe; ties are resolved towards the lowest input index.
class TargetIndex {
 public:
  static constexpr std::size_t kLeafSize = 4;

  explicit TargetIndex(PointSet2D points) : points_(std::move(points)) {
    if (points_.empty()) throw ConfigError("target set is empty");
    if (points_.size() > std::numeric_limits<std::uint32_t>::max() / 2) {
      throw ConfigError("target set too large");
    }
    std::vector<std::uint32_t> order(points_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build(order, 0, order.size());
    ids_ = order;
    sorted_.reserve(order.size());
    for (auto i : order) sorted_.push_back(points_[i]);
    build_grid();
  }

  std::size_t size() const { return points_.size(); }
  const PointSet2D& points() const { return points_; }
  const Vec2& point(std::size_t i) const { return points_[i]; }

  /// Nearest stored point. `visits` (optional) receives the number of stored
  /// points whose distance was evaluated.
  Neighbor nearest(const Vec2& q, std::size_t* visits = nullptr) const {
    Neighbor best;
    std::size_t count = 0;
    Vec2 off = Vec2::Zero();
    search(q, 0, std::span<Neighbor>(&best, 1), count, visits, off, 0.0);
    return best;
  }

  /// Up to out.size() nearest points sorted by (distance, index). Returns the
  /// number written.
  std::size_t k_nearest(const Vec2& q, std::span<Neighbor> out, std::size_t* visits = nullptr) const {
    std::size_t count = 0;
    if (out.empty()) return 0;
    Vec2 off = Vec2::Zero();
    search(q, 0, out, count, visits, off, 0.0);
    return count;
  }

  /// As k_nearest, but neighbors farther than sqrt(max_squared_distance) are
  /// dropped, except the nearest one, which is always returned.
  /// `nearest_bound`, if finite, must be at least the squared distance to the
  /// nearest point (any stored point's distance will do); it lets a single
  /// pass find the nearest one.
  std::size_t k_nearest_within(const Vec2& q, std::span<Neighbor> out, double max_squared_distance,
                               std::size_t* visits = nullptr,
                               double nearest_bound = std::numeric_limits<double>::infinity()) const {
    if (out.empty()) return 0;
    std::size_t count = 0;
    Vec2 off = Vec2::Zero();
    const double limit = std::isfinite(nearest_bound) ? std::max(max_squared_distance, nearest_bound)
                                                      : max_squared_distance;
    if (grid_usable(limit)) {
      grid_search(q, out, count, visits, limit);
    } else {
      search(q, 0, out, count, visits, off, 0.0, limit);
    }
    if (count == 0) {
      out[0] = nearest(q, visits);
      return 1;
    }
    std::size_t n = 1;
    while (n < count && out[n].squared_distance <= max_squared_distance) ++n;
    return n;
  }

 private:
  struct Node {
    double split = 0.0;
    std::uint32_t lo = 0;  // leaf: point range; inner: children
    std::uint32_t hi = 0;
    std::uint8_t axis = 0;
    bool leaf = false;
  };

  std::uint32_t build(std::vector<std::uint32_t>& order, std::size_t lo, std::size_t hi) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    if (hi - lo <= kLeafSize) {
      nodes_[id].leaf = true;
      nodes_[id].lo = static_cast<std::uint32_t>(lo);
      nodes_[id].hi = static_cast<std::uint32_t>(hi);
      return id;
    }
    Vec2 mn = points_[order[lo]];
    Vec2 mx = mn;
    for (std::size_t i = lo + 1; i < hi; ++i) {
      mn = mn.cwiseMin(points_[order[i]]);
      mx = mx.cwiseMax(points_[order[i]]);
    }
    const int axis = (mx.x() - mn.x()) >= (mx.y() - mn.y()) ? 0 : 1;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(order.begin() + static_cast<std::ptrdiff_t>(lo),
                     order.begin() + static_cast<std::ptrdiff_t>(mid),
                     order.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double ca = points_[a][axis];
                       const double cb = points_[b][axis];
                       return ca != cb ? ca < cb : a < b;
                     });
    // Left holds coordinates <= split, right holds coordinates >= split.
    const double split = points_[order[mid]][axis];
    const std::uint32_t left = build(order, lo, mid);
    const std::uint32_t right = build(order, mid, hi);
    nodes_[id].split = split;
    nodes_[id].axis = static_cast<std::uint8_t>(axis);
    nodes_[id].lo = left;
    nodes_[id].hi = right;
    return id;
  }

  // Uniform grid used for radius-bounded queries, whose cost then no longer
  // depends on the tree depth. Cells are about four typical point spacings
  // wide and list their points in ascending index order.
  static constexpr double kGridMaxReach = 2.5;  // query radius limit, in cells

  void build_grid() {
    if (points_.size() < 2) return;
    std::vector<double> spacing;
    spacing.reserve(points_.size());
    Neighbor nb[2];
    for (const auto& p : points_) {
      if (k_nearest(p, nb) == 2 && nb[1].squared_distance > 0.0) {
        spacing.push_back(nb[1].squared_distance);
      }
    }
    if (spacing.empty()) return;
    const auto mid = spacing.begin() + static_cast<std::ptrdiff_t>(spacing.size() / 2);
    std::nth_element(spacing.begin(), mid, spacing.end());
    double h = 4.0 * std::sqrt(*mid);
    Vec2 mn = points_[0], mx = points_[0];
    for (const auto& p : points_) {
      mn = mn.cwiseMin(p);
      mx = mx.cwiseMax(p);
    }
    const double cap = 4.0 * static_cast<double>(points_.size()) + 16.0;
    auto cells = [&](double c) {
      return (std::floor((mx.x() - mn.x()) / c) + 1.0) * (std::floor((mx.y() - mn.y()) / c) + 1.0);
    };
    while (cells(h) > cap) h *= 1.5;
    if (!(h > 0.0) || !std::isfinite(h)) return;
    cell_ = h;
    origin_ = mn;
    gw_ = static_cast<std::int64_t>(std::floor((mx.x() - mn.x()) / h)) + 1;
    gh_ = static_cast<std::int64_t>(std::floor((mx.y() - mn.y()) / h)) + 1;
    std::vector<std::uint32_t> cell_of(points_.size());
    cell_start_.assign(static_cast<std::size_t>(gw_ * gh_) + 1, 0);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto cx = std::min(gw_ - 1, static_cast<std::int64_t>((points_[i].x() - mn.x()) / h));
      const auto cy = std::min(gh_ - 1, static_cast<std::int64_t>((points_[i].y() - mn.y()) / h));
      cell_of[i] = static_cast<std::uint32_t>(cy * gw_ + cx);
      ++cell_start_[cell_of[i] + 1];
    }
    for (std::size_t c = 1; c < cell_start_.size(); ++c) cell_start_[c] += cell_start_[c - 1];
    std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
    cell_pts_.resize(points_.size());
    cell_ids_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const std::uint32_t slot = fill[cell_of[i]]++;
      cell_pts_[slot] = points_[i];
      cell_ids_[slot] = static_cast<std::uint32_t>(i);
    }
  }

  bool grid_usable(double limit) const {
    return cell_ > 0.0 && limit <= (kGridMaxReach * cell_) * (kGridMaxReach * cell_);
  }

  // Offers every point within sqrt(limit) of q. The scanned cell range is
  // widened by a relative margin so that rounding cannot drop a boundary point.
  void grid_search(const Vec2& q, std::span<Neighbor> out, std::size_t& count, std::size_t* visits,
                   double limit) const {
    const double r = std::sqrt(limit) * (1.0 + 1e-12) + 1e-9 * (1.0 + q.cwiseAbs().maxCoeff());
    auto range = [&](double c, double o, std::int64_t n, std::int64_t& a, std::int64_t& b) {
      const double lo = std::floor((c - r - o) / cell_);
      const double hi = std::floor((c + r - o) / cell_);
      if (hi < 0.0 || lo > static_cast<double>(n - 1)) return false;
      a = std::max<std::int64_t>(0, static_cast<std::int64_t>(lo));
      b = std::min<std::int64_t>(n - 1, static_cast<std::int64_t>(hi));
      return true;
    };
    std::int64_t x0, x1, y0, y1;
    if (!range(q.x(), origin_.x(), gw_, x0, x1) || !range(q.y(), origin_.y(), gh_, y0, y1)) return;
    for (std::int64_t y = y0; y <= y1; ++y) {
      const std::size_t row = static_cast<std::size_t>(y * gw_);
      const std::uint32_t lo = cell_start_[row + static_cast<std::size_t>(x0)];
      const std::uint32_t hi = cell_start_[row + static_cast<std::size_t>(x1) + 1];
      if (visits) *visits += hi - lo;
      for (std::uint32_t i = lo; i < hi; ++i) {
        const double d = (cell_pts_[i] - q).squaredNorm();
        if (d <= (count < out.size() ? limit : out[count - 1].squared_distance)) {
          offer(out, count, {cell_ids_[i], d});
        }
      }
    }
  }

  // Bounded sorted insertion into out[0..count).
  static void offer(std::span<Neighbor> out, std::size_t& count, const Neighbor& cand) {
    if (count == out.size()) {
      if (!(cand < out[count - 1])) return;
      --count;
    }
    std::size_t pos = count;
    while (pos > 0 && cand < out[pos - 1]) {
      out[pos] = out[pos - 1];
      --pos;
    }
    out[pos] = cand;
    ++count;
  }

  // `off` holds the per-axis offset from q to the current cell and `rd` its
  // squared norm, a lower bound on the distance to anything in the cell.
  // Points beyond `limit` (squared) are never offered.
  void search(const Vec2& q, std::uint32_t id, std::span<Neighbor> out, std::size_t& count,
              std::size_t* visits, Vec2& off, double rd,
              double limit = std::numeric_limits<double>::infinity()) const {
    const Node& node = nodes_[id];
    if (node.leaf) {
      if (visits) *visits += node.hi - node.lo;
      for (std::uint32_t i = node.lo; i < node.hi; ++i) {
        const double d = (sorted_[i] - q).squaredNorm();
        if (d <= (count < out.size() ? limit : out[count - 1].squared_distance)) {
          offer(out, count, {ids_[i], d});
        }
      }
      return;
    }
    const int axis = node.axis;
    const double diff = q[axis] - node.split;
    const std::uint32_t near = diff < 0.0 ? node.lo : node.hi;
    const std::uint32_t far = diff < 0.0 ? node.hi : node.lo;
    search(q, near, out, count, visits, off, rd, limit);
    // Equal distance must still be explored: a lower-index tie may live there.
    const double saved = off[axis];
    const double far_rd = rd - saved * saved + diff * diff;
    if (far_rd <= (count < out.size() ? limit : out[count - 1].squared_distance)) {
      off[axis] = diff;
      search(q, far, out, count, visits, off, far_rd, limit);
      off[axis] = saved;
    }
  }

  PointSet2D points_;
  PointSet2D sorted_;               // points in leaf order
  std::vector<std::uint32_t> ids_;  // input index of sorted_[i]
  std::vector<Node> nodes_;
  double cell_ = 0.0;  // 0 when the grid is unused
  Vec2 origin_ = Vec2::Zero();
  std::int64_t gw_ = 0;
  std::int64_t gh_ = 0;
  std::vector<std::uint32_t> cell_start_;
  std::vector<Vec2> cell_pts_;
  std::vector<std::uint32_t> cell_ids_;
};

inline TargetIndex build_index(PointSet2D targets) { return TargetIndex(std::move(targets)); }

inline constexpr std::uint32_t kNoTarget = std::numeric_limits<std::uint32_t>::max();

struct Correspondence {
  std::uint32_t source = 0;
  std::uint32_t target = kNoTarget;
  double squared_distance = 0.0;
  bool excluded = false;  // projected point was behind the camera
};

/// One entry per source point, in source order.
struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  std::size_t iteration = 0;

  std::size_t excluded_count() const {
    return static_cast<std::size_t>(
        std::count_if(pairs.begin(), pairs.end(), [](const auto& c) { return c.excluded; }));
  }
};

/// Projected source points; nullopt marks points behind the camera.
using ProjectedSet = std::vector<std::optional<Vec2>>;

inline CorrespondenceSet closest_point_search(const TargetIndex& index, const ProjectedSet& projected,
                                              std::size_t iteration = 0) {
  if (projected.empty()) throw ConfigError("no projected points to pair");
  CorrespondenceSet set;
  set.iteration = iteration;
  set.pairs.reserve(projected.size());
  for (std::size_t i = 0; i < projected.size(); ++i) {
    Correspondence c;
    c.source = static_cast<std::uint32_t>(i);
    if (projected[i]) {
      const Neighbor nn = index.nearest(*projected[i]);
      c.target = nn.index;
      c.squared_distance = nn.squared_distance;
    } else {
      c.excluded = true;
    }
    set.pairs.push_back(c);
  }
  return set;
}

inline CorrespondenceSet closest_point_search(const TargetIndex& index, const PointSet2D& projected,
                                              std::size_t iteration = 0) {
  ProjectedSet p(projected.begin(), projected.end());
  return closest_point_search(index, p, iteration);
}

/// Fixed-width table of the m nearest targets of every projected point.
/// Rows of excluded points are empty.
class NeighborTable {
 public:
  NeighborTable() = default;

  NeighborTable(const TargetIndex& index, const ProjectedSet& projected, std::size_t m)
      : width_(m), counts_(projected.size(), 0), cells_(projected.size() * m) {
    for (std::size_t i = 0; i < projected.size(); ++i) {
      if (!projected[i]) continue;
      counts_[i] = static_cast<std::uint8_t>(
          index.k_nearest(*projected[i], std::span<Neighbor>(cells_.data() + i * m, m)));
    }
  }

  std::size_t rows() const { return counts_.size(); }
  std::size_t width() const { return width_; }

  std::span<const Neighbor> row(std::size_t i) const {
    return {cells_.data() + i * width_, counts_[i]};
  }

  /// Closest-point pairing implied by the first column.
  CorrespondenceSet correspondences(std::size_t iteration = 0) const {
    CorrespondenceSet set;
    set.iteration = iteration;
    set.pairs.reserve(rows());
    for (std::size_t i = 0; i < rows(); ++i) {
      Correspondence c;
      c.source = static_cast<std::uint32_t>(i);
      if (counts_[i] == 0) {
        c.excluded = true;
      } else {
        c.target = cells_[i * width_].index;
        c.squared_distance = cells_[i * width_].squared_distance;
      }
      set.pairs.push_back(c);
    }
    return set;
  }

 private:
  std::size_t width_ = 0;
  std::vector<std::uint8_t> counts_;
  std::vector<Neighbor> cells_;
};

}  // namespace dwpnp
