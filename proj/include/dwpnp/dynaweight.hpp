#pragma once

// Alternating search between the full-set kernel problem and a subset problem
// whose pairs are frozen within each solve, started from a rotation-only fit.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "dwpnp/metrics.hpp"
#include "dwpnp/solvers.hpp"

namespace dwpnp {

enum class SubsetStrategy { graph_nodes, farthest_point_k };

struct AlternationConfig {
  double xi = 2.0;  // median TRE threshold, pixels
  std::size_t max_alternations = 20;
  SubsetStrategy subset_strategy = SubsetStrategy::graph_nodes;
  std::size_t k = 0;          // farthest-point subset size; 0 means max(8, N/20)
  bool subset_first = false;  // run the subset solve before the full solve
  bool rotation_init = true;

  void validate() const {
    if (!(xi > 0.0)) throw ConfigError("TRE threshold must be positive");
    if (k != 0 && k < 4) throw ConfigError("subset size must be at least 4");
  }

  std::size_t subset_size(std::size_t n) const { return k != 0 ? k : std::max<std::size_t>(8, n / 20); }
};

struct AlternationRecord {
  Pose pose_aux;         // after the subset solve
  Pose pose_full;        // after the full-set solve
  double xi_full = 0.0;  // median TRE of the full set after the alternation
  double xi_subset = 0.0;
};

struct AlternationTrace {
  Pose initial;                 // after the rotation-only start
  double initial_xi = 0.0;
  std::vector<AlternationRecord> records;
};

/// Greedy farthest-point sampling starting at index 0; ties go to the lowest index.
inline std::vector<std::uint32_t> farthest_point_subset(const PointSet3D& src, std::size_t k) {
  if (k < 4) throw PreconditionError("subset size must be at least 4");
  if (src.size() < k) {
    throw PreconditionError("cannot pick " + std::to_string(k) + " points from " +
                            std::to_string(src.size()));
  }
  std::vector<std::uint32_t> chosen{0};
  std::vector<double> d(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) d[i] = (src[i] - src[0]).squaredNorm();
  while (chosen.size() < k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.size(); ++i) {
      if (d[i] > d[best]) best = i;
    }
    chosen.push_back(static_cast<std::uint32_t>(best));
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = std::min(d[i], (src[i] - src[best]).squaredNorm());
    }
  }
  return chosen;
}

/// Subset of source points used by the auxiliary problem. Labeled bifurcation
/// points are used when there are at least 4 of them; otherwise the
/// farthest-point subset of size `k` (at least 4).
inline std::vector<std::uint32_t> select_subset(const PointSet3D& src, SubsetStrategy strategy,
                                                std::size_t k) {
  if (src.empty()) throw PreconditionError("source set is empty");
  if (strategy == SubsetStrategy::graph_nodes && src.has_labels()) {
    std::vector<std::uint32_t> nodes;
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src.labels[i] == static_cast<int>(NodeLabel::bifurcation)) {
        nodes.push_back(static_cast<std::uint32_t>(i));
      }
    }
    if (nodes.size() >= 4) return nodes;
  }
  return farthest_point_subset(src, std::max<std::size_t>(k, 4));
}

namespace detail {

inline double full_median_tre(const Pose& T, const PointSet3D& src, const TargetIndex& index,
                              const CameraIntrinsics& K) {
  const auto corr = closest_correspondences(T, src, index, K);
  if (corr.excluded_count() == corr.pairs.size()) return std::numeric_limits<double>::infinity();
  return median_tre(corr);
}

inline FrozenPairing subset_pairing(const Pose& T, const PointSet3D& src, const TargetIndex& index,
                                    const CameraIntrinsics& K,
                                    const std::vector<std::uint32_t>& subset) {
  std::vector<FrozenPairing::Pair> pairs;
  pairs.reserve(subset.size());
  for (auto i : subset) {
    if (const auto uv = try_project(T, src[i], K)) pairs.push_back({i, index.nearest(*uv).index});
  }
  return FrozenPairing(src, index, K, std::move(pairs));
}

inline void append_trace(RegistrationResult& into, const RegistrationResult& from) {
  into.trace.insert(into.trace.end(), from.trace.begin(), from.trace.end());
}

}  // namespace detail

struct DynaWeightResult {
  RegistrationResult result;
  AlternationTrace alternation;
};

/// Rotation-only start, then up to max_alternations rounds of full-set solve
/// and subset solve, stopping once the full-set median TRE drops below xi.
/// Every solve is warm-started from the previous pose. The returned pose is the
/// one with the smallest full-set median TRE seen.
inline DynaWeightResult dynaweight_register(const PointSet3D& src, const TargetIndex& index,
                                            const CameraIntrinsics& K, const Pose& T0,
                                            const KernelConfig& kcfg, const SolverConfig& scfg,
                                            const AlternationConfig& acfg) {
  const detail::Stopwatch clock;
  if (src.empty()) throw ConfigError("source set is empty");
  acfg.validate();
  kcfg.validate();
  scfg.validate();
  const auto subset = select_subset(src, acfg.subset_strategy, acfg.subset_size(src.size()));

  DynaWeightResult out;
  RegistrationResult& res = out.result;
  res.termination = Termination::max_iterations;

  auto finish = [&](const Pose& pose, Termination term, std::string msg) {
    res.pose = pose;
    res.termination = term;
    res.message = std::move(msg);
    res.wall_time_ms = clock.elapsed_ms();
    return out;
  };

  Pose T = T0;
  if (acfg.rotation_init) {
    const auto r = rotation_only_register(src, index, K, T0, kcfg, scfg);
    detail::append_trace(res, r);
    if (r.termination == Termination::degenerate) return finish(r.pose, r.termination, r.message);
    T = r.pose;
  }
  out.alternation.initial = T;
  double xi = detail::full_median_tre(T, src, index, K);
  out.alternation.initial_xi = xi;
  Pose best = T;
  double best_xi = xi;
  if (xi < acfg.xi) return finish(T, Termination::converged, {});

  auto full_solve = [&](const Pose& from) {
    return irls_register(src, index, K, from, kcfg, scfg);
  };
  auto subset_solve = [&](const Pose& from) {
    const auto pairing = detail::subset_pairing(from, src, index, K, subset);
    if (pairing.pairs().size() < 4) {
      RegistrationResult r;
      r.pose = from;
      r.termination = Termination::degenerate;
      r.message = "fewer than 4 subset points in front of the camera";
      return r;
    }
    return frozen_pairs_register(src, pairing, K, from, kcfg, scfg);
  };

  for (std::size_t a = 0; a < acfg.max_alternations; ++a) {
    AlternationRecord rec;
    const auto first = acfg.subset_first ? subset_solve(T) : full_solve(T);
    detail::append_trace(res, first);
    if (first.termination == Termination::degenerate) {
      return finish(best, Termination::degenerate, first.message);
    }
    const auto second = acfg.subset_first ? full_solve(first.pose) : subset_solve(first.pose);
    detail::append_trace(res, second);
    if (second.termination == Termination::degenerate) {
      return finish(best, Termination::degenerate, second.message);
    }
    rec.pose_aux = acfg.subset_first ? first.pose : second.pose;
    rec.pose_full = acfg.subset_first ? second.pose : first.pose;
    T = second.pose;

    std::vector<double> sub_d;
    for (auto i : subset) {
      if (const auto uv = try_project(T, src[i], K)) {
        sub_d.push_back(std::sqrt(index.nearest(*uv).squared_distance));
      }
    }
    rec.xi_subset = sub_d.empty() ? std::numeric_limits<double>::infinity() : median(sub_d);
    rec.xi_full = detail::full_median_tre(T, src, index, K);
    out.alternation.records.push_back(rec);
    if (rec.xi_full < best_xi) {
      best_xi = rec.xi_full;
      best = T;
    }
    if (rec.xi_full < acfg.xi) return finish(T, Termination::converged, {});
  }
  return finish(best, Termination::max_iterations, {});
}

}  // namespace dwpnp
