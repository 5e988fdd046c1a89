#pragma once

// Iterative registration engines.
//
// Every engine alternates two things: pairing projected source points with
// targets at the current pose, and a Levenberg-Marquardt solve of the
// resulting least-squares problem with the pairing and weights frozen.
// The kernel engines accept a candidate only if the kernel data term does
// not decrease; DT-ICP accepts a candidate if its closest-point loss does not
// increase.

#include <Eigen/Cholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dwpnp/liegeo.hpp"
#include "dwpnp/objectives.hpp"
#include "dwpnp/pointset.hpp"
#include "dwpnp/spatial.hpp"

namespace dwpnp {

/// Which twist components a solve may change.
enum class DofMode { full, rotation_only };

struct SolverConfig {
  std::size_t max_outer_iterations = 50;
  std::size_t lm_max_inner_iterations = 1;
  double lm_initial_damping = 1e-3;
  double lm_damping_up = 10.0;
  double lm_damping_down = 0.1;
  std::size_t lm_max_attempts = 10;
  double twist_tolerance = 1e-7;
  double energy_tolerance = 1e-6;
  std::size_t max_rejected_steps = 5;
  double max_depth_growth = 10.0;  // reject candidates whose mean depth exceeds this multiple
  double huber_delta = 5.0;        // pixels, DT-ICP Huber flavour

  void validate() const {
    if (max_outer_iterations == 0) throw ConfigError("max_outer_iterations must be >= 1");
    if (lm_max_inner_iterations == 0) throw ConfigError("lm_max_inner_iterations must be >= 1");
    if (!(lm_initial_damping > 0.0)) throw ConfigError("initial damping must be positive");
    if (!(lm_damping_up > 1.0)) throw ConfigError("damping up-factor must exceed 1");
    if (!(lm_damping_down > 0.0 && lm_damping_down < 1.0)) {
      throw ConfigError("damping down-factor must lie in (0, 1)");
    }
    if (!(twist_tolerance > 0.0) || !(energy_tolerance > 0.0)) {
      throw ConfigError("tolerances must be positive");
    }
    if (max_rejected_steps == 0) throw ConfigError("max_rejected_steps must be >= 1");
    if (!(max_depth_growth > 1.0)) throw ConfigError("depth guard factor must exceed 1");
    if (!(huber_delta > 0.0)) throw ConfigError("huber delta must be positive");
  }
};

enum class Termination { converged, max_iterations, degenerate };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::max_iterations: return "max_iterations";
    case Termination::degenerate: return "degenerate";
  }
  return "unknown";
}

/// One outer iteration. Kernel energies are evaluated at the same ell.
struct IterationRecord {
  std::size_t iteration = 0;
  double ell = 0.0;
  double e_data_before = 0.0;     // at the iterate entering this iteration
  double e_data_candidate = 0.0;  // at the LM candidate
  double e_data = 0.0;            // at the iterate kept after the decision
  double e_init = 0.0;
  double loss = 0.0;              // closest-point loss (DT-ICP only)
  double median_tre = 0.0;        // px, closest-point pairing of the kept iterate
  double step_norm = 0.0;
  double damping = 0.0;
  std::size_t excluded = 0;
  bool accepted = false;
  bool depth_guard = false;
};

struct RegistrationResult {
  Pose pose;
  std::vector<IterationRecord> trace;
  double wall_time_ms = 0.0;
  Termination termination = Termination::max_iterations;
  std::string message;
};

/// One weighted residual sqrt(weight) * (pi(T p_source) - target).
struct WeightedTerm {
  std::uint32_t source = 0;
  Vec2 target = Vec2::Zero();
  double weight = 0.0;
};

/// Least-squares subproblem with frozen pairs and weights:
///   sum_t weight_t |pi(T p_t) - q_t|^2 + lambda |log(T0^-1 T)|^2
/// Terms must be grouped by source index.
class LeastSquaresProblem {
 public:
  struct Linearization {
    Mat6 H = Mat6::Zero();  // J^T J
    Vec6 g = Vec6::Zero();  // J^T r
    double cost = 0.0;      // r^T r
  };

  LeastSquaresProblem(const PointSet3D& src, const CameraIntrinsics& K,
                      std::vector<WeightedTerm> terms, std::optional<Pose> prior, double lambda,
                      DofMode mode)
      : src_(&src), K_(&K), terms_(std::move(terms)), prior_(std::move(prior)),
        lambda_(lambda), mode_(mode) {}

  DofMode mode() const { return mode_; }
  const std::vector<WeightedTerm>& terms() const { return terms_; }

  /// Total cost; +inf when a paired point falls behind the camera or the prior
  /// is undefined.
  double cost(const Pose& T) const {
    double c = 0.0;
    std::uint32_t cur = std::numeric_limits<std::uint32_t>::max();
    Vec2 uv = Vec2::Zero();
    for (const auto& t : terms_) {
      if (t.source != cur) {
        cur = t.source;
        const auto p = try_project(T, (*src_)[cur], *K_);
        if (!p) return std::numeric_limits<double>::infinity();
        uv = *p;
      }
      c += t.weight * (uv - t.target).squaredNorm();
    }
    if (prior_ && lambda_ > 0.0) {
      try {
        c += lambda_ * se3_distance(*prior_, T);
      } catch (const CutLocusError&) {
        return std::numeric_limits<double>::infinity();
      }
    }
    return c;
  }

  Linearization linearize(const Pose& T) const {
    Linearization lin;
    std::uint32_t cur = std::numeric_limits<std::uint32_t>::max();
    Vec2 uv = Vec2::Zero();
    Mat26 J = Mat26::Zero();
    bool valid = false;
    // Per-source accumulation: sum_j w_j (uv - q_j) shares one Jacobian.
    double wsum = 0.0;
    Vec2 rsum = Vec2::Zero();
    auto flush = [&] {
      if (valid && wsum > 0.0) {
        for (int a = 0; a < 6; ++a) {
          const double j0 = wsum * J(0, a);
          const double j1 = wsum * J(1, a);
          for (int b = a; b < 6; ++b) lin.H(a, b) += j0 * J(0, b) + j1 * J(1, b);
          lin.g[a] += J(0, a) * rsum[0] + J(1, a) * rsum[1];
        }
      }
      wsum = 0.0;
      rsum.setZero();
    };
    for (const auto& t : terms_) {
      if (t.source != cur) {
        flush();
        cur = t.source;
        const Vec3 x = T * (*src_)[cur];
        const auto p = project_camera_point(x, *K_);
        valid = p.has_value();
        if (valid) {
          uv = *p;
          J = projection_twist_jacobian(x, *K_);
        }
      }
      if (!valid) continue;
      const Vec2 r = uv - t.target;
      wsum += t.weight;
      rsum += t.weight * r;
      lin.cost += t.weight * r.squaredNorm();
    }
    flush();
    lin.H.triangularView<Eigen::StrictlyLower>() = lin.H.transpose();
    if (prior_ && lambda_ > 0.0) {
      const Twist xi = log_map(prior_->inverse() * T);
      const Mat6 Jp = se3_right_jacobian_inverse(xi) * T.inverse().adjoint();
      const Vec6 r = xi.vector();
      lin.H.noalias() += lambda_ * Jp.transpose() * Jp;
      lin.g.noalias() += lambda_ * Jp.transpose() * r;
      lin.cost += lambda_ * r.squaredNorm();
    }
    return lin;
  }

 private:
  const PointSet3D* src_;
  const CameraIntrinsics* K_;
  std::vector<WeightedTerm> terms_;
  std::optional<Pose> prior_;
  double lambda_;
  DofMode mode_;
};

struct LmStep {
  Pose candidate;
  double damping = 0.0;
  Vec6 delta = Vec6::Zero();
  double cost_before = 0.0;
  double cost_after = 0.0;
  bool improved = false;
};

namespace detail {

// Solves (H + mu * D) x = -g with D = diag(H) floored. Returns nullopt when
// the damped matrix is numerically singular.
template <int N>
std::optional<Eigen::Matrix<double, N, 1>> solve_damped(const Eigen::Matrix<double, N, N>& H,
                                                        const Eigen::Matrix<double, N, 1>& g,
                                                        double mu) {
  using MatN = Eigen::Matrix<double, N, N>;
  const double dmax = std::max(H.diagonal().maxCoeff(), 0.0);
  const double floor = 1e-12 * std::max(dmax, 1e-12);
  MatN A = H;
  for (int i = 0; i < N; ++i) A(i, i) += mu * std::max(H(i, i), floor);
  Eigen::LDLT<MatN> ldlt(A);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return std::nullopt;
  const auto d = ldlt.vectorD();
  const double dmx = d.cwiseAbs().maxCoeff();
  if (!(dmx > 0.0) || d.cwiseAbs().minCoeff() < 1e-14 * dmx) return std::nullopt;
  Eigen::Matrix<double, N, 1> x = ldlt.solve(-g);
  if (!x.allFinite()) return std::nullopt;
  return x;
}

}  // namespace detail

/// One damped Gauss-Newton step from Tk, retried with growing damping until the
/// weighted LS cost decreases. A zero-gradient point returns Tk unchanged.
/// Throws DegenerateGeometryError when the normal matrix stays singular over
/// three consecutive damping escalations.
inline LmStep lm_step(const Pose& Tk, const LeastSquaresProblem& problem, double damping,
                      const SolverConfig& cfg) {
  const auto lin = problem.linearize(Tk);
  LmStep out;
  out.candidate = Tk;
  out.damping = damping;
  out.cost_before = lin.cost;
  out.cost_after = lin.cost;

  const bool rot_only = problem.mode() == DofMode::rotation_only;
  const double gnorm = rot_only ? lin.g.tail<3>().norm() : lin.g.norm();
  if (lin.cost == 0.0 || gnorm == 0.0) return out;

  std::size_t singular = 0;
  for (std::size_t attempt = 0; attempt < cfg.lm_max_attempts; ++attempt) {
    Vec6 delta = Vec6::Zero();
    bool ok = false;
    if (rot_only) {
      const Mat3 H = lin.H.bottomRightCorner<3, 3>();
      const Vec3 g = lin.g.tail<3>();
      if (auto x = detail::solve_damped<3>(H, g, out.damping)) {
        delta.tail<3>() = *x;
        ok = true;
      }
    } else if (auto x = detail::solve_damped<6>(lin.H, lin.g, out.damping)) {
      delta = *x;
      ok = true;
    }
    if (!ok) {
      if (++singular >= 3) throw DegenerateGeometryError("normal matrix is singular");
      out.damping *= cfg.lm_damping_up;
      continue;
    }
    singular = 0;
    const Pose cand = exp_map(delta) * Tk;
    const double c = problem.cost(cand);
    if (c < lin.cost) {
      out.candidate = cand;
      out.delta = delta;
      out.cost_after = c;
      out.improved = true;
      out.damping = std::max(out.damping * cfg.lm_damping_down, 1e-15);
      return out;
    }
    out.damping *= cfg.lm_damping_up;
  }
  return out;
}

/// Pairing of participating source points with candidate targets at one pose.
/// Rows are stored CSR-style, each sorted by (distance, target index).
struct PairingSnapshot {
  std::vector<std::uint32_t> sources;  // non-excluded participating sources, ascending
  std::vector<std::uint32_t> offsets{0};
  std::vector<Neighbor> neighbors;
  std::size_t participating = 0;
  std::size_t excluded = 0;
  double mean_depth = 0.0;

  std::size_t rows() const { return sources.size(); }

  std::span<const Neighbor> row(std::size_t r) const {
    return {neighbors.data() + offsets[r], offsets[r + 1] - offsets[r]};
  }

  std::vector<double> closest_squared_distances() const {
    std::vector<double> d;
    d.reserve(rows());
    for (std::size_t r = 0; r < rows(); ++r) d.push_back(row(r)[0].squared_distance);
    return d;
  }

  double median_tre() const {
    if (rows() == 0) return 0.0;
    std::vector<double> d = closest_squared_distances();
    const std::size_t n = d.size();
    const auto mid = d.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(d.begin(), mid, d.end());
    const double hi = std::sqrt(*mid);
    if (n % 2) return hi;
    return 0.5 * (hi + std::sqrt(*std::max_element(d.begin(), mid)));
  }
};

/// Produces pairing snapshots for a pose. Neighbors other than the closest
/// may be omitted beyond `radius` pixels. A snapshot at a nearby pose may be
/// passed as `hint` to speed up the search; the result does not depend on it.
class Pairing {
 public:
  virtual ~Pairing() = default;
  virtual PairingSnapshot snapshot(const Pose& T,
                                   double radius = std::numeric_limits<double>::infinity(),
                                   const PairingSnapshot* hint = nullptr) const = 0;
  virtual const PointSet2D& targets() const = 0;
};

/// Re-pairs every source point with its nearest targets (closest-point search).
class ClosestPointPairing final : public Pairing {
 public:
  ClosestPointPairing(const PointSet3D& src, const TargetIndex& index, const CameraIntrinsics& K,
                      std::size_t max_neighbors)
      : src_(&src), index_(&index), K_(&K), m_(max_neighbors) {}

  PairingSnapshot snapshot(const Pose& T,
                           double radius = std::numeric_limits<double>::infinity(),
                           const PairingSnapshot* hint = nullptr) const override {
    PairingSnapshot s;
    s.participating = src_->size();
    std::size_t h = 0;  // hint row of the current source
    const double limit = radius * radius;
    s.sources.reserve(src_->size());
    s.offsets.reserve(src_->size() + 1);
    s.neighbors.resize(src_->size() * m_);
    double depth = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < src_->size(); ++i) {
      const Vec3 x = T * (*src_)[i];
      depth += x.z();
      const auto uv = project_camera_point(x, *K_);
      if (!uv) {
        ++s.excluded;
        continue;
      }
      // Targets of the hint row bound the nearest distance and, for a full
      // row, the m-th neighbor distance.
      double bound = limit;
      double nearest_bound = std::numeric_limits<double>::infinity();
      if (hint) {
        while (h < hint->rows() && hint->sources[h] < i) ++h;
        if (h < hint->rows() && hint->sources[h] == i) {
          const auto row = hint->row(h);
          nearest_bound = (index_->point(row[0].index) - *uv).squaredNorm();
          if (row.size() == m_) {
            double worst = 0.0;
            for (const auto& nb : row) {
              worst = std::max(worst, (index_->point(nb.index) - *uv).squaredNorm());
            }
            bound = std::min(bound, worst);
          }
        }
      }
      const std::size_t n = index_->k_nearest_within(
          *uv, std::span<Neighbor>(s.neighbors.data() + used, m_), bound, nullptr, nearest_bound);
      used += n;
      s.sources.push_back(static_cast<std::uint32_t>(i));
      s.offsets.push_back(static_cast<std::uint32_t>(used));
    }
    s.neighbors.resize(used);
    s.mean_depth = src_->empty() ? 0.0 : depth / static_cast<double>(src_->size());
    return s;
  }

  const PointSet2D& targets() const override { return index_->points(); }

 private:
  const PointSet3D* src_;
  const TargetIndex* index_;
  const CameraIntrinsics* K_;
  std::size_t m_;
};

/// Fixed (source, target) pairs that do not change while a solve runs.
class FrozenPairing final : public Pairing {
 public:
  struct Pair {
    std::uint32_t source;
    std::uint32_t target;
  };

  FrozenPairing(const PointSet3D& src, const TargetIndex& index, const CameraIntrinsics& K,
                std::vector<Pair> pairs)
      : src_(&src), index_(&index), K_(&K), pairs_(std::move(pairs)) {
    std::sort(pairs_.begin(), pairs_.end(),
              [](const Pair& a, const Pair& b) { return a.source < b.source; });
  }

  const std::vector<Pair>& pairs() const { return pairs_; }

  PairingSnapshot snapshot(const Pose& T,
                           double /*radius*/ = std::numeric_limits<double>::infinity(),
                           const PairingSnapshot* /*hint*/ = nullptr) const override {
    PairingSnapshot s;
    s.participating = pairs_.size();
    double depth = 0.0;
    for (const auto& p : pairs_) {
      const Vec3 x = T * (*src_)[p.source];
      depth += x.z();
      const auto uv = project_camera_point(x, *K_);
      if (!uv) {
        ++s.excluded;
        continue;
      }
      s.neighbors.push_back({p.target, (*uv - index_->point(p.target)).squaredNorm()});
      s.sources.push_back(p.source);
      s.offsets.push_back(static_cast<std::uint32_t>(s.neighbors.size()));
    }
    s.mean_depth = pairs_.empty() ? 0.0 : depth / static_cast<double>(pairs_.size());
    return s;
  }

  const PointSet2D& targets() const override { return index_->points(); }

 private:
  const PointSet3D* src_;
  const TargetIndex* index_;
  const CameraIntrinsics* K_;
  std::vector<Pair> pairs_;
};

namespace detail {

inline double snapshot_data_energy(const PairingSnapshot& s, const KernelConfig& cfg) {
  double e = 0.0;
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const auto row = s.row(r);
    const std::size_t n = kernel_row_extent(row, cfg.ell, cfg.truncation_radius);
    double k = 0.0;
    for (std::size_t j = 0; j < n; ++j) k += gaussian_kernel(row[j].squared_distance, cfg.ell);
    e += cfg.point_weight(s.sources[r]) * k;
  }
  return e;
}

// Same sum as snapshot_data_energy, also emitting the frozen IRLS terms.
inline double snapshot_kernel_terms(const PairingSnapshot& s, const PointSet2D& targets,
                                    const KernelConfig& cfg, std::vector<WeightedTerm>& terms) {
  terms.clear();
  terms.reserve(s.neighbors.size());
  double e = 0.0;
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const auto row = s.row(r);
    const std::size_t n = kernel_row_extent(row, cfg.ell, cfg.truncation_radius);
    const double wi = cfg.point_weight(s.sources[r]);
    double k = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double kij = gaussian_kernel(row[j].squared_distance, cfg.ell);
      k += kij;
      if (wi * kij > 0.0) terms.push_back({s.sources[r], targets[row[j].index], wi * kij});
    }
    e += wi * k;
  }
  return e;
}

inline double step_size(const Pose& from, const Pose& to) {
  try {
    return log_map(to * from.inverse()).norm();
  } catch (const CutLocusError&) {
    return std::numeric_limits<double>::infinity();
  }
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Inner LM loop on a frozen problem. After a rejected outer step only one
// (more heavily damped) step is taken, which shortens the move until the
// acceptance test passes.
inline Pose solve_frozen(const Pose& T, const LeastSquaresProblem& problem, double& damping,
                         const SolverConfig& scfg, bool cautious) {
  Pose Tc = T;
  const std::size_t inner = cautious ? 1 : scfg.lm_max_inner_iterations;
  for (std::size_t k = 0; k < inner; ++k) {
    const LmStep s = lm_step(Tc, problem, damping, scfg);
    damping = s.damping;
    if (!s.improved) break;
    Tc = s.candidate;
    if (s.delta.norm() < scfg.twist_tolerance) break;
  }
  return Tc;
}

/// Kernel IRLS loop shared by the full, rotation-only and subset solvers.
inline RegistrationResult run_kernel_solver(const PointSet3D& src, const Pairing& pairing,
                                            const CameraIntrinsics& K, const Pose& T0,
                                            KernelConfig kcfg, const SolverConfig& scfg,
                                            DofMode mode) {
  const Stopwatch clock;
  kcfg.validate();
  scfg.validate();
  RegistrationResult res;
  res.pose = T0;

  PairingSnapshot snap = pairing.snapshot(T0);
  if (snap.rows() == 0) {
    res.termination = Termination::degenerate;
    res.message = "no source point projects in front of the camera";
    res.wall_time_ms = clock.elapsed_ms();
    return res;
  }
  const auto d2 = snap.closest_squared_distances();
  kcfg = update_scale(kcfg, 0, d2);
  const double depth0 = snap.mean_depth;
  const std::optional<Pose> prior =
      kcfg.lambda > 0.0 ? std::optional<Pose>(T0) : std::nullopt;

  Pose T = T0;
  double damping = scfg.lm_initial_damping;
  std::size_t level_age = 0;
  std::size_t rejects = 0;
  bool force_shrink = false;
  bool cautious = false;
  bool done = false;
  std::vector<WeightedTerm> terms, cand_terms;
  double terms_energy = 0.0;
  double terms_ell = -1.0;

  for (std::size_t it = 0; it < scfg.max_outer_iterations && !done; ++it) {
    if (it > 0 && (force_shrink || level_age >= kcfg.shrink_period)) {
      if (kcfg.ell > kcfg.ell_floor) {
        kcfg = shrink_scale(std::move(kcfg));
      }
      level_age = 0;
      force_shrink = false;
    }

    IterationRecord rec;
    rec.iteration = it;
    rec.ell = kcfg.ell;
    // Terms of the kept iterate are reused while ell is unchanged.
    if (terms_ell != kcfg.ell) {
      terms_energy = snapshot_kernel_terms(snap, pairing.targets(), kcfg, terms);
      terms_ell = kcfg.ell;
    }
    rec.e_data_before = terms_energy;

    const LeastSquaresProblem problem(src, K, terms, prior, kcfg.lambda, mode);
    Pose Tc = T;
    try {
      Tc = solve_frozen(T, problem, damping, scfg, cautious);
    } catch (const DegenerateGeometryError& e) {
      res.termination = Termination::degenerate;
      res.message = e.what();
      break;
    }
    rec.step_norm = step_size(T, Tc);

    PairingSnapshot cand = pairing.snapshot(Tc, kcfg.truncation_radius * kcfg.ell, &snap);
    rec.depth_guard = cand.rows() == 0 || cand.mean_depth > scfg.max_depth_growth * depth0;
    rec.e_data_candidate =
        rec.depth_guard ? 0.0 : snapshot_kernel_terms(cand, pairing.targets(), kcfg, cand_terms);
    rec.accepted = !rec.depth_guard && rec.e_data_candidate >= rec.e_data_before;

    if (rec.accepted) {
      T = Tc;
      snap = std::move(cand);
      std::swap(terms, cand_terms);
      terms_energy = rec.e_data_candidate;
      rejects = 0;
      cautious = false;
    } else {
      damping *= scfg.lm_damping_up;
      ++rejects;
      cautious = true;
    }
    rec.e_data = rec.accepted ? rec.e_data_candidate : rec.e_data_before;
    rec.damping = damping;
    rec.excluded = snap.excluded;
    rec.median_tre = snap.median_tre();
    if (prior) {
      try {
        rec.e_init = se3_distance(*prior, T);
      } catch (const CutLocusError&) {
        rec.e_init = std::numeric_limits<double>::infinity();
      }
    }
    res.trace.push_back(rec);
    ++level_age;

    const bool at_floor = kcfg.ell <= kcfg.ell_floor;
    if (rec.accepted && rec.step_norm < scfg.twist_tolerance) {
      if (at_floor) {
        res.termination = Termination::converged;
        done = true;
      } else {
        force_shrink = true;
      }
    } else if (rec.accepted && at_floor &&
               std::abs(rec.e_data_candidate - rec.e_data_before) <=
                   scfg.energy_tolerance * std::max(std::abs(rec.e_data_before), 1e-300)) {
      res.termination = Termination::converged;
      done = true;
    }
    if (!done && rejects >= scfg.max_rejected_steps) {
      if (at_floor) {
        res.termination = Termination::converged;
        done = true;
      } else {
        force_shrink = true;
        rejects = 0;
      }
    }
  }
  res.pose = T;
  res.wall_time_ms = clock.elapsed_ms();
  return res;
}

}  // namespace detail

/// Kernel-objective registration by iteratively reweighted least squares,
/// re-pairing all source points at every outer iteration.
inline RegistrationResult irls_register(const PointSet3D& src, const TargetIndex& index,
                                        const CameraIntrinsics& K, const Pose& T0,
                                        const KernelConfig& kcfg, const SolverConfig& scfg) {
  if (src.empty()) throw ConfigError("source set is empty");
  const ClosestPointPairing pairing(src, index, K, kcfg.max_neighbors);
  return detail::run_kernel_solver(src, pairing, K, T0, kcfg, scfg, DofMode::full);
}

/// Same loop with updates restricted to a rotation about the camera center
/// (translational twist part fixed at zero).
inline RegistrationResult rotation_only_register(const PointSet3D& src, const TargetIndex& index,
                                                 const CameraIntrinsics& K, const Pose& T0,
                                                 const KernelConfig& kcfg,
                                                 const SolverConfig& scfg) {
  if (src.empty()) throw ConfigError("source set is empty");
  const ClosestPointPairing pairing(src, index, K, kcfg.max_neighbors);
  return detail::run_kernel_solver(src, pairing, K, T0, kcfg, scfg, DofMode::rotation_only);
}

/// Kernel registration of a subset whose pairs stay fixed during the solve.
inline RegistrationResult frozen_pairs_register(const PointSet3D& src, const FrozenPairing& pairing,
                                                const CameraIntrinsics& K, const Pose& T0,
                                                const KernelConfig& kcfg,
                                                const SolverConfig& scfg) {
  if (pairing.pairs().empty()) throw ConfigError("subset pairing is empty");
  return detail::run_kernel_solver(src, pairing, K, T0, kcfg, scfg, DofMode::full);
}

enum class RobustLoss { squared, huber };

/// Closest-point baseline: Euclidean (or Huber) reprojection loss, nearest
/// neighbor pairing, no kernel and no prior.
inline RegistrationResult dticp_register(const PointSet3D& src, const TargetIndex& index,
                                         const CameraIntrinsics& K, const Pose& T0,
                                         const SolverConfig& scfg,
                                         RobustLoss loss = RobustLoss::squared) {
  const detail::Stopwatch clock;
  if (src.empty()) throw ConfigError("source set is empty");
  scfg.validate();
  const ClosestPointPairing pairing(src, index, K, 1);
  RegistrationResult res;
  res.pose = T0;

  auto loss_of = [&](const PairingSnapshot& s) {
    double e = 0.0;
    for (std::size_t r = 0; r < s.rows(); ++r) {
      const double d2 = s.row(r)[0].squared_distance;
      e += loss == RobustLoss::squared ? d2 : huber_loss(std::sqrt(d2), scfg.huber_delta);
    }
    return e;
  };

  PairingSnapshot snap = pairing.snapshot(T0);
  if (snap.rows() == 0) {
    res.termination = Termination::degenerate;
    res.message = "no source point projects in front of the camera";
    res.wall_time_ms = clock.elapsed_ms();
    return res;
  }
  const double depth0 = snap.mean_depth;
  const auto& targets = index.points();

  Pose T = T0;
  double damping = scfg.lm_initial_damping;
  std::size_t rejects = 0;
  bool cautious = false;
  bool done = false;
  for (std::size_t it = 0; it < scfg.max_outer_iterations && !done; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    const double current = loss_of(snap);

    std::vector<WeightedTerm> terms;
    terms.reserve(snap.rows());
    for (std::size_t r = 0; r < snap.rows(); ++r) {
      const Neighbor& nb = snap.row(r)[0];
      double w = 1.0;
      if (loss == RobustLoss::huber) {
        const double d = std::sqrt(nb.squared_distance);
        w = d <= scfg.huber_delta ? 1.0 : scfg.huber_delta / d;
      }
      terms.push_back({snap.sources[r], targets[nb.index], w});
    }
    const LeastSquaresProblem problem(src, K, std::move(terms), std::nullopt, 0.0, DofMode::full);
    Pose Tc = T;
    try {
      Tc = detail::solve_frozen(T, problem, damping, scfg, cautious);
    } catch (const DegenerateGeometryError& e) {
      res.termination = Termination::degenerate;
      res.message = e.what();
      break;
    }
    rec.step_norm = detail::step_size(T, Tc);

    PairingSnapshot cand = pairing.snapshot(Tc, std::numeric_limits<double>::infinity(), &snap);
    rec.depth_guard = cand.rows() == 0 || cand.mean_depth > scfg.max_depth_growth * depth0;
    const double cand_loss = rec.depth_guard ? std::numeric_limits<double>::infinity()
                                             : loss_of(cand);
    rec.accepted = !rec.depth_guard && cand_loss <= current;
    if (rec.accepted) {
      T = Tc;
      snap = std::move(cand);
      rejects = 0;
      cautious = false;
    } else {
      damping *= scfg.lm_damping_up;
      ++rejects;
      cautious = true;
    }
    rec.loss = rec.accepted ? cand_loss : current;
    rec.damping = damping;
    rec.excluded = snap.excluded;
    rec.median_tre = snap.median_tre();
    res.trace.push_back(rec);

    if (rec.accepted && (rec.step_norm < scfg.twist_tolerance ||
                         current - cand_loss <= scfg.energy_tolerance * std::max(current, 1e-300))) {
      res.termination = Termination::converged;
      done = true;
    } else if (rejects >= scfg.max_rejected_steps) {
      res.termination = Termination::converged;
      done = true;
    }
  }
  res.pose = T;
  res.wall_time_ms = clock.elapsed_ms();
  return res;
}

}  // namespace dwpnp
