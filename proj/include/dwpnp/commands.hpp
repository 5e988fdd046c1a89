#pragma once

// Command implementations behind the command-line tool: single registrations,
// the square toy-model study, the tree ablation, the rotation/translation
// ambiguity sweep and scene generation. Each command writes CSV and JSON files
// into an output directory and returns a process exit code.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dwpnp/dynaweight.hpp"
#include "dwpnp/io.hpp"
#include "dwpnp/metrics.hpp"
#include "dwpnp/solvers.hpp"
#include "dwpnp/synthlab.hpp"

namespace dwpnp {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitDegenerate = 2;

enum class SolverKind { dticp_squared, dticp_huber, rkhs_irls, rotation_only, dynaweight };

inline const char* to_string(SolverKind k) {
  switch (k) {
    case SolverKind::dticp_squared: return "dticp_squared";
    case SolverKind::dticp_huber: return "dticp_huber";
    case SolverKind::rkhs_irls: return "rkhs_irls";
    case SolverKind::rotation_only: return "rotation_only";
    case SolverKind::dynaweight: return "dynaweight";
  }
  return "unknown";
}

inline SolverKind parse_solver(std::string_view name) {
  for (auto k : {SolverKind::dticp_squared, SolverKind::dticp_huber, SolverKind::rkhs_irls,
                 SolverKind::rotation_only, SolverKind::dynaweight}) {
    if (name == to_string(k)) return k;
  }
  throw ConfigError("unknown solver '" + std::string(name) +
                    "' (expected dticp_squared, dticp_huber, rkhs_irls, rotation_only or dynaweight)");
}

/// Every tunable of the solvers, overridable from the command line.
struct SolverSettings {
  KernelConfig kernel;
  SolverConfig solver;
  AlternationConfig alternation;

  void validate() const {
    kernel.validate();
    solver.validate();
    alternation.validate();
  }
};

inline Json settings_to_json(const SolverSettings& s) {
  const auto& k = s.kernel;
  const auto& c = s.solver;
  const auto& a = s.alternation;
  return Json{
      {"kernel",
       {{"lambda", k.lambda},
        {"shrink_period", k.shrink_period},
        {"ell_floor", k.ell_floor},
        {"max_neighbors", k.max_neighbors},
        {"truncation_radius", k.truncation_radius}}},
      {"solver",
       {{"max_outer_iterations", c.max_outer_iterations},
        {"lm_max_inner_iterations", c.lm_max_inner_iterations},
        {"lm_initial_damping", c.lm_initial_damping},
        {"lm_damping_up", c.lm_damping_up},
        {"lm_damping_down", c.lm_damping_down},
        {"lm_max_attempts", c.lm_max_attempts},
        {"twist_tolerance", c.twist_tolerance},
        {"energy_tolerance", c.energy_tolerance},
        {"max_rejected_steps", c.max_rejected_steps},
        {"max_depth_growth", c.max_depth_growth},
        {"huber_delta", c.huber_delta}}},
      {"alternation",
       {{"xi", a.xi},
        {"max_alternations", a.max_alternations},
        {"subset_strategy",
         a.subset_strategy == SubsetStrategy::graph_nodes ? "graph_nodes" : "farthest_point_k"},
        {"k", a.k},
        {"subset_first", a.subset_first},
        {"rotation_init", a.rotation_init}}}};
}

inline RegistrationResult run_solver(SolverKind kind, const PointSet3D& src,
                                     const TargetIndex& index, const CameraIntrinsics& K,
                                     const Pose& T0, const SolverSettings& s) {
  switch (kind) {
    case SolverKind::dticp_squared:
      return dticp_register(src, index, K, T0, s.solver, RobustLoss::squared);
    case SolverKind::dticp_huber:
      return dticp_register(src, index, K, T0, s.solver, RobustLoss::huber);
    case SolverKind::rkhs_irls:
      return irls_register(src, index, K, T0, s.kernel, s.solver);
    case SolverKind::rotation_only:
      return rotation_only_register(src, index, K, T0, s.kernel, s.solver);
    case SolverKind::dynaweight:
      return dynaweight_register(src, index, K, T0, s.kernel, s.solver, s.alternation).result;
  }
  throw ConfigError("unknown solver");
}

/// Runs fn(i) for i in [0, n), on a worker pool unless single_thread is set.
/// The first exception by index is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, bool single_thread, Fn&& fn) {
  const std::size_t workers =
      single_thread ? 1 : std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Independent seed for one (stream, trial) pair of a run.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(trial)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Median distance between each remaining target and the projection of the
/// source point it was generated from.
inline double scene_median_tre(const Pose& T, const SyntheticScene& scene) {
  std::vector<double> d;
  d.reserve(scene.targets.size());
  for (std::size_t t = 0; t < scene.targets.size(); ++t) {
    const auto uv = try_project(T, scene.source[scene.target_source[t]], scene.camera);
    d.push_back(uv ? (*uv - scene.targets[t]).norm() : std::numeric_limits<double>::infinity());
  }
  if (d.empty()) throw PreconditionError("scene has no targets");
  return median(std::move(d));
}

namespace detail {

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::filesystem::path p(dir.empty() ? "." : dir);
  std::filesystem::create_directories(p);
  return p;
}

inline std::ofstream open_output(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  return out;
}

/// Comment lines carrying the resolved configuration, placed before CSV headers.
inline void write_csv_preamble(std::ostream& out, const Json& config) {
  out << "# dwpnp " << config.value("command", std::string()) << '\n';
  out << "# config " << config.dump() << '\n';
}

inline void write_json(const std::filesystem::path& p, const Json& j) {
  auto out = open_output(p);
  out << dump_json(j);
}

}  // namespace detail

struct TrialOutcome {
  std::size_t trial = 0;
  double median_tre = 0.0;
  double angle_deg = 0.0;
  double distance = 0.0;
  double runtime_ms = 0.0;
  std::size_t target_count = 0;
  Termination termination = Termination::converged;
};

/// Trial averages of one configuration.
struct OutcomeSummary {
  double median_tre = 0.0;  // mean over trials of the per-trial median TRE
  double angle_deg = 0.0;
  double distance = 0.0;
  double runtime_ms = 0.0;
  double target_count = 0.0;
  std::size_t degenerate = 0;
};

inline OutcomeSummary summarize(const std::vector<TrialOutcome>& trials) {
  OutcomeSummary s;
  if (trials.empty()) return s;
  for (const auto& t : trials) {
    s.median_tre += t.median_tre;
    s.angle_deg += t.angle_deg;
    s.distance += t.distance;
    s.runtime_ms += t.runtime_ms;
    s.target_count += static_cast<double>(t.target_count);
    if (t.termination == Termination::degenerate) ++s.degenerate;
  }
  const double n = static_cast<double>(trials.size());
  s.median_tre /= n;
  s.angle_deg /= n;
  s.distance /= n;
  s.runtime_ms /= n;
  s.target_count /= n;
  return s;
}

inline TrialOutcome evaluate_trial(std::size_t trial, const RegistrationResult& r,
                                   const SyntheticScene& scene) {
  TrialOutcome o;
  o.trial = trial;
  o.median_tre = scene_median_tre(r.pose, scene);
  const auto diff = pose_difference(r.pose, scene.ground_truth);
  o.angle_deg = diff.angle_deg;
  o.distance = diff.distance;
  o.runtime_ms = r.wall_time_ms;
  o.target_count = scene.targets.size();
  o.termination = r.termination;
  return o;
}

inline Json outcome_to_json(const TrialOutcome& o, bool timing) {
  Json j{{"trial", o.trial},
         {"median_tre", json_number(o.median_tre)},
         {"angle", json_number(o.angle_deg)},
         {"dist", json_number(o.distance)},
         {"targets", o.target_count},
         {"termination", to_string(o.termination)}};
  if (timing) j["runtime_ms"] = json_number(o.runtime_ms);
  return j;
}

inline Json summary_to_json(const OutcomeSummary& s, bool timing) {
  Json j{{"median_tre", json_number(s.median_tre)},
         {"angle", json_number(s.angle_deg)},
         {"dist", json_number(s.distance)},
         {"targets", json_number(s.target_count)},
         {"degenerate", s.degenerate}};
  if (timing) j["runtime_ms"] = json_number(s.runtime_ms);
  return j;
}

// ---------------------------------------------------------------------------
// register

struct RegisterOptions {
  std::string scene;  // scene.json written by gen-scene; supplies the fields below
  std::string source;
  std::string targets;
  std::optional<CameraIntrinsics> camera;
  std::optional<Pose> initial;       // identity when absent
  std::optional<Pose> ground_truth;  // enables pose errors in the report
  std::uint64_t seed = 0;            // recorded for provenance
  SolverKind solver = SolverKind::rkhs_irls;
  SolverSettings settings;
  std::string out_dir = ".";
  bool timing = false;  // put wall-clock times into the JSON output
};

struct RegisterOutput {
  RegistrationResult result;
  MetricsReport metrics;
  Json json;
};

/// Loads scene.json and fills the missing fields of `opt`. Relative file
/// names inside the scene are resolved against the scene's directory.
inline RegisterOptions resolve_scene(RegisterOptions opt) {
  if (opt.scene.empty()) return opt;
  std::ifstream in(opt.scene);
  if (!in) throw ParseError(opt.scene, 0, "cannot open file");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(opt.scene, 0, e.what());
  }
  const auto dir = std::filesystem::path(opt.scene).parent_path();
  try {
    if (opt.source.empty()) opt.source = (dir / j.at("source_file").get<std::string>()).string();
    if (opt.targets.empty()) opt.targets = (dir / j.at("targets_file").get<std::string>()).string();
    if (!opt.camera) opt.camera = camera_from_json(j.at("camera"));
    if (!opt.initial && j.contains("initial_pose")) opt.initial = pose_from_json(j["initial_pose"]);
    if (!opt.ground_truth && j.contains("ground_truth")) {
      opt.ground_truth = pose_from_json(j["ground_truth"]);
    }
    if (opt.seed == 0 && j.contains("seed")) opt.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(opt.scene, 0, e.what());
  }
  return opt;
}

/// Runs one registration and writes result.json and trace.csv.
inline RegisterOutput run_register(const RegisterOptions& given) {
  const RegisterOptions opt = resolve_scene(given);
  if (opt.source.empty() || opt.targets.empty()) {
    throw ConfigError("register needs --scene or both --source and --targets");
  }
  if (!opt.camera) throw ConfigError("register needs a camera (--camera or --scene)");
  opt.camera->validate();
  opt.settings.validate();
  const PointSet3D src = read_points3d(opt.source);
  if (src.empty()) throw ConfigError(opt.source + ": no points");
  PointSet2D tgt = read_points2d(opt.targets);
  if (tgt.empty()) throw ConfigError(opt.targets + ": no points");
  const TargetIndex index(std::move(tgt));
  const Pose T0 = opt.initial.value_or(Pose::identity());

  RegisterOutput out;
  out.result = run_solver(opt.solver, src, index, *opt.camera, T0, opt.settings);
  const auto& r = out.result;

  MetricsReport& m = out.metrics;
  const bool visible = std::any_of(src.points.begin(), src.points.end(),
                                   [&](const Vec3& p) { return try_project(r.pose, p, *opt.camera).has_value(); });
  if (visible) {
    const double pr = projection_residual(r.pose, src, CorrespondenceMode::closest, index.points(),
                                          *opt.camera, &index);
    m.mean_pr = m.median_pr = m.pr_p75 = m.pr_p95 = pr;
    m.gfr = pr > kDefaultGfrThreshold ? 1.0 : 0.0;
    m.median_tre = median_tre(closest_correspondences(r.pose, src, index, *opt.camera));
  } else {
    const double inf = std::numeric_limits<double>::infinity();
    m.mean_pr = m.median_pr = m.pr_p75 = m.pr_p95 = m.median_tre = inf;
    m.gfr = 1.0;
  }
  if (opt.ground_truth) {
    const auto d = pose_difference(r.pose, *opt.ground_truth);
    m.angular_error = d.angle_deg;
    m.translational_error = d.distance;
  } else {
    m.angular_error = m.translational_error = std::numeric_limits<double>::quiet_NaN();
  }
  m.runtime_ms = r.wall_time_ms;

  Json config{{"command", "register"},
              {"seed", opt.seed},
              {"solver", to_string(opt.solver)},
              {"source_file", opt.source},
              {"targets_file", opt.targets},
              {"camera", camera_to_json(*opt.camera)},
              {"initial_pose", pose_to_json(T0)},
              {"settings", settings_to_json(opt.settings)}};
  if (opt.ground_truth) config["ground_truth"] = pose_to_json(*opt.ground_truth);

  Json& j = out.json;
  j["command"] = "register";
  j["seed"] = opt.seed;
  j["config"] = config;
  j["termination"] = to_string(r.termination);
  j["message"] = r.message;
  j["pose"] = pose_to_json(r.pose);
  j["metrics"] = metrics_to_json(m, opt.timing);
  if (opt.timing) j["wall_time_ms"] = json_number(r.wall_time_ms);
  j["iterations"] = r.trace.size();
  j["trace"] = trace_to_json(r.trace);

  const auto dir = detail::prepare_out_dir(opt.out_dir);
  detail::write_json(dir / "result.json", j);
  auto csv = detail::open_output(dir / "trace.csv");
  detail::write_csv_preamble(csv, config);
  write_trace_csv(csv, r.trace);
  return out;
}

inline int cmd_register(const RegisterOptions& opt) {
  const auto out = run_register(opt);
  if (out.result.termination == Termination::degenerate) {
    std::cerr << "degenerate registration: " << out.result.message << '\n';
    return kExitDegenerate;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// toymodel

struct ToyModelOptions {
  std::vector<std::size_t> counts{8, 44, 84, 124, 164};
  std::vector<SolverKind> solvers{SolverKind::dticp_squared, SolverKind::rkhs_irls};
  std::size_t trials = 10;
  std::uint64_t seed = 42;
  /// Disturbance twists are uniform in the 6-ball of radius `radius * radius_scale`.
  double radius = 1.0;
  double radius_scale = 0.01;
  SolverSettings settings;
  bool single_thread = false;
  bool timing = false;
  std::string out_dir = ".";

  void validate() const {
    if (counts.empty()) throw ConfigError("no point counts given");
    for (auto c : counts) {
      if (c < 4 || c % 4 != 0) throw ConfigError("point counts must be multiples of 4, at least 4");
    }
    if (solvers.empty()) throw ConfigError("no solver given");
    if (trials == 0) throw ConfigError("trials must be at least 1");
    if (!(radius >= 0.0) || !(radius_scale > 0.0)) {
      throw ConfigError("disturbance radius must be non-negative and its scale positive");
    }
    settings.validate();
  }
};

struct ToyModelCell {
  SolverKind solver = SolverKind::rkhs_irls;
  std::size_t count = 0;
  std::vector<TrialOutcome> trials;
  OutcomeSummary summary;
};

struct ToyModelResult {
  std::vector<ToyModelCell> cells;  // solver-major, counts in the given order
  Json json;

  const ToyModelCell& at(SolverKind s, std::size_t count) const {
    for (const auto& c : cells) {
      if (c.solver == s && c.count == count) return c;
    }
    throw ConfigError("no toy-model cell for " + std::string(to_string(s)) + " at " +
                      std::to_string(count));
  }
};

/// Disturbance of one toy trial; shared by every count and solver so that the
/// comparison across counts is paired.
inline Pose toy_initial_pose(const ToyModelOptions& opt, std::size_t trial) {
  std::mt19937_64 rng(derive_seed(opt.seed, 1, trial));
  return exp_map(sample_ball_twist(opt.radius * opt.radius_scale, rng));
}

inline Json toy_config_json(const ToyModelOptions& opt) {
  Json counts = Json::array();
  for (auto c : opt.counts) counts.push_back(c);
  Json solvers = Json::array();
  for (auto s : opt.solvers) solvers.push_back(to_string(s));
  return Json{{"command", "toymodel"},    {"seed", opt.seed},
              {"trials", opt.trials},     {"counts", counts},
              {"solvers", solvers},       {"radius", opt.radius},
              {"radius_scale", opt.radius_scale},
              {"camera", camera_to_json(toy_camera())},
              {"settings", settings_to_json(opt.settings)}};
}

inline ToyModelResult run_toymodel(const ToyModelOptions& opt) {
  opt.validate();
  ToyModelResult res;
  for (auto s : opt.solvers) {
    for (auto c : opt.counts) res.cells.push_back({s, c, std::vector<TrialOutcome>(opt.trials), {}});
  }
  std::vector<SyntheticScene> scenes;
  std::vector<TargetIndex> indices;
  for (auto c : opt.counts) {
    scenes.push_back(make_square_scene(c));
    scenes.back().seed = opt.seed;
    indices.emplace_back(scenes.back().targets);
  }
  const std::size_t per_cell = opt.trials;
  parallel_for(res.cells.size() * per_cell, opt.single_thread, [&](std::size_t job) {
    auto& cell = res.cells[job / per_cell];
    const std::size_t trial = job % per_cell;
    const std::size_t ci = static_cast<std::size_t>(
        std::find(opt.counts.begin(), opt.counts.end(), cell.count) - opt.counts.begin());
    const auto& scene = scenes[ci];
    const auto r = run_solver(cell.solver, scene.source, indices[ci], scene.camera,
                              toy_initial_pose(opt, trial), opt.settings);
    cell.trials[trial] = evaluate_trial(trial, r, scene);
  });
  for (auto& c : res.cells) c.summary = summarize(c.trials);

  const Json config = toy_config_json(opt);
  Json rows = Json::array();
  for (const auto& c : res.cells) {
    Json trials = Json::array();
    for (const auto& t : c.trials) trials.push_back(outcome_to_json(t, opt.timing));
    rows.push_back(Json{{"solver", to_string(c.solver)},
                        {"points", c.count},
                        {"summary", summary_to_json(c.summary, opt.timing)},
                        {"trials", trials}});
  }
  res.json = Json{{"command", "toymodel"}, {"seed", opt.seed}, {"config", config}, {"rows", rows}};
  return res;
}

/// Writes toymodel.csv (one row per solver, one TRE/Angle/Dist group per
/// count), toymodel_trials.csv and toymodel.json.
inline void write_toymodel(const ToyModelOptions& opt, const ToyModelResult& res) {
  const auto dir = detail::prepare_out_dir(opt.out_dir);
  const Json config = toy_config_json(opt);
  {
    auto out = detail::open_output(dir / "toymodel.csv");
    detail::write_csv_preamble(out, config);
    std::vector<std::string> header{"solver"};
    for (auto c : opt.counts) {
      for (const char* m : {"tre", "angle", "dist"}) header.push_back(std::string(m) + "_" + std::to_string(c));
    }
    CsvWriter csv(out, header);
    for (auto s : opt.solvers) {
      csv.cell(to_string(s));
      for (auto c : opt.counts) {
        const auto& sum = res.at(s, c).summary;
        csv.cell(sum.median_tre).cell(sum.angle_deg).cell(sum.distance);
      }
      csv.end_row();
    }
  }
  {
    auto out = detail::open_output(dir / "toymodel_trials.csv");
    detail::write_csv_preamble(out, config);
    CsvWriter csv(out, {"solver", "points", "trial", "median_tre", "angle", "dist", "runtime_ms",
                        "termination"});
    for (const auto& c : res.cells) {
      for (const auto& t : c.trials) {
        csv.cell(to_string(c.solver)).cell(c.count).cell(t.trial).cell(t.median_tre)
            .cell(t.angle_deg).cell(t.distance).cell(t.runtime_ms).cell(to_string(t.termination));
        csv.end_row();
      }
    }
  }
  detail::write_json(dir / "toymodel.json", res.json);
}

inline bool any_degenerate(const std::vector<TrialOutcome>& trials) {
  return std::any_of(trials.begin(), trials.end(),
                     [](const TrialOutcome& t) { return t.termination == Termination::degenerate; });
}

inline int cmd_toymodel(const ToyModelOptions& opt) {
  const auto res = run_toymodel(opt);
  write_toymodel(opt, res);
  for (const auto& c : res.cells) {
    if (any_degenerate(c.trials)) return kExitDegenerate;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablation

struct AblationOptions {
  std::vector<DisturbanceSpec> levels{{5, 2}, {8, 3}, {10, 5}};
  std::size_t trials = 20;
  std::uint64_t seed = 42;
  std::size_t prune_leaves = 0;
  std::size_t branches = 13;
  PerturbFrame frame = PerturbFrame::object;
  TreeSceneOptions scene;
  SolverSettings settings;
  bool single_thread = false;
  bool timing = false;
  std::string out_dir = ".";

  void validate() const {
    if (levels.empty()) throw ConfigError("no disturbance level given");
    for (const auto& l : levels) l.validate();
    if (trials == 0) throw ConfigError("trials must be at least 1");
    if (branches < 2) throw ConfigError("a tree needs at least 2 branches");
    settings.validate();
  }
};

inline constexpr SolverKind kAblationMethods[] = {SolverKind::rkhs_irls, SolverKind::dynaweight};

struct AblationCell {
  DisturbanceSpec level;
  SolverKind method = SolverKind::rkhs_irls;
  std::vector<TrialOutcome> trials;
  OutcomeSummary summary;
};

struct AblationResult {
  std::vector<AblationCell> cells;  // level-major, then plain IRLS and alternation
  Json json;

  const AblationCell& at(std::size_t level, SolverKind method) const {
    return cells[level * 2 + (method == SolverKind::dynaweight ? 1 : 0)];
  }
};

/// Tree scene of one trial, shared across disturbance levels and methods.
inline SyntheticScene ablation_scene(const AblationOptions& opt, std::size_t trial) {
  auto scene = make_tree_scene(opt.branches, derive_seed(opt.seed, 2, trial), opt.scene);
  if (opt.prune_leaves > 0) scene = prune_branches(scene, opt.prune_leaves, derive_seed(opt.seed, 3, trial));
  return scene;
}

inline Pose ablation_initial_pose(const AblationOptions& opt, const SyntheticScene& scene,
                                  std::size_t level, std::size_t trial) {
  DisturbanceSpec spec = opt.levels[level];
  spec.frame = opt.frame;
  return perturb_pose(scene.ground_truth, spec, derive_seed(opt.seed, 100 + level, trial));
}

inline Json ablation_config_json(const AblationOptions& opt) {
  Json levels = Json::array();
  for (const auto& l : opt.levels) {
    levels.push_back(Json{{"sigma_translation", l.sigma_translation}, {"sigma_angle", l.sigma_angle}});
  }
  return Json{{"command", "ablation"},
              {"seed", opt.seed},
              {"trials", opt.trials},
              {"levels", levels},
              {"perturb_frame", opt.frame == PerturbFrame::object ? "object" : "sensor"},
              {"branches", opt.branches},
              {"prune_leaves", opt.prune_leaves},
              {"scene",
               {{"target_points", opt.scene.target_points},
                {"lateral_half_extent", opt.scene.lateral_half_extent},
                {"depth_half_extent", opt.scene.depth_half_extent},
                {"min_distance", opt.scene.min_distance},
                {"max_distance", opt.scene.max_distance},
                {"focal", opt.scene.focal}}},
              {"settings", settings_to_json(opt.settings)}};
}

inline AblationResult run_ablation(const AblationOptions& opt) {
  opt.validate();
  AblationResult res;
  for (const auto& l : opt.levels) {
    for (auto m : kAblationMethods) res.cells.push_back({l, m, std::vector<TrialOutcome>(opt.trials), {}});
  }
  parallel_for(opt.trials, opt.single_thread, [&](std::size_t trial) {
    const auto scene = ablation_scene(opt, trial);
    const TargetIndex index(scene.targets);
    for (std::size_t l = 0; l < opt.levels.size(); ++l) {
      const Pose T0 = ablation_initial_pose(opt, scene, l, trial);
      for (std::size_t m = 0; m < 2; ++m) {
        auto& cell = res.cells[l * 2 + m];
        const auto r = run_solver(cell.method, scene.source, index, scene.camera, T0, opt.settings);
        cell.trials[trial] = evaluate_trial(trial, r, scene);
      }
    }
  });
  for (auto& c : res.cells) c.summary = summarize(c.trials);

  Json rows = Json::array();
  for (const auto& c : res.cells) {
    Json trials = Json::array();
    for (const auto& t : c.trials) trials.push_back(outcome_to_json(t, opt.timing));
    rows.push_back(Json{{"sigma_translation", c.level.sigma_translation},
                        {"sigma_angle", c.level.sigma_angle},
                        {"method", to_string(c.method)},
                        {"summary", summary_to_json(c.summary, opt.timing)},
                        {"trials", trials}});
  }
  res.json = Json{{"command", "ablation"},
                  {"seed", opt.seed},
                  {"config", ablation_config_json(opt)},
                  {"rows", rows}};
  return res;
}

/// Writes ablation.csv (one row per level and method), ablation_trials.csv
/// and ablation.json.
inline void write_ablation(const AblationOptions& opt, const AblationResult& res) {
  const auto dir = detail::prepare_out_dir(opt.out_dir);
  const Json config = ablation_config_json(opt);
  {
    auto out = detail::open_output(dir / "ablation.csv");
    detail::write_csv_preamble(out, config);
    CsvWriter csv(out, {"sigma_translation", "sigma_angle", "method", "median_tre", "angle", "dist",
                        "runtime_ms", "targets", "degenerate"});
    for (const auto& c : res.cells) {
      csv.cell(c.level.sigma_translation).cell(c.level.sigma_angle).cell(to_string(c.method))
          .cell(c.summary.median_tre).cell(c.summary.angle_deg).cell(c.summary.distance)
          .cell(c.summary.runtime_ms).cell(c.summary.target_count).cell(c.summary.degenerate);
      csv.end_row();
    }
  }
  {
    auto out = detail::open_output(dir / "ablation_trials.csv");
    detail::write_csv_preamble(out, config);
    CsvWriter csv(out, {"sigma_translation", "sigma_angle", "method", "trial", "median_tre",
                        "angle", "dist", "runtime_ms", "targets", "termination"});
    for (const auto& c : res.cells) {
      for (const auto& t : c.trials) {
        csv.cell(c.level.sigma_translation).cell(c.level.sigma_angle).cell(to_string(c.method))
            .cell(t.trial).cell(t.median_tre).cell(t.angle_deg).cell(t.distance).cell(t.runtime_ms)
            .cell(t.target_count).cell(to_string(t.termination));
        csv.end_row();
      }
    }
  }
  detail::write_json(dir / "ablation.json", res.json);
}

inline int cmd_ablation(const AblationOptions& opt) {
  const auto res = run_ablation(opt);
  write_ablation(opt, res);
  if (opt.prune_leaves > 0) {
    std::cerr << "pruned " << opt.prune_leaves << " leaves; mean target count "
              << format_double(res.cells.front().summary.target_count) << '\n';
  }
  for (const auto& c : res.cells) {
    if (any_degenerate(c.trials)) return kExitDegenerate;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ambiguity

struct AmbiguityOptions {
  std::vector<double> depth_ratios{5.0, 4.0, 3.0, 2.0, 1.5};
  Vec3 translation{0.5, 0.0, 0.0};
  std::size_t points = 8;  // square perimeter samples
  std::string out_dir = ".";

  void validate() const {
    if (depth_ratios.empty()) throw ConfigError("no depth ratio given");
    if (points < 4 || points % 4 != 0) throw ConfigError("point count must be a multiple of 4, at least 4");
  }
};

inline constexpr double kMinSweepDepthRatio = 1.5;

struct AmbiguityRow {
  double requested_ratio = 0.0;
  std::optional<AmbiguityReport> report;
  std::string error;  // set when the row violated a precondition
};

struct AmbiguityResult {
  std::vector<AmbiguityRow> rows;
  /// Rank correlation between decreasing depth ratio and the residual ratio
  /// over the valid rows; NaN with fewer than 2 valid rows.
  double spearman_rho = std::numeric_limits<double>::quiet_NaN();
  Json json;
};

inline AmbiguityResult run_ambiguity(const AmbiguityOptions& opt) {
  opt.validate();
  AmbiguityResult res;
  const CameraIntrinsics K = toy_camera();
  std::vector<double> neg_depth, ratio;
  for (double d : opt.depth_ratios) {
    AmbiguityRow row;
    row.requested_ratio = d;
    try {
      if (!(d >= kMinSweepDepthRatio)) {
        throw PreconditionError("depth ratio must be at least " + format_double(kMinSweepDepthRatio));
      }
      row.report = ambiguity_demo(square_at_depth_ratio(d, opt.points), opt.translation, K,
                                  kMinSweepDepthRatio);
      neg_depth.push_back(-d);
      ratio.push_back(row.report->ratio);
    } catch (const Error& e) {
      row.error = e.what();
    }
    res.rows.push_back(std::move(row));
  }
  if (neg_depth.size() >= 2) res.spearman_rho = spearman(neg_depth, ratio);

  Json config{{"command", "ambiguity"},
              {"seed", 0},
              {"depth_ratios", opt.depth_ratios},
              {"translation", json_vector(opt.translation)},
              {"points", opt.points},
              {"camera", camera_to_json(K)}};
  Json rows = Json::array();
  for (const auto& r : res.rows) {
    Json j{{"depth_ratio", r.requested_ratio}};
    if (r.report) {
      j["phi"] = json_vector(r.report->phi);
      j["mean_residual"] = json_number(r.report->mean_residual);
      j["mean_displacement"] = json_number(r.report->mean_displacement);
      j["ratio"] = json_number(r.report->ratio);
      j["residual"] = r.report->residual;
    } else {
      j["error"] = r.error;
    }
    rows.push_back(j);
  }
  res.json = Json{{"command", "ambiguity"},
                  {"seed", 0},
                  {"config", config},
                  {"rows", rows},
                  {"spearman_rho", json_number(res.spearman_rho)}};
  return res;
}

inline int cmd_ambiguity(const AmbiguityOptions& opt) {
  const auto res = run_ambiguity(opt);
  const auto dir = detail::prepare_out_dir(opt.out_dir);
  auto out = detail::open_output(dir / "ambiguity.csv");
  detail::write_csv_preamble(out, res.json["config"]);
  CsvWriter csv(out, {"depth_ratio", "phi1", "phi2", "phi3", "mean_residual", "mean_displacement",
                      "ratio", "error"});
  for (const auto& r : res.rows) {
    csv.cell(r.requested_ratio);
    if (r.report) {
      const auto& a = *r.report;
      csv.cell(a.phi.x()).cell(a.phi.y()).cell(a.phi.z()).cell(a.mean_residual)
          .cell(a.mean_displacement).cell(a.ratio).cell("");
    } else {
      for (int i = 0; i < 6; ++i) csv.cell("");
      csv.cell(r.error);
      std::cerr << "depth ratio " << format_double(r.requested_ratio) << ": " << r.error << '\n';
    }
    csv.end_row();
  }
  detail::write_json(dir / "ambiguity.json", res.json);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gen-scene

enum class SceneKind { tree, square };

struct GenSceneOptions {
  SceneKind kind = SceneKind::tree;
  std::size_t branches = 13;
  std::size_t square_points = 8;
  std::uint64_t seed = 42;
  std::size_t prune_leaves = 0;
  DisturbanceSpec disturbance;  // applied to the ground truth to give the initial pose
  TreeSceneOptions tree;
  std::string out_dir = ".";
};

inline SyntheticScene generate_scene(const GenSceneOptions& opt) {
  SyntheticScene s = opt.kind == SceneKind::tree ? make_tree_scene(opt.branches, opt.seed, opt.tree)
                                                 : make_square_scene(opt.square_points);
  s.seed = opt.seed;
  if (opt.prune_leaves > 0) s = prune_branches(s, opt.prune_leaves, derive_seed(opt.seed, 3, 0));
  return s;
}

/// Writes source.txt, targets.txt and scene.json (camera, ground truth,
/// initial pose, generator settings).
inline int cmd_gen_scene(const GenSceneOptions& opt) {
  opt.disturbance.validate();
  const auto scene = generate_scene(opt);
  const Pose T0 = perturb_pose(scene.ground_truth, opt.disturbance, derive_seed(opt.seed, 4, 0));
  Json config{{"command", "gen-scene"},
              {"seed", opt.seed},
              {"kind", opt.kind == SceneKind::tree ? "tree" : "square"},
              {"branches", opt.branches},
              {"square_points", opt.square_points},
              {"prune_leaves", opt.prune_leaves},
              {"sigma_translation", opt.disturbance.sigma_translation},
              {"sigma_angle", opt.disturbance.sigma_angle},
              {"perturb_frame", opt.disturbance.frame == PerturbFrame::object ? "object" : "sensor"}};
  const std::vector<std::string> header{"dwpnp gen-scene", "config " + config.dump()};

  const auto dir = detail::prepare_out_dir(opt.out_dir);
  {
    auto out = detail::open_output(dir / "source.txt");
    write_points3d(out, scene.source, header);
  }
  {
    auto out = detail::open_output(dir / "targets.txt");
    write_points2d(out, scene.targets, header);
  }
  Json j{{"command", "gen-scene"},
         {"seed", opt.seed},
         {"config", config},
         {"source_file", "source.txt"},
         {"targets_file", "targets.txt"},
         {"source_count", scene.source.size()},
         {"target_count", scene.targets.size()},
         {"camera", camera_to_json(scene.camera)},
         {"ground_truth", pose_to_json(scene.ground_truth)},
         {"initial_pose", pose_to_json(T0)}};
  detail::write_json(dir / "scene.json", j);
  return kExitOk;
}

}  // namespace dwpnp
