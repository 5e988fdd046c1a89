// Command-line front end: register, toymodel, ablation, ambiguity, gen-scene.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif

#include "dwpnp/commands.hpp"

namespace {

using namespace dwpnp;

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("invalid number '" + item + "' in " + what);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(what + " is empty");
  return out;
}

std::vector<std::size_t> parse_counts(const std::string& text) {
  std::vector<std::size_t> out;
  for (double v : parse_list(text, "--counts")) {
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
      throw ConfigError("--counts takes non-negative integers");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

/// "5:2,8:3" -> disturbance levels (translation sigma : angle sigma in degrees).
std::vector<DisturbanceSpec> parse_levels(const std::string& text) {
  std::vector<DisturbanceSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("level '" + item + "' must look like 5:2");
    const auto t = parse_list(item.substr(0, colon), "--levels");
    const auto a = parse_list(item.substr(colon + 1), "--levels");
    DisturbanceSpec d{t[0], a[0]};
    d.validate();
    out.push_back(d);
  }
  if (out.empty()) throw ConfigError("--levels is empty");
  return out;
}

CameraIntrinsics parse_camera(const std::string& text) {
  const auto v = parse_list(text, "--camera");
  if (v.size() != 6) throw ConfigError("--camera takes fx,fy,cx,cy,width,height");
  CameraIntrinsics K{v[0], v[1], v[2], v[3], v[4], v[5]};
  K.validate();
  return K;
}

Pose parse_twist(const std::string& text) {
  const auto v = parse_list(text, "--init");
  if (v.size() != 6) throw ConfigError("--init takes a twist rho1,rho2,rho3,phi1,phi2,phi3");
  Vec6 xi;
  for (int i = 0; i < 6; ++i) xi[i] = v[static_cast<std::size_t>(i)];
  return exp_map(xi);
}

PerturbFrame parse_frame(const std::string& text) {
  if (text == "sensor") return PerturbFrame::sensor;
  if (text == "object") return PerturbFrame::object;
  throw ConfigError("--perturb-frame must be sensor or object");
}

/// Options shared by the solver-running subcommands.
struct Common {
  std::uint64_t seed = 42;
  std::size_t trials = 0;
  std::string out_dir = ".";
  bool single_thread = false;
  bool timing = false;
  SolverSettings settings;
};

void add_solver_flags(CLI::App* app, Common& c) {
  app->add_option("--xi", c.settings.alternation.xi, "Median TRE threshold of the alternation, px")
      ->capture_default_str();
  app->add_option("--lambda", c.settings.kernel.lambda, "Pose-prior weight")->capture_default_str();
  app->add_option("--ell-floor", c.settings.kernel.ell_floor, "Lower bound of the kernel scale, px")
      ->capture_default_str();
  app->add_option("--max-iterations", c.settings.solver.max_outer_iterations, "Outer iterations per solve")
      ->capture_default_str();
  app->add_option("--inner-iterations", c.settings.solver.lm_max_inner_iterations,
                  "LM steps per frozen-weight subproblem")
      ->capture_default_str();
  app->add_option("--max-alternations", c.settings.alternation.max_alternations,
                  "Alternation rounds of the dynaweight solver")
      ->capture_default_str();
}

void add_run_flags(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app->add_option("--out-dir", c.out_dir, "Output directory")->capture_default_str();
  app->add_flag("--single-thread", c.single_thread, "Run trials sequentially on one thread");
  app->add_flag("--timing", c.timing, "Include wall-clock times in JSON output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Correspondence-free 3D-2D registration with kernel objectives"};
  app.require_subcommand(1);

  // register
  Common reg_common;
  reg_common.seed = 0;
  RegisterOptions reg;
  std::string reg_solver = "rkhs_irls", reg_camera, reg_init;
  auto* reg_cmd = app.add_subcommand("register", "Register a 3-d point set to 2-d targets");
  reg_cmd->add_option("--scene", reg.scene, "scene.json written by gen-scene");
  reg_cmd->add_option("--source", reg.source, "3-d point file");
  reg_cmd->add_option("--targets", reg.targets, "2-d point file");
  reg_cmd->add_option("--camera", reg_camera, "fx,fy,cx,cy,width,height");
  reg_cmd->add_option("--init", reg_init, "Initial pose twist rho1,rho2,rho3,phi1,phi2,phi3");
  reg_cmd->add_option("--solver", reg_solver,
                      "dticp_squared, dticp_huber, rkhs_irls, rotation_only or dynaweight")
      ->capture_default_str();
  reg_cmd->add_option("--seed", reg_common.seed, "Seed recorded in the output (default: the scene's)");
  reg_cmd->add_option("--out-dir", reg_common.out_dir, "Output directory")->capture_default_str();
  reg_cmd->add_flag("--single-thread", reg_common.single_thread, "Accepted for symmetry; register is sequential");
  reg_cmd->add_flag("--timing", reg_common.timing, "Include wall-clock time in result.json");
  add_solver_flags(reg_cmd, reg_common);

  // toymodel
  Common toy_common;
  toy_common.trials = 10;
  ToyModelOptions toy;
  std::string toy_counts = "8,44,84,124,164";
  std::vector<std::string> toy_solvers{"dticp_squared", "rkhs_irls"};
  auto* toy_cmd = app.add_subcommand("toymodel", "Square toy model over several point counts");
  toy_cmd->add_option("--counts", toy_counts, "Comma-separated perimeter point counts")->capture_default_str();
  toy_cmd->add_option("--solver", toy_solvers, "Solvers to compare (repeatable)")->capture_default_str();
  toy_cmd->add_option("--trials", toy_common.trials, "Trials per count")->capture_default_str();
  toy_cmd->add_option("--radius", toy.radius, "Disturbance ball radius")->capture_default_str();
  toy_cmd->add_option("--radius-scale", toy.radius_scale, "Scale applied to the ball radius")
      ->capture_default_str();
  add_run_flags(toy_cmd, toy_common);
  add_solver_flags(toy_cmd, toy_common);

  // ablation
  Common abl_common;
  abl_common.trials = 20;
  AblationOptions abl;
  std::string abl_levels = "5:2,8:3,10:5", abl_frame = "object";
  auto* abl_cmd = app.add_subcommand("ablation", "Plain IRLS against the alternating solver on tree scenes");
  abl_cmd->add_option("--levels", abl_levels, "Disturbance levels as sigma_t:sigma_deg,...")
      ->capture_default_str();
  abl_cmd->add_option("--trials", abl_common.trials, "Trials per level")->capture_default_str();
  abl_cmd->add_option("--prune-leaves", abl.prune_leaves, "Leaf branches removed from the targets")
      ->capture_default_str();
  abl_cmd->add_option("--branches", abl.branches, "Branches per tree")->capture_default_str();
  abl_cmd->add_option("--focal", abl.scene.focal, "Focal length of the tree camera, px")->capture_default_str();
  abl_cmd->add_option("--perturb-frame", abl_frame, "sensor or object")->capture_default_str();
  add_run_flags(abl_cmd, abl_common);
  add_solver_flags(abl_cmd, abl_common);

  // ambiguity
  AmbiguityOptions amb;
  std::string amb_ratios = "5,4,3,2,1.5", amb_t = "0.5,0,0";
  auto* amb_cmd = app.add_subcommand("ambiguity", "Rotation/translation duality sweep over depth ratios");
  amb_cmd->add_option("--ratios", amb_ratios, "Comma-separated depth ratios")->capture_default_str();
  amb_cmd->add_option("--translation", amb_t, "Translation tx,ty,tz")->capture_default_str();
  amb_cmd->add_option("--points", amb.points, "Square perimeter points")->capture_default_str();
  amb_cmd->add_option("--out-dir", amb.out_dir, "Output directory")->capture_default_str();

  // gen-scene
  GenSceneOptions gen;
  std::string gen_kind = "tree", gen_frame = "sensor";
  auto* gen_cmd = app.add_subcommand("gen-scene", "Write a synthetic scene to point files");
  gen_cmd->add_option("--kind", gen_kind, "tree or square")->capture_default_str();
  gen_cmd->add_option("--branches", gen.branches, "Branches per tree")->capture_default_str();
  gen_cmd->add_option("--points", gen.square_points, "Square perimeter points")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  gen_cmd->add_option("--prune-leaves", gen.prune_leaves, "Leaf branches removed from the targets")
      ->capture_default_str();
  gen_cmd->add_option("--sigma-t", gen.disturbance.sigma_translation, "Initial-pose translation sigma")
      ->capture_default_str();
  gen_cmd->add_option("--sigma-angle", gen.disturbance.sigma_angle, "Initial-pose angle sigma, degrees")
      ->capture_default_str();
  gen_cmd->add_option("--perturb-frame", gen_frame, "sensor or object")->capture_default_str();
  gen_cmd->add_option("--focal", gen.tree.focal, "Focal length of the tree camera, px")->capture_default_str();
  gen_cmd->add_option("--out-dir", gen.out_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*reg_cmd) {
      reg.solver = parse_solver(reg_solver);
      if (!reg_camera.empty()) reg.camera = parse_camera(reg_camera);
      if (!reg_init.empty()) reg.initial = parse_twist(reg_init);
      reg.seed = reg_common.seed;
      reg.settings = reg_common.settings;
      reg.out_dir = reg_common.out_dir;
      reg.timing = reg_common.timing;
      return cmd_register(reg);
    }
    if (*toy_cmd) {
      toy.counts = parse_counts(toy_counts);
      toy.solvers.clear();
      for (const auto& s : toy_solvers) {
        std::stringstream ss(s);
        std::string name;
        while (std::getline(ss, name, ',')) toy.solvers.push_back(parse_solver(name));
      }
      toy.trials = toy_common.trials;
      toy.seed = toy_common.seed;
      toy.settings = toy_common.settings;
      toy.single_thread = toy_common.single_thread;
      toy.timing = toy_common.timing;
      toy.out_dir = toy_common.out_dir;
      return cmd_toymodel(toy);
    }
    if (*abl_cmd) {
      abl.levels = parse_levels(abl_levels);
      abl.frame = parse_frame(abl_frame);
      abl.trials = abl_common.trials;
      abl.seed = abl_common.seed;
      abl.settings = abl_common.settings;
      abl.single_thread = abl_common.single_thread;
      abl.timing = abl_common.timing;
      abl.out_dir = abl_common.out_dir;
      return cmd_ablation(abl);
    }
    if (*amb_cmd) {
      amb.depth_ratios = parse_list(amb_ratios, "--ratios");
      const auto t = parse_list(amb_t, "--translation");
      if (t.size() != 3) throw ConfigError("--translation takes tx,ty,tz");
      amb.translation = Vec3(t[0], t[1], t[2]);
      return cmd_ambiguity(amb);
    }
    if (*gen_cmd) {
      if (gen_kind == "tree") {
        gen.kind = SceneKind::tree;
      } else if (gen_kind == "square") {
        gen.kind = SceneKind::square;
      } else {
        throw ConfigError("--kind must be tree or square");
      }
      gen.disturbance.frame = parse_frame(gen_frame);
      return cmd_gen_scene(gen);
    }
  } catch (const DegenerateGeometryError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDegenerate;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
