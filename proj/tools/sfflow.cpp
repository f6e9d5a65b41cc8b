// sfflow: render, flow, verify, solve and solve1d from the command line.
//
// Exit codes: 0 ok, 1 verification failure, 2 bad input, 3 I/O,
// 4 shadowed point, 5 singularity.

#include "sfflow/sfflow.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <iostream>
#include <random>

namespace {

using namespace sff;
using io::json;

enum Exit { kOk = 0, kVerifyFailed = 1, kBadInput = 2, kIo = 3, kShadowed = 4, kSingular = 5 };

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::Io: return kIo;
    case ErrorCode::ShadowedPoint: return kShadowed;
    case ErrorCode::SingularHessian:
    case ErrorCode::SingularFxx:
    case ErrorCode::SingularityEncountered:
    case ErrorCode::DegenerateGradient:
    case ErrorCode::RankDeficient: return kSingular;
    case ErrorCode::NoBracket:
    case ErrorCode::Inconsistent: return kVerifyFailed;
    default: return kBadInput;
  }
}

enum class LogLevel { Quiet, Info, Debug };

LogLevel log_level() {
  const char* env = std::getenv("SFS_LOG");
  const std::string s = env ? env : "info";
  if (s == "quiet") return LogLevel::Quiet;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

void info(const std::string& msg) {
  if (log_level() != LogLevel::Quiet) std::cerr << msg << "\n";
}

void debug(const std::string& msg) {
  if (log_level() == LogLevel::Debug) std::cerr << "[debug] " << msg << "\n";
}

std::vector<double> parse_list(const std::string& s, std::size_t min_n, std::size_t max_n, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, std::string("bad number in ") + what + ": " + cell);
    }
  }
  if (out.size() < min_n || out.size() > max_n)
    throw Error(ErrorCode::InvalidArgument, std::string("wrong number of values in ") + what);
  return out;
}

Window parse_window(const std::string& s) {
  const auto v = parse_list(s, 3, 3, "--window");
  if (!(v[2] > 0)) throw Error(ErrorCode::InvalidArgument, "window extent must be positive");
  return {Vec2(v[0], v[1]), v[2]};
}

std::pair<int, int> parse_res(const std::string& s) {
  const auto v = parse_list(s, 1, 2, "--res");
  const int w = static_cast<int>(v[0]);
  const int h = v.size() > 1 ? static_cast<int>(v[1]) : w;
  if (w != v[0] || h != v.back() || w < 3 || h < 3) throw Error(ErrorCode::InvalidArgument, "resolution must be integers >= 3");
  return {w, h};
}

void write_or_print(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
  } else {
    io::atomic_write(path, content);
  }
}

// --- render -----------------------------------------------------------------

struct RenderArgs {
  std::string patch, lights, window = "0,0,1", res = "64", out;
  bool exact = false;
};

int cmd_render(const RenderArgs& a) {
  const MongePatch3 patch = io::patch3_from_json(io::parse_json_arg(a.patch));
  const auto lights = io::lights_from_json(io::parse_json_arg(a.lights));
  const auto [w, h] = parse_res(a.res);
  const RasterImage img = render_raster(patch, lights, parse_window(a.window), w, h);
  io::save_raster(a.out, img, a.exact);
  info("render: " + std::to_string(w) + "x" + std::to_string(h) + " -> " + a.out);
  return kOk;
}

// --- flow -------------------------------------------------------------------

struct FlowArgs {
  std::string in, out;
  double eps_g = kDefaultGradientEps;
  int stride = 1;
};

int cmd_flow(const FlowArgs& a) {
  if (!(a.eps_g > 0)) throw Error(ErrorCode::InvalidArgument, "--tol-g must be positive");
  const RasterImage img = io::load_raster(a.in);
  const FlowField field = flow_field_from_raster(img, a.eps_g);
  io::atomic_write(a.out + ".csv", io::flow_csv(io::flow_rows(field)));
  io::atomic_write(a.out + ".svg", io::quiver_svg(field, a.stride));
  info("flow: " + std::to_string(field.samples.size()) + " samples, " + std::to_string(field.masked_count()) +
       " masked");
  return kOk;
}

// --- verify -----------------------------------------------------------------

struct VerifyArgs {
  std::string patch, model, lights, window = "0,0,1", out;
  int grid = 11;
  int samples = 0;
  unsigned seed = 1;
  double tol = 1e-8;
  double eps_g = kDefaultGradientEps, eps_h = kDefaultHessianEps;
};

int cmd_verify(const VerifyArgs& a) {
  if (!(a.tol > 0) || !(a.eps_g > 0) || !(a.eps_h > 0))
    throw Error(ErrorCode::InvalidArgument, "tolerances must be positive");
  const MongePatch3 patch = io::patch3_from_json(io::parse_json_arg(a.patch));
  // The jets come from `patch`; the equations are checked against `model`.
  const MongePatch3 model = a.model.empty() ? patch : io::patch3_from_json(io::parse_json_arg(a.model));
  const auto lights = io::lights_from_json(io::parse_json_arg(a.lights));
  const Window win = parse_window(a.window);
  std::vector<Vec2> pts;
  if (a.samples > 0) {
    std::mt19937_64 rng(a.seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int i = 0; i < a.samples; ++i) pts.push_back(win.center + win.extent * Vec2(u(rng), u(rng)));
  } else {
    if (a.grid < 1) throw Error(ErrorCode::InvalidArgument, "--grid must be positive");
    for (int r = 0; r < a.grid; ++r)
      for (int c = 0; c < a.grid; ++c) {
        const double t = a.grid == 1 ? 0.5 : static_cast<double>(c) / (a.grid - 1);
        const double s = a.grid == 1 ? 0.5 : static_cast<double>(r) / (a.grid - 1);
        pts.push_back(win.center + win.extent * Vec2(t - 0.5, s - 0.5));
      }
  }
  const ResidualOptions opt{a.eps_g, a.eps_h};
  json points = json::array();
  double worst = 0;
  int ok = 0, shadowed = 0, skipped = 0;
  for (const Vec2& q : pts) {
    json e{{"point", {q.x(), q.y()}}};
    try {
      const ImageJet2 jet = analytic_jet(patch, lights, q);
      const ShadingResiduals r = residuals_geometric(model, jet, q, opt);
      const ShadingResiduals n = r.normalized();
      const double g = r.max_normalized();
      const double p = residuals_pde(model, jet, q, PdeVariant::Corrected, opt).max_normalized();
      e["status"] = "ok";
      e["r_vv"] = r.r_vv;
      e["r_uu"] = r.r_uu;
      e["r_uv"] = r.r_uv;
      e["normalized"] = {{"r_vv", n.r_vv}, {"r_uu", n.r_uu}, {"r_uv", n.r_uv}, {"max", g}, {"pde_max", p}};
      worst = std::max({worst, g, p});
      ++ok;
    } catch (const Error& err) {
      e["status"] = to_string(err.code());
      if (err.code() == ErrorCode::ShadowedPoint) {
        ++shadowed;
      } else if (err.code() == ErrorCode::SingularHessian || err.code() == ErrorCode::DegenerateGradient) {
        ++skipped;
      } else {
        throw;
      }
    }
    points.push_back(std::move(e));
  }
  const bool pass = worst <= a.tol;
  json report{{"points", std::move(points)},
              {"summary",
               {{"max_normalized_residual", worst}, {"tolerance", a.tol}, {"evaluated", ok},
                {"shadowed", shadowed}, {"skipped", skipped}, {"pass", pass}}}};
  write_or_print(a.out, report.dump(2) + "\n");
  info("verify: max normalized residual " + io::fmt(worst) + " over " + std::to_string(ok) + " points");
  if (!pass) return kVerifyFailed;
  if (shadowed > 0) return kShadowed;
  return kOk;
}

// --- solve ------------------------------------------------------------------

struct SolveArgs {
  std::string mode, q, frame, patch, lights, point, in, pixel, out, csv;
  std::string tangent = "0,0", grid = "-1.5,1.5,21,-1.5,1.5,21", window = "0,0,1", res = "41", target_light;
  double box = 10;
  int seeds = 17;
  double tol = 1e-9;
  double eps_g = kDefaultGradientEps, eps_c = kDefaultCriticalEps;
};

ImageJet2 jet_from_inputs(const SolveArgs& a) {
  if (!a.patch.empty()) {
    if (a.lights.empty() || a.point.empty())
      throw Error(ErrorCode::InvalidArgument, "--patch needs --lights and --point");
    const auto p = parse_list(a.point, 2, 2, "--point");
    return analytic_jet(io::patch3_from_json(io::parse_json_arg(a.patch)),
                        io::lights_from_json(io::parse_json_arg(a.lights)), Vec2(p[0], p[1]));
  }
  if (!a.in.empty()) {
    if (a.pixel.empty()) throw Error(ErrorCode::InvalidArgument, "--in needs --pixel");
    const auto px = parse_list(a.pixel, 2, 2, "--pixel");
    return fd_jet(io::load_raster(a.in), {static_cast<int>(px[0]), static_cast<int>(px[1])});
  }
  throw Error(ErrorCode::InvalidArgument, "no input: give --frame, --patch/--lights/--point or --in/--pixel");
}

FlowFrame frame_from_inputs(const SolveArgs& a) {
  if (!a.frame.empty()) return io::frame_from_json(io::parse_json_arg(a.frame));
  return frame_from_jet(jet_from_inputs(a), a.eps_g);
}

int cmd_solve(const SolveArgs& a) {
  if (!(a.tol > 0) || !(a.box > 0) || !(a.eps_g > 0) || !(a.eps_c > 0))
    throw Error(ErrorCode::InvalidArgument, "tolerances and box must be positive");
  SecondOrderOptions sopt;
  sopt.box = a.box;
  sopt.seeds_per_axis = a.seeds;

  if (a.mode == "frontal") {
    PatchSolutionSet set;
    if (!a.q.empty()) {
      const auto q = parse_list(a.q, 3, 3, "--q");
      set = solve_frontal_parallel(QuadricTriple{q[0], q[1], q[2]}, a.tol);
    } else {
      set = solve_frontal_parallel(frame_from_inputs(a), a.tol);
    }
    write_or_print(a.out, io::to_json(set).dump(2) + "\n");
    info("frontal: " + std::to_string(set.solutions.size()) + " solutions");
    return kOk;
  }
  if (a.mode == "second-order") {
    const auto t = parse_list(a.tangent, 2, 2, "--tangent");
    const auto set = solve_second_order(frame_from_inputs(a), Vec2(t[0], t[1]), sopt);
    write_or_print(a.out, io::to_json(set).dump(2) + "\n");
    info("second-order: " + std::to_string(set.solutions.size()) + " solutions" +
         (set.boundary_warning() ? " (root near box boundary)" : ""));
    return kOk;
  }
  if (a.mode == "sweep") {
    const auto g = parse_list(a.grid, 6, 6, "--grid");
    SweepGrid grid{g[0], g[1], g[3], g[4], static_cast<int>(g[2]), static_cast<int>(g[5])};
    const FlowFrame frame = frame_from_inputs(a);
    const SweepResult sweep = sweep_tangent_planes(frame, grid, sopt);
    json cells = json::array();
    for (const auto& c : sweep.cells) cells.push_back(io::to_json(c));
    json out{{"cells", std::move(cells)}};
    if (sweep.empty_region) out["empty_region"] = *sweep.empty_region;
    if (!a.target_light.empty()) {
      const auto t = parse_list(a.target_light, 3, 3, "--target-light");
      const Vec3 target = Vec3(t[0], t[1], t[2]).normalized();
      std::optional<PatchSolution> best;
      double best_angle = 10;
      for (const auto& c : sweep.cells)
        for (const auto& s : c.solutions) {
          if (gaussian_sign(s.classification) >= 0 || !s.light) continue;
          const double ang = std::acos(std::clamp(s.light->direction.dot(target), -1.0, 1.0));
          if (ang < best_angle) best_angle = ang, best = s;
        }
      if (best) {
        json m{{"grid_solution", io::to_json(PatchSolutionSet{best->patch.slope(), {*best}})},
               {"grid_angle", best_angle}};
        if (const auto r = match_emergent_light(frame, *best, target)) {
          m["refined_solution"] = io::to_json(PatchSolutionSet{r->solution.patch.slope(), {r->solution}});
          m["refined_angle"] = r->angle;
        }
        out["saddle_light_match"] = std::move(m);
        info("sweep: best saddle light angle " + io::fmt(best_angle) + " rad on the grid");
      }
    }
    write_or_print(a.out, out.dump(2) + "\n");
    std::string csv_path = a.csv;
    if (csv_path.empty() && !a.out.empty() && a.out != "-") csv_path = a.out + ".csv";
    if (!csv_path.empty()) io::atomic_write(csv_path, io::sweep_csv(sweep));
    return kOk;
  }
  if (a.mode == "critical") {
    ImageJet2 jet;
    Vec2 where = Vec2::Zero();
    if (!a.patch.empty() && a.point.empty()) {
      // Locate a gradient zero in the window first.
      const MongePatch3 patch = io::patch3_from_json(io::parse_json_arg(a.patch));
      if (a.lights.empty()) throw Error(ErrorCode::InvalidArgument, "--patch needs --lights");
      const auto lights = io::lights_from_json(io::parse_json_arg(a.lights));
      const auto [w, h] = parse_res(a.res);
      CriticalPointOptions copt;
      copt.eps_c_rel = a.eps_c;
      auto jet_at = [&](const Vec2& q) { return analytic_jet(patch, lights, q); };
      const auto pts = find_critical_points(jet_at, parse_window(a.window), w, h, copt);
      if (pts.empty()) throw Error(ErrorCode::NonCriticalPoint, "no gradient zero found in the window");
      where = pts.front();
      jet = jet_at(where);
      debug("critical point at " + io::fmt(where.x()) + "," + io::fmt(where.y()));
    } else {
      jet = jet_from_inputs(a);
      if (!a.point.empty()) {
        const auto p = parse_list(a.point, 2, 2, "--point");
        where = Vec2(p[0], p[1]);
      }
    }
    const auto t = parse_list(a.tangent, 2, 2, "--tangent");
    const auto set = solve_critical_point(jet, Vec2(t[0], t[1]), a.eps_c, a.tol);
    json out = io::to_json(set);
    out["point"] = {where.x(), where.y()};
    write_or_print(a.out, out.dump(2) + "\n");
    info("critical: " + std::to_string(set.solutions.size()) + " solutions");
    return kOk;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown --mode " + a.mode);
}

// --- solve1d ----------------------------------------------------------------

struct Solve1DArgs {
  std::string samples, curve, lights, domain, bc, out;
  double tol = 1e-10, eps_s = 1e-6;
  int points = 401;
};

// f(x) = sum_k poly[k] x^k + sin * sin(x).
CurveDerivs curve_from_json(const json& j) {
  std::vector<double> poly;
  if (j.contains("poly")) {
    if (!j.at("poly").is_array()) throw Error(ErrorCode::InvalidArgument, "curve.poly must be an array");
    for (const auto& c : j.at("poly")) poly.push_back(c.get<double>());
  }
  const double s = j.value("sin", 0.0);
  return [poly, s](double x) -> std::array<double, 4> {
    std::array<double, 4> d{s * std::sin(x), s * std::cos(x), -s * std::sin(x), -s * std::cos(x)};
    for (std::size_t k = 0; k < poly.size(); ++k) {
      double coef = poly[k];
      for (int order = 0; order < 4 && static_cast<int>(k) >= order; ++order) {
        d[order] += coef * std::pow(x, static_cast<double>(k) - order);
        coef *= static_cast<double>(k) - order;
      }
    }
    return d;
  };
}

int cmd_solve1d(const Solve1DArgs& a) {
  const auto dom = parse_list(a.domain, 2, 2, "--domain");
  const auto bcv = parse_list(a.bc, 3, 3, "--bc");
  Solve1DOptions opt;
  opt.tolerance = a.tol;
  opt.eps_singular = a.eps_s;
  opt.grid_points = a.points;
  if (!(opt.tolerance > 0) || !(opt.eps_singular > 0))
    throw Error(ErrorCode::InvalidArgument, "tolerances must be positive");
  std::optional<CurveDerivs> truth;
  Intensity1D intensity;
  if (!a.curve.empty()) truth = curve_from_json(io::parse_json_arg(a.curve));
  if (!a.samples.empty()) {
    intensity = io::intensity_from_csv(io::read_file(a.samples));
  } else if (truth) {
    if (a.lights.empty()) throw Error(ErrorCode::InvalidArgument, "--curve needs --lights");
    const LightSource l = io::lights_from_json(io::parse_json_arg(a.lights)).front();
    if (std::abs(l.direction.y()) > 1e-12) throw Error(ErrorCode::InvalidArgument, "1D light must lie in the x-z plane");
    intensity = render_curve(*truth, l.direction.x(), l.direction.z(), l.albedo);
  } else {
    throw Error(ErrorCode::InvalidArgument, "give --samples or --curve");
  }
  const Curve1DSolution sol = solve_1d(intensity, dom[0], dom[1], {bcv[0], bcv[1], bcv[2]}, opt);
  io::atomic_write(a.out, io::curve_csv(sol));
  std::string summary = "max_residual=" + io::fmt(sol.max_residual);
  if (sol.anchor) summary += " anchor=" + io::fmt(*sol.anchor) + " endpoint_miss=" + io::fmt(sol.endpoint_miss);
  if (truth) {
    double err = 0;
    for (std::size_t i = 0; i < sol.x.size(); ++i) err = std::max(err, std::abs(sol.f[i] - (*truth)(sol.x[i])[0]));
    summary += " max_error=" + io::fmt(err);
  }
  std::cout << summary << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Second-order shading flow: render, measure, verify and invert."};
  app.set_config("--config", "", "TOML/INI file with option defaults");
  app.require_subcommand(1);

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Render a patch to a 16-bit PGM with JSON sidecar");
  render->add_option("--patch", ra.patch, "Patch JSON (inline or file)")->required();
  render->add_option("--lights", ra.lights, "Light JSON (inline or file)")->required();
  render->add_option("--window", ra.window, "cx,cy,extent")->capture_default_str();
  render->add_option("--res", ra.res, "width[,height]")->capture_default_str();
  render->add_option("--out", ra.out, "Output PGM path")->required();
  render->add_flag("--exact", ra.exact, "Also store full-precision values in the sidecar");

  FlowArgs fa;
  auto* flow = app.add_subcommand("flow", "Shading flow CSV and SVG quiver from a raster");
  flow->add_option("--in", fa.in, "Input PGM")->required();
  flow->add_option("--out", fa.out, "Output prefix (.csv and .svg are appended)")->required();
  flow->add_option("--tol-g", fa.eps_g, "Gradient threshold")->capture_default_str();
  flow->add_option("--stride", fa.stride, "Quiver stride")->capture_default_str();

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Check the shading equations on a rendered configuration");
  verify->add_option("--patch", va.patch, "Patch JSON")->required();
  verify->add_option("--model", va.model, "Patch to check the rendered jets against (default: --patch)");
  verify->add_option("--lights", va.lights, "Light JSON")->required();
  verify->add_option("--window", va.window, "cx,cy,extent")->capture_default_str();
  verify->add_option("--grid", va.grid, "Points per side of the check grid")->capture_default_str();
  verify->add_option("--samples", va.samples, "Random points instead of a grid");
  verify->add_option("--seed", va.seed, "Random seed")->capture_default_str();
  verify->add_option("--tol", va.tol, "Maximum normalized residual")->capture_default_str();
  verify->add_option("--tol-g", va.eps_g, "Gradient threshold")->capture_default_str();
  verify->add_option("--tol-h", va.eps_h, "Relative Hessian singularity threshold")->capture_default_str();
  verify->add_option("--out", va.out, "Report JSON path (stdout if omitted)");

  SolveArgs sa;
  auto* solve = app.add_subcommand("solve", "Recover second-order patches and emergent lights");
  solve->add_option("--mode", sa.mode, "frontal | second-order | sweep | critical")
      ->required()
      ->check(CLI::IsMember({"frontal", "second-order", "sweep", "critical"}));
  solve->add_option("--q", sa.q, "q1,q2,q3 (frontal)");
  solve->add_option("--frame", sa.frame, "Flow frame JSON");
  solve->add_option("--patch", sa.patch, "Patch JSON (frame from its exact jet)");
  solve->add_option("--lights", sa.lights, "Light JSON");
  solve->add_option("--point", sa.point, "x,y");
  solve->add_option("--in", sa.in, "Raster PGM (frame from finite differences)");
  solve->add_option("--pixel", sa.pixel, "col,row");
  solve->add_option("--tangent", sa.tangent, "a,b")->capture_default_str();
  solve->add_option("--grid", sa.grid, "a0,a1,na,b0,b1,nb (sweep)")->capture_default_str();
  solve->add_option("--window", sa.window, "cx,cy,extent (critical search)")->capture_default_str();
  solve->add_option("--res", sa.res, "Critical search resolution")->capture_default_str();
  solve->add_option("--target-light", sa.target_light, "x,y,z: report the saddle whose light is closest (sweep)");
  solve->add_option("--box", sa.box, "Search box half-width K")->capture_default_str();
  solve->add_option("--seeds", sa.seeds, "Newton seeds per axis")->capture_default_str();
  solve->add_option("--tol-solve", sa.tol, "Solution tolerance")->capture_default_str();
  solve->add_option("--tol-g", sa.eps_g, "Gradient threshold")->capture_default_str();
  solve->add_option("--tol-c", sa.eps_c, "Relative critical-point threshold")->capture_default_str();
  solve->add_option("--out", sa.out, "Output JSON path (stdout if omitted)");
  solve->add_option("--csv", sa.csv, "Sweep CSV path (default: <out>.csv)");

  Solve1DArgs oa;
  auto* solve1d = app.add_subcommand("solve1d", "Reconstruct a curve from 1D intensity");
  solve1d->add_option("--samples", oa.samples, "CSV x,I on a uniform grid");
  solve1d->add_option("--curve", oa.curve, "Ground-truth curve JSON {\"poly\":[...],\"sin\":s}");
  solve1d->add_option("--lights", oa.lights, "Light JSON for rendering --curve");
  solve1d->add_option("--domain", oa.domain, "x0,x1")->required();
  solve1d->add_option("--bc", oa.bc, "f(x0),f(x1),f'(x0)")->required();
  solve1d->add_option("--out", oa.out, "Output CSV")->required();
  solve1d->add_option("--tol-int", oa.tol, "Integrator tolerance")->capture_default_str();
  solve1d->add_option("--tol-s", oa.eps_s, "|f''| singularity threshold")->capture_default_str();
  solve1d->add_option("--points", oa.points, "Output grid points")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kBadInput;
  }

  try {
    if (*render) return cmd_render(ra);
    if (*flow) return cmd_flow(fa);
    if (*verify) return cmd_verify(va);
    if (*solve) return cmd_solve(sa);
    if (*solve1d) return cmd_solve1d(oa);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  }
  return kBadInput;
}
