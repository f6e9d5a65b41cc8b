#include "sfflow/io.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

using namespace sff;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sfflow_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  CliResult run(const std::string& args, const std::string& env = "SFS_LOG=quiet") const {
    const std::string cmd = env + " " + SFFLOW_CLI + " " + args + " >" + path("stdout") + " 2>" + path("stderr");
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, io::read_file(path("stdout")), io::read_file(path("stderr"))};
  }

  fs::path dir_;
};

const char* kSphere = R"('{"sphere":{"about":[0.3,-0.1]}}')";
const char* kOblique = R"('{"dir":[1,0,1]}')";
const char* kWiggle = R"('{"poly":[0,0,-1,0,0,1],"sin":1}')";

double wiggle(double x) { return std::sin(x) - x * x + std::pow(x, 5); }
double wiggle_x(double x) { return std::cos(x) - 2 * x + 5 * std::pow(x, 4); }

std::string wiggle_bc() { return io::fmt(wiggle(-1)) + "," + io::fmt(wiggle(0.3)) + "," + io::fmt(wiggle_x(-1)); }

double summary_value(const std::string& line, const std::string& key) {
  const auto at = line.find(key + "=");
  return at == std::string::npos ? std::nan("") : std::stod(line.substr(at + key.size() + 1));
}

}  // namespace

// --- render -----------------------------------------------------------------

TEST_F(Cli, RenderFlatPatchIsConstant) {
  const CliResult r = run("render --patch '{\"c\":[0,0,0,0,0,0,0,0,0]}' --lights '{\"dir\":[0,0,1]}' --res 8,6 --out " +
                    path("flat.pgm"));
  ASSERT_EQ(r.code, 0) << r.err;
  const RasterImage img = io::load_raster(path("flat.pgm"));
  EXPECT_EQ(img.width, 8);
  EXPECT_EQ(img.height, 6);
  for (double v : img.values) EXPECT_EQ(v, 1);
}

TEST_F(Cli, RenderedSphereMatchesAnalyticJet) {
  const CliResult r = run(std::string("render --exact --patch ") + kSphere + " --lights " + kOblique +
                    " --window 0,0,0.04 --res 41 --out " + path("s.pgm"));
  ASSERT_EQ(r.code, 0) << r.err;
  const RasterImage img = io::load_raster(path("s.pgm"));
  EXPECT_NEAR(img.spacing, 1e-3, 1e-18);
  const ImageJet2 exact = analytic_jet(sphere_patch(Vec2(0.3, -0.1)), LightSource::make(Vec3(1, 0, 1)), Vec2::Zero());
  EXPECT_LE(jet_relative_error(fd_jet(img, {20, 20}), exact), 1e-4);
}

TEST_F(Cli, TwoLightsSuperpose) {
  const std::string base = std::string("render --exact --patch ") + kSphere + " --window 0,0,0.5 --res 9";
  ASSERT_EQ(run(base + " --lights '{\"dir\":[1,0,1]}' --out " + path("a.pgm")).code, 0);
  ASSERT_EQ(run(base + " --lights '{\"dir\":[0,-1,2],\"albedo\":0.5}' --out " + path("b.pgm")).code, 0);
  ASSERT_EQ(run(base + " --lights '[{\"dir\":[1,0,1]},{\"dir\":[0,-1,2],\"albedo\":0.5}]' --out " + path("ab.pgm")).code,
            0);
  const auto a = io::load_raster(path("a.pgm")), b = io::load_raster(path("b.pgm")), ab = io::load_raster(path("ab.pgm"));
  for (std::size_t i = 0; i < ab.values.size(); ++i) EXPECT_NEAR(ab.values[i], a.values[i] + b.values[i], 1e-15);
}

TEST_F(Cli, ExitCodesForBadInputAndIo) {
  EXPECT_EQ(run("render --patch '{\"c\":[1,2]}' --lights '{\"dir\":[0,0,1]}' --out " + path("x.pgm")).code, 2);
  EXPECT_EQ(run("render --patch '{\"c\":' --lights '{\"dir\":[0,0,1]}' --out " + path("x.pgm")).code, 2);
  EXPECT_EQ(run(std::string("render --patch ") + kSphere + " --lights " + kOblique + " --res 2 --out " + path("x.pgm")).code,
            2);
  EXPECT_EQ(run("render --lights '{\"dir\":[0,0,1]}' --out " + path("x.pgm")).code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run(std::string("render --patch ") + kSphere + " --lights " + kOblique + " --out " +
                path("no/such/dir/x.pgm"))
                .code,
            3);
  EXPECT_EQ(run(std::string("render --patch ") + path("missing.json") + " --lights " + kOblique + " --out " + path("x.pgm"))
                .code,
            3);
  EXPECT_EQ(run("flow --in " + path("missing.pgm") + " --out " + path("f")).code, 3);
  EXPECT_EQ(run("--help").code, 0);
}

// --- flow -------------------------------------------------------------------

TEST_F(Cli, FlowOfConstantImageIsMasked) {
  std::string pgm = "P2\n6 6\n10\n";
  for (int i = 0; i < 36; ++i) pgm += "7 ";
  io::atomic_write(path("c.pgm"), pgm);
  const CliResult r = run("flow --in " + path("c.pgm") + " --out " + path("c"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = io::parse_flow_csv(io::read_file(path("c.csv")));
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& row : rows) EXPECT_TRUE(row.masked);
  EXPECT_NE(io::read_file(path("c.svg")).find("class=\"masked\""), std::string::npos);
}

TEST_F(Cli, FlowOfRampIsUniform) {
  std::string pgm = "P2\n7 5\n100\n";
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c) pgm += std::to_string(10 + 5 * c + 3 * r) + " ";
  io::atomic_write(path("ramp.pgm"), pgm);
  ASSERT_EQ(run("flow --in " + path("ramp.pgm") + " --out " + path("ramp")).code, 0);
  const auto rows = io::parse_flow_csv(io::read_file(path("ramp.csv")));
  ASSERT_EQ(rows.size(), 3u);
  // Brightness grows along +x and down the rows, i.e. along (5, -3).
  const Vec2 expect = Vec2(5, -3).normalized();
  for (const auto& row : rows) {
    EXPECT_FALSE(row.masked);
    EXPECT_NEAR(row.ux, expect.x(), 1e-12);
    EXPECT_NEAR(row.uy, expect.y(), 1e-12);
  }
}

TEST_F(Cli, SphereFlowMatchesAnalyticIsophotes) {
  ASSERT_EQ(run(std::string("render --exact --patch ") + kSphere + " --lights " + kOblique +
                " --window 0,0,0.02 --res 21 --out " + path("s.pgm"))
                .code,
            0);
  ASSERT_EQ(run("flow --in " + path("s.pgm") + " --out " + path("s")).code, 0);
  const auto rows = io::parse_flow_csv(io::read_file(path("s.csv")));
  ASSERT_EQ(rows.size(), 17u * 17u);
  const MongePatch3 patch = sphere_patch(Vec2(0.3, -0.1));
  const LightSource light = LightSource::make(Vec3(1, 0, 1));
  double worst = 0;
  for (const auto& row : rows) {
    ASSERT_FALSE(row.masked);
    const FlowFrame f = frame_from_jet(analytic_jet(patch, light, Vec2(row.x, row.y)));
    worst = std::max(worst, std::abs(std::atan2(f.u.x() * row.uy - f.u.y() * row.ux, f.u.dot(Vec2(row.ux, row.uy)))));
  }
  EXPECT_LE(worst, 1e-3);
}

// --- verify -----------------------------------------------------------------

TEST_F(Cli, VerifyExitCodes) {
  const std::string patch = R"('{"c":[0.2,-0.1,0.5,0.3,-0.4,0.1,0.2,-0.3,0.05]}')";
  const std::string lights = R"('{"dir":[0.3,0.4,0.9]}')";
  const CliResult ok = run("verify --patch " + patch + " --lights " + lights + " --window 0,0,0.4 --grid 5 --out " + path("ok.json"));
  ASSERT_EQ(ok.code, 0) << ok.err;
  const auto report = io::parse_json_arg(path("ok.json"));
  EXPECT_EQ(report.at("points").size(), 25u);
  EXPECT_TRUE(report.at("summary").at("pass").get<bool>());
  EXPECT_LE(report.at("summary").at("max_normalized_residual").get<double>(), 1e-8);

  const std::string wrong = R"('{"c":[0.2,-0.1,0.6,0.3,-0.4,0.1,0.2,-0.3,0.05]}')";
  EXPECT_EQ(run("verify --patch " + patch + " --model " + wrong + " --lights " + lights + " --window 0,0,0.4 --grid 5").code,
            1);

  // Grazing light on a steep plane: every point is in shadow.
  const CliResult sh = run(R"(verify --patch '{"c":[1,0,0.1,0,0.1,0,0,0,0]}' --lights '{"dir":[1,0,0.05]}' --grid 3 --out )" +
                     path("sh.json"));
  EXPECT_EQ(sh.code, 4);
  const auto shadow = io::parse_json_arg(path("sh.json"));
  for (const auto& p : shadow.at("points")) EXPECT_EQ(p.at("status"), "ShadowedPoint");
}

// --- solve ------------------------------------------------------------------

TEST_F(Cli, SolveFrontalEmitsFourSolutions) {
  const CliResult r = run("solve --mode frontal --q 1,4,0 --out " + path("f.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string text = io::read_file(path("f.json"));
  const PatchSolutionSet set = io::solution_set_from_json(io::json::parse(text));
  EXPECT_EQ(set.solutions.size(), 4u);
  EXPECT_FALSE(set.degenerate);
  EXPECT_EQ(io::to_json(set).dump(2) + "\n", text);

  // No real square root: the data do not fit the model.
  EXPECT_EQ(run("solve --mode frontal --q 1,1,2").code, 1);

  // A tangent plane without solutions is a legal empty result.
  const CliResult none =
      run(R"(solve --mode second-order --frame '{"u":[1,0],"I":1,"Iu":0.25,"Ivv":-0.55,"Iuv":0.95,"Iuu":-0.3}')");
  EXPECT_EQ(none.code, 0);
  EXPECT_EQ(io::json::parse(none.out).at("solutions").size(), 0u);
}

TEST_F(Cli, SweepFindsSaddleWithDiagonalLight) {
  const std::string args = R"(solve --mode sweep --patch '{"sphere":{"about":[0.4,-0.2]}}' --lights '{"dir":[1,0,1]}')"
                           " --point 0,0 --target-light 1,1,1 --out ";
  ASSERT_EQ(run(args + path("sw.json")).code, 0);
  const auto out = io::parse_json_arg(path("sw.json"));
  ASSERT_TRUE(out.contains("saddle_light_match"));
  const auto& m = out.at("saddle_light_match");
  EXPECT_LE(m.at("refined_angle").get<double>(), 1e-2);
  const auto refined = io::solution_set_from_json(m.at("refined_solution"));
  ASSERT_EQ(refined.solutions.size(), 1u);
  EXPECT_LT(gaussian_sign(refined.solutions[0].classification), 0);

  const auto rows = io::parse_sweep_csv(io::read_file(path("sw.json.csv")));
  ASSERT_EQ(rows.size(), 441u);
  for (std::size_t i = 0; i < rows.size(); ++i)
    EXPECT_EQ(rows[i].n_roots, static_cast<int>(out.at("cells")[i].at("solutions").size()));

  // Same configuration, same bytes.
  ASSERT_EQ(run(args + path("sw2.json")).code, 0);
  EXPECT_EQ(io::read_file(path("sw.json")), io::read_file(path("sw2.json")));
  EXPECT_EQ(io::read_file(path("sw.json.csv")), io::read_file(path("sw2.json.csv")));
}

TEST_F(Cli, CriticalModeAtDetectedGradientZero) {
  const CliResult r = run(R"(solve --mode critical --patch '{"c":[0,0,0.5,0,1,0,0,0,0]}' --lights '{"dir":[0,0,1]}')"
                    " --window 0.013,-0.021,0.2 --res 41");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = io::json::parse(r.out);
  EXPECT_NEAR(out.at("point")[0].get<double>(), 0, 1e-9);
  EXPECT_NEAR(out.at("point")[1].get<double>(), 0, 1e-9);
  const PatchSolutionSet set = io::solution_set_from_json(out);
  // Two sign choices per principal direction; the true patch and its
  // mirror H -> -H are among them.
  ASSERT_EQ(set.solutions.size(), 4u);
  int found = 0;
  for (const auto& s : set.solutions)
    for (double sign : {1.0, -1.0})
      found += std::abs(s.patch.c - sign * 0.5) + std::abs(s.patch.d) + std::abs(s.patch.e - sign) <= 1e-6;
  EXPECT_EQ(found, 2);

  // Under an oblique light the brightness maximum sits at x = -1, outside the window.
  EXPECT_EQ(run(R"(solve --mode critical --patch '{"c":[0,0,0.5,0,1,0,0,0,0]}' --lights '{"dir":[1,0,1]}')"
                " --window 0,0,0.2")
                .code,
            2);
  EXPECT_EQ(run("solve --mode sideways --q 1,4,0").code, 2);
  EXPECT_EQ(run("solve --mode second-order").code, 2);
}

// --- solve1d ----------------------------------------------------------------

TEST_F(Cli, Solve1DParabola) {
  const CliResult r = run(R"(solve1d --curve '{"poly":[0,0,1]}' --lights '{"dir":[0,0,1]}' --domain -1,1 --bc 1,1,-2 --out )" +
                    path("p.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LE(summary_value(r.out, "max_error"), 1e-6);
  EXPECT_NEAR(summary_value(r.out, "anchor"), 0, 1e-12);
  const std::string text = io::read_file(path("p.csv"));
  const auto rows = io::parse_curve_csv(text);
  ASSERT_EQ(rows.size(), 401u);
  std::string again = "x,f,residual\n";
  for (const auto& row : rows)
    again += io::fmt(row.x) + "," + io::fmt(row.f) + "," + (std::isnan(row.residual) ? "nan" : io::fmt(row.residual)) + "\n";
  EXPECT_EQ(again, text);
}

TEST_F(Cli, Solve1DQuinticCurveAndSlopeSensitivity) {
  const std::string base = std::string("solve1d --curve ") + kWiggle + R"( --lights '{"dir":[-0.2,0,1]}' --domain -1,0.3)";
  const CliResult r = run(base + " --bc " + wiggle_bc() + " --out " + path("a.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LE(summary_value(r.out, "max_error"), 1e-4);
  EXPECT_LE(summary_value(r.out, "max_residual"), 1e-9);

  const CliResult p = run(base + " --bc " + io::fmt(wiggle(-1)) + "," + io::fmt(wiggle(0.3)) + "," +
                    io::fmt(wiggle_x(-1) + 1e-3) + " --out " + path("b.csv"));
  ASSERT_EQ(p.code, 0) << p.err;
  const auto a = io::parse_curve_csv(io::read_file(path("a.csv")));
  const auto b = io::parse_curve_csv(io::read_file(path("b.csv")));
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i].f - b[i].f));
  EXPECT_GT(diff, 1e-5);
}

TEST_F(Cli, Solve1DFromSamples) {
  const Intensity1D in = render_curve(
      [](double x) {
        return std::array<double, 4>{wiggle(x), wiggle_x(x), -std::sin(x) - 2 + 20 * std::pow(x, 3),
                                     -std::cos(x) + 60 * x * x};
      },
      -0.2, 1);
  std::string csv = "x,I\n";
  for (int i = 0; i <= 1500; ++i) csv += io::fmt(-1.1 + i * 1e-3) + "," + io::fmt(in.eval(-1.1 + i * 1e-3)[0]) + "\n";
  io::atomic_write(path("I.csv"), csv);
  const CliResult r = run("solve1d --samples " + path("I.csv") + " --curve " + kWiggle + " --domain -1,0.3 --bc " + wiggle_bc() +
                    " --out " + path("s.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LE(summary_value(r.out, "max_error"), 1e-8);
}

TEST_F(Cli, Solve1DFailures) {
  // x^3 + x has an inflection at 0.
  const CliResult s = run(R"(solve1d --curve '{"poly":[0,1,0,1]}' --lights '{"dir":[-0.2,0,1]}' --domain -0.5,0.7)"
                    " --bc -0.625,1.043,1.75 --out " + path("x.csv"));
  EXPECT_EQ(s.code, 5);
  const auto at = s.err.find("x = ");
  ASSERT_NE(at, std::string::npos) << s.err;
  EXPECT_NEAR(std::stod(s.err.substr(at + 4)), 0, 1e-5);
  EXPECT_FALSE(fs::exists(path("x.csv")));

  const CliResult nb = run(std::string("solve1d --curve ") + kWiggle + R"( --lights '{"dir":[-0.2,0,1]}' --domain -1,0.3)" +
                     " --bc " + io::fmt(wiggle(-1)) + ",1000," + io::fmt(wiggle_x(-1)) + " --out " + path("y.csv"));
  EXPECT_EQ(nb.code, 1);
  EXPECT_EQ(run("solve1d --domain 0,1 --bc 0,0,0 --out " + path("z.csv")).code, 2);
  EXPECT_EQ(run(R"(solve1d --curve '{"poly":[0,0,1]}' --lights '{"dir":[0,1,1]}' --domain -1,1 --bc 1,1,-2 --out )" +
                path("z.csv"))
                .code,
            2);
}

// --- configuration ----------------------------------------------------------

TEST_F(Cli, VerifySamplesAreSeeded) {
  const std::string base = std::string("verify --patch ") + kSphere + " --lights " + kOblique +
                           " --window 0,0,0.2 --samples 20 --out ";
  ASSERT_EQ(run(base + path("a.json") + " --seed 7").code, 0);
  ASSERT_EQ(run(base + path("b.json") + " --seed 7").code, 0);
  ASSERT_EQ(run(base + path("c.json") + " --seed 8").code, 0);
  EXPECT_EQ(io::read_file(path("a.json")), io::read_file(path("b.json")));
  EXPECT_NE(io::read_file(path("a.json")), io::read_file(path("c.json")));
}

TEST_F(Cli, RenderIsDeterministic) {
  const std::string base = std::string("render --patch ") + kSphere + " --lights " + kOblique + " --res 33 --out ";
  ASSERT_EQ(run(base + path("a.pgm")).code, 0);
  ASSERT_EQ(run(base + path("b.pgm")).code, 0);
  EXPECT_EQ(io::read_file(path("a.pgm")), io::read_file(path("b.pgm")));
  EXPECT_EQ(io::read_file(path("a.pgm.json")), io::read_file(path("b.pgm.json")));
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  io::atomic_write(path("run.ini"), "[render]\nres=7\nwindow=\"0,0,0.5\"\n");
  const std::string base = std::string("--config ") + path("run.ini") + " render --patch " + kSphere + " --lights " + kOblique;
  ASSERT_EQ(run(base + " --out " + path("a.pgm")).code, 0);
  EXPECT_EQ(io::load_raster(path("a.pgm")).width, 7);
  EXPECT_NEAR(io::load_raster(path("a.pgm")).spacing, 0.5 / 6, 1e-15);
  ASSERT_EQ(run(base + " --res 9 --out " + path("b.pgm")).code, 0);
  EXPECT_EQ(io::load_raster(path("b.pgm")).width, 9);
}

TEST_F(Cli, LogLevelFromEnvironment) {
  const std::string args = "solve --mode frontal --q 1,4,0 --out " + path("f.json");
  EXPECT_TRUE(run(args, "SFS_LOG=quiet").err.empty());
  EXPECT_NE(run(args, "SFS_LOG=info").err.find("4 solutions"), std::string::npos);
}
