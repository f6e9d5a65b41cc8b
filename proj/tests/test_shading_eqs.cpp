#include "sfflow/shading_eqs.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace sff;

namespace {

struct Triple {
  MongePatch3 patch;
  LightSource light;
  Vec2 point;
  ImageJet2 jet;
};

double lit(const MongePatch3& p, const LightSource& l, const Vec2& q) {
  return l.direction.dot(surface_frame(p, q).normal);
}

// Random consistent (patch, light, point) with a well-conditioned Hessian
// and a clearly nonzero brightness gradient.
Triple random_triple(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  for (;;) {
    Triple t;
    for (auto& c : t.patch.c) c = u(rng);
    t.light = LightSource::make({u(rng), u(rng), 1}, 0.5 + std::abs(u(rng)));
    t.point = Vec2(0.3 * u(rng), 0.3 * u(rng));
    const Mat2 h = t.patch.hessian(t.point);
    if (std::abs(h.determinant()) < 0.05 * h.squaredNorm()) continue;
    if (lit(t.patch, t.light, t.point) < 0.2) continue;
    t.jet = analytic_jet(t.patch, t.light, t.point);
    if (t.jet.gradient().norm() < 1e-2 * t.jet.I) continue;
    return t;
  }
}

Mat2 rotation(double th) {
  Mat2 r;
  r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  return r;
}

// Coefficients of f(R^T x): every derivative tensor is transformed by R.
MongePatch3 rotate_patch(const MongePatch3& p, const Mat2& r) {
  const Vec2 g = r * p.gradient(Vec2::Zero());
  const Mat2 h = r * p.hessian(Vec2::Zero()) * r.transpose();
  double t[2][2][2];
  const double src[2][2][2] = {{{p.fxxx(), p.fxxy()}, {p.fxxy(), p.fxyy()}},
                               {{p.fxxy(), p.fxyy()}, {p.fxyy(), p.fyyy()}}};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        double s = 0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) s += r(i, a) * r(j, b) * r(k, c) * src[a][b][c];
        t[i][j][k] = s;
      }
  return MongePatch3{{g.x(), g.y(), h(0, 0) / 2, h(0, 1), h(1, 1) / 2, t[0][0][0] / 6, t[0][0][1] / 2,
                      t[0][1][1] / 2, t[1][1][1] / 6}};
}

LightSource rotate_light(const LightSource& l, const Mat2& r) {
  const Vec2 xy = r * l.direction.head<2>();
  return {Vec3(xy.x(), xy.y(), l.direction.z()), l.albedo};
}

}  // namespace

TEST(ResidualsGeometric, VanishOnRenderedTriples) {
  std::mt19937_64 rng(41);
  double worst = 0;
  for (int n = 0; n < 500; ++n) {
    const Triple t = random_triple(rng);
    const ShadingResiduals r = residuals_geometric(t.patch, t.jet, t.point);
    worst = std::max(worst, r.max_normalized());
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(ResidualsGeometric, RotationInvariance) {
  MongePatch3 sphere;
  sphere.c[2] = sphere.c[4] = 0.5;
  const LightSource l = LightSource::make({0.4, -0.3, 1});
  const Vec2 q(0.2, 0.15);
  const ShadingResiduals base = residuals_geometric(sphere, analytic_jet(sphere, l, q), q);
  for (double th : {0.3, 1.1, 2.5, -0.7}) {
    const Mat2 r = rotation(th);
    const LightSource lr = rotate_light(l, r);
    const ShadingResiduals rot = residuals_geometric(sphere, analytic_jet(sphere, lr, r * q), r * q);
    EXPECT_NEAR(rot.r_vv, base.r_vv, 1e-10);
    EXPECT_NEAR(rot.r_uu, base.r_uu, 1e-10);
    EXPECT_NEAR(rot.r_uv, base.r_uv, 1e-10);
  }

  // General cubic: residuals of a wrong patch are frame quantities and must
  // also be invariant.
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
  for (int n = 0; n < 100; ++n) {
    Triple t = random_triple(rng);
    t.point = Vec2::Zero();
    if (lit(t.patch, t.light, t.point) < 0.2) continue;
    const ImageJet2 jet = analytic_jet(t.patch, t.light, t.point);
    if (jet.gradient().norm() < 1e-2 || std::abs(t.patch.hessian(t.point).determinant()) < 0.05) continue;
    MongePatch3 wrong = t.patch;
    wrong.c[2] += 0.2;
    const Mat2 r = rotation(ang(rng));
    const ShadingResiduals a = residuals_geometric(wrong, jet, t.point);
    const ImageJet2 jr = analytic_jet(rotate_patch(t.patch, r), rotate_light(t.light, r), t.point);
    const ShadingResiduals b = residuals_geometric(rotate_patch(wrong, r), jr, t.point);
    EXPECT_NEAR(a.r_vv, b.r_vv, 1e-10 * (1 + a.scale));
    EXPECT_NEAR(a.r_uu, b.r_uu, 1e-10 * (1 + a.scale));
    EXPECT_NEAR(a.r_uv, b.r_uv, 1e-10 * (1 + a.scale));
  }
}

TEST(ResidualsGeometric, DetectsPerturbedPatch) {
  std::mt19937_64 rng(43);
  for (int n = 0; n < 50; ++n) {
    const Triple t = random_triple(rng);
    MongePatch3 wrong = t.patch;
    wrong.c[2] += 0.1;
    const Mat2 h = wrong.hessian(t.point);
    if (std::abs(h.determinant()) < 0.05 * h.squaredNorm()) continue;
    EXPECT_GT(residuals_geometric(wrong, t.jet, t.point).max_abs(), 1e-3) << n;
  }
}

TEST(ResidualsGeometric, Errors) {
  MongePatch3 cyl;
  cyl.c[2] = 1;
  const LightSource l = LightSource::make({0.3, 0.2, 1});
  try {
    residuals_geometric(cyl, analytic_jet(cyl, l, Vec2(0.1, 0)), Vec2(0.1, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularHessian);
  }
  MongePatch3 bowl;
  bowl.c[2] = bowl.c[4] = 1;
  const LightSource up = LightSource::make({0, 0, 1});
  try {
    residuals_geometric(bowl, analytic_jet(bowl, up, Vec2::Zero()), Vec2::Zero());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateGradient);
  }
}

TEST(ResidualsGeometric, LightSourceInvariance) {
  const MongePatch3 p{{0.2, -0.1, 0.6, 0.3, -0.4, 0.2, -0.3, 0.1, 0.25}};
  const Vec2 q(0.05, -0.1);
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  std::vector<LightSource> used;
  double lo = 1, hi = -1;
  auto record = [&](const ShadingResiduals& r) {
    for (double x : {r.normalized().r_vv, r.normalized().r_uu, r.normalized().r_uv}) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  };
  while (used.size() < 20) {
    const LightSource l = LightSource::make({u(rng), u(rng), 1}, 0.5 + std::abs(u(rng)));
    if (lit(p, l, q) < 0.2) continue;
    const ImageJet2 j = analytic_jet(p, l, q);
    if (j.gradient().norm() < 1e-2) continue;
    used.push_back(l);
    record(residuals_geometric(p, j, q));
  }
  for (std::size_t k = 0; k + 2 < used.size(); ++k) {
    const std::vector<LightSource> combo{used[k], used[k + 1], used[k + 2]};
    record(residuals_geometric(p, analytic_jet(p, combo, q), q));
  }
  EXPECT_LE(hi - lo, 1e-9);
}

TEST(ResidualsGeometric, AlbedoInvariance) {
  std::mt19937_64 rng(45);
  for (int n = 0; n < 50; ++n) {
    const Triple t = random_triple(rng);
    for (double rho : {0.01, 1.0, 250.0}) {
      const LightSource l{t.light.direction, rho};
      EXPECT_LE(residuals_geometric(t.patch, analytic_jet(t.patch, l, t.point), t.point).max_normalized(), 1e-8);
    }
  }
}

// For small delta the residual of a patch perturbed in one curvature
// coefficient grows linearly.
TEST(ResidualsGeometric, LinearGrowthUnderPerturbation) {
  std::mt19937_64 rng(46);
  for (int n = 0; n < 30; ++n) {
    const Triple t = random_triple(rng);
    for (int k : {2, 3, 4}) {
      auto res = [&](double delta) {
        MongePatch3 w = t.patch;
        w.c[k] += delta;
        return residuals_geometric(w, t.jet, t.point).max_abs();
      };
      const double r1 = res(1e-4), r2 = res(5e-5);
      ASSERT_GT(r2, 0);
      EXPECT_NEAR(r1 / r2, 2.0, 0.05) << n << " " << k;
    }
  }
}

TEST(ResidualsPde, CorrectedMatchesGeometric) {
  std::mt19937_64 rng(47);
  for (int n = 0; n < 500; ++n) {
    const Triple t = random_triple(rng);
    const ShadingResiduals g = residuals_geometric(t.patch, t.jet, t.point);
    const ShadingResiduals p = residuals_pde(t.patch, t.jet, t.point);
    EXPECT_NEAR(p.r_vv, g.r_vv, 1e-9 * g.scale);
    EXPECT_NEAR(p.r_uu, g.r_uu, 1e-9 * g.scale);
    EXPECT_NEAR(p.r_uv, g.r_uv, 1e-9 * g.scale);

    // Same residuals for a wrong surface, so the two forms agree as
    // functions and not only on their common zero set.
    MongePatch3 wrong = t.patch;
    wrong.c[4] += 0.3;
    wrong.c[6] -= 0.2;
    const Mat2 h = wrong.hessian(t.point);
    if (std::abs(h.determinant()) < 0.05 * h.squaredNorm()) continue;
    const ShadingResiduals gw = residuals_geometric(wrong, t.jet, t.point);
    const ShadingResiduals pw = residuals_pde(wrong, t.jet, t.point);
    EXPECT_NEAR(pw.r_vv, gw.r_vv, 1e-9 * gw.scale);
    EXPECT_NEAR(pw.r_uu, gw.r_uu, 1e-9 * gw.scale);
    EXPECT_NEAR(pw.r_uv, gw.r_uv, 1e-9 * gw.scale);
  }
}

TEST(ResidualsPde, LegacyDisagrees) {
  std::mt19937_64 rng(48);
  int differing = 0;
  for (int n = 0; n < 20; ++n) {
    const Triple t = random_triple(rng);
    const ShadingResiduals c = residuals_pde(t.patch, t.jet, t.point);
    const ShadingResiduals p = residuals_pde(t.patch, t.jet, t.point, PdeVariant::Legacy);
    differing += (p.max_abs() - c.max_abs()) > 1e-3;
  }
  EXPECT_GT(differing, 0);
}

TEST(ResidualsPde, FlatLimit) {
  const ImageJet2 jet{0.8, 0.3, -0.2, 0.5, 0.1, -0.4};
  const ShadingResiduals r = residuals_pde(MongePatch3{}, jet, Vec2(0.1, 0.2), PdeVariant::Legacy);
  EXPECT_EQ(r.r_vv, 0);
  EXPECT_EQ(r.r_uu, 0);
  EXPECT_EQ(r.r_uv, 0);
  EXPECT_EQ(r.scale, 0);
  EXPECT_THROW(residuals_pde(MongePatch3{}, jet, Vec2::Zero()), Error);
}

TEST(ResidualsSecondOrder, MatchesEmbeddedCubic) {
  std::mt19937_64 rng(49);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  int checked = 0;
  while (checked < 500) {
    const MongePatch2 p{u(rng), u(rng), u(rng), u(rng), u(rng)};
    const Mat2 h = p.hessian();
    if (std::abs(h.determinant()) < 0.05 * h.squaredNorm()) continue;
    const double th = u(rng) * 2;
    FlowFrame f;
    f.u = Vec2(std::cos(th), std::sin(th));
    f.v = perp(f.u);
    f.I = 0.5 + std::abs(u(rng));
    f.Iu = std::abs(u(rng)) + 0.01;
    f.Ivv = u(rng), f.Iuv = u(rng), f.Iuu = u(rng);
    ++checked;
    const ShadingResiduals a = residuals_second_order(p, f);
    const ShadingResiduals b = residuals_geometric(p.to_cubic(), f, Vec2::Zero());
    EXPECT_NEAR(a.r_vv, b.r_vv, 1e-12 * (1 + b.scale));
    EXPECT_NEAR(a.r_uu, b.r_uu, 1e-12 * (1 + b.scale));
    EXPECT_NEAR(a.r_uv, b.r_uv, 1e-12 * (1 + b.scale));
  }
}

TEST(ResidualsSecondOrder, FrontalParallelForm) {
  const MongePatch2 p{0, 0, 0.7, -0.4, 0.3};
  FlowFrame f;
  f.u = Vec2(0.6, 0.8);
  f.v = perp(f.u);
  f.I = 0.9, f.Iu = 0.5, f.Ivv = -0.3, f.Iuv = 0.2, f.Iuu = -1.1;
  const ShadingResiduals r = residuals_second_order(p, f);
  const Mat2 h = p.hessian();
  EXPECT_NEAR(r.r_vv, f.Ivv + f.I * (h * f.v).squaredNorm(), 1e-15);
  EXPECT_NEAR(r.r_uu, f.Iuu + f.I * (h * f.u).squaredNorm(), 1e-15);
  EXPECT_NEAR(r.r_uv, f.Iuv + f.I * (h * f.v).dot(h * f.u), 1e-15);
}

TEST(ResidualsSecondOrder, ParaboloidUnderOverheadLight) {
  const MongePatch2 p{0, 0, 0.8, 0, 0.3};
  const LightSource up = LightSource::make({0, 0, 1});
  const FlowFrame f = critical_frame(analytic_jet(p.to_cubic(), up, Vec2::Zero()));
  EXPECT_LE(residuals_second_order(p, f).max_abs(), 1e-12);
}

TEST(Residual1D, Examples) {
  EXPECT_EQ(residual_1d({1, 0, -4, 0, 2, 0}), 0.0);
  for (double fxx : {0.5, -1.3, 2.0}) {
    const Jet1D j{0.7, 0, 0.25, 0, fxx, 0.9};
    EXPECT_DOUBLE_EQ(residual_1d(j), j.Ixx + j.I * fxx * fxx);
  }
  try {
    residual_1d({1, 0.2, 0, 0.1, 0, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularFxx);
  }
}

// Render the cubic Taylor patch of the curve (constant in y) in 2D; its
// image jet along x is the 1D jet of the curve.
TEST(Residual1D, VanishesAlongSinCurve) {
  auto f1 = [](double x) { return std::cos(x) - 2 * x + 5 * std::pow(x, 4); };
  auto f2 = [](double x) { return -std::sin(x) - 2 + 20 * std::pow(x, 3); };
  auto f3 = [](double x) { return -std::cos(x) + 60 * x * x; };
  const LightSource l = LightSource::make({-0.2, 0, 1});
  int checked = 0;
  for (double x = -1.0; x <= 0.3; x += 0.01) {
    if (std::abs(f2(x)) < 0.1) continue;
    const MongePatch3 p{{f1(x), 0, f2(x) / 2, 0, 0, f3(x) / 6, 0, 0, 0}};
    if (lit(p, l, Vec2::Zero()) <= 0) continue;
    const ImageJet2 j = analytic_jet(p, l, Vec2::Zero());
    const Jet1D j1{j.I, j.Ix, j.Ixx, f1(x), f2(x), f3(x)};
    EXPECT_LE(std::abs(residual_1d(j1)), 1e-8) << x;
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(ResidualsCriticalPoint, Examples) {
  MongePatch3 bowl;
  bowl.c[2] = 0.6, bowl.c[4] = -0.9;
  const LightSource up = LightSource::make({0, 0, 1});
  const ImageJet2 j = analytic_jet(bowl, up, Vec2::Zero());
  const FlowFrame f = critical_frame(j);
  const ShadingResiduals r = residuals_critical_point(bowl, j, Vec2::Zero());
  EXPECT_NEAR(f.Ivv, -f.I * (bowl.hessian(Vec2::Zero()) * f.v).squaredNorm(), 1e-14);
  EXPECT_LE(r.max_abs(), 1e-14);

  const ShadingResiduals flat = residuals_critical_point(MongePatch3{}, analytic_jet(MongePatch3{}, up, Vec2::Zero()),
                                                         Vec2::Zero());
  EXPECT_EQ(flat.max_abs(), 0);

  const LightSource side = LightSource::make({0.3, 0, 1});
  try {
    residuals_critical_point(bowl, analytic_jet(bowl, side, Vec2(0.1, 0)), Vec2(0.1, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonCriticalPoint);
  }
}

// Approaching a gradient zero along a ray, the reduced equations miss only
// the grad-I terms, so their residual shrinks linearly with distance.
TEST(ResidualsCriticalPoint, LimitOfGeometricResiduals) {
  const MongePatch3 p{{0, 0, 0.7, 0.2, 0.4, 0.3, -0.2, 0.15, 0.1}};
  const LightSource up = LightSource::make({0, 0, 1});
  const Vec2 dir = Vec2(0.8, 0.6);
  double prev = 0;
  for (double t = 1e-2; t > 1e-4; t /= 2) {
    const Vec2 q = t * dir;
    const ImageJet2 j = analytic_jet(p, up, q);
    const FlowFrame f = frame_from_jet(j);
    EXPECT_LE(residuals_geometric(p, f, q).max_normalized(), 1e-10);
    const double r = residuals_critical_point(p, f, q, 1.0).max_abs();
    EXPECT_GT(r, 0);
    if (prev > 0) {
      EXPECT_NEAR(prev / r, 2.0, 0.05) << t;
    }
    prev = r;
  }
}
