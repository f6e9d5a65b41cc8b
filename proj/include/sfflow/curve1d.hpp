#pragma once

// One-dimensional reconstruction: a curve z = f(x) under a light in the
// x-z plane. Solving the 1D shading equation for f''' gives
//
//   f''' = f'' (Ixx + I f''^2 / W^4 + 2 Ix f' f'' / W^2) / Ix,   W^2 = 1 + f'^2,
//
// a third-order ODE independent of the light. With f(x0), f(x1) and f'(x0)
// known, the missing f''(x0) is found by shooting.

#include "sfflow/shading_eqs.hpp"

#include <boost/math/interpolators/cardinal_quintic_b_spline.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sff {

/// I, dI/dx, d2I/dx2 at x.
struct Intensity1D {
  std::function<std::array<double, 3>(double)> eval;

  /// Quintic B-spline through uniformly spaced samples starting at x0.
  static Intensity1D from_samples(double x0, double dx, const std::vector<double>& values) {
    if (values.size() < 6 || !(dx > 0)) throw Error(ErrorCode::InvalidArgument, "need at least 6 uniform samples");
    using Spline = boost::math::interpolators::cardinal_quintic_b_spline<double>;
    auto spline = std::make_shared<Spline>(values.data(), values.size(), x0, dx);
    return {[spline](double x) -> std::array<double, 3> {
      return {(*spline)(x), spline->prime(x), spline->double_prime(x)};
    }};
  }
};

/// f, f', f'', f''' at x.
using CurveDerivs = std::function<std::array<double, 4>(double)>;

/// Exact image of a curve lit by rho (lx, lz): I = rho (lz - lx f') / W.
/// With lam(a) = -rho (lx + lz a) / W^3, Ix = lam f'' and
/// Ixx = lam f''' + lam'(a) f''^2.
inline Intensity1D render_curve(CurveDerivs curve, double lx, double lz, double rho = 1.0) {
  const double n = std::hypot(lx, lz);
  if (!(n > 0)) throw Error(ErrorCode::InvalidArgument, "light direction must be nonzero");
  lx /= n, lz /= n;
  return {[curve = std::move(curve), lx, lz, rho](double x) -> std::array<double, 3> {
    const auto d = curve(x);
    const double a = d[1];
    const double w2 = 1 + a * a, w = std::sqrt(w2), w3 = w2 * w, w5 = w3 * w2;
    const double lam = -rho * (lx + lz * a) / w3;
    const double dlam = -rho * (lz / w3 - 3 * a * (lx + lz * a) / w5);
    return {rho * (lz - lx * a) / w, lam * d[2], lam * d[3] + dlam * d[2] * d[2]};
  }};
}

struct BoundaryConditions1D {
  double f0 = 0;       // f(x0)
  double f1 = 0;       // f(x1)
  double slope0 = 0;   // f'(x0)
};

struct Solve1DOptions {
  double tolerance = 1e-10;     // absolute and relative integrator tolerance
  double eps_singular = 1e-6;   // |f''| below this stops the integration
  int grid_points = 401;
  double scan_min = 1e-3;       // |f''(x0)| scanned log-uniformly in [scan_min, scan_max]
  double scan_max = 1e3;
  int scan_count = 61;
  std::optional<std::array<double, 2>> bracket;  // skip the scan
  double anchor_miss = 1e-6;  // accepted |f(x1) - bc.f1| / (1 + |bc.f1|) through a brightness extremum
};

struct Curve1DSolution {
  std::vector<double> x, f, fx, fxx;
  std::vector<double> residual;  // residual_1d along the grid (NaN where not evaluated)
  BoundaryConditions1D bc;
  double curvature0 = 0;         // the recovered f''(x0)
  double max_residual = 0;
  double endpoint_miss = 0;      // |f(x1) - bc.f1| before the endpoint was pinned
  std::optional<double> anchor;  // interior brightness maximum the solution was started from
};

namespace detail {

using State1D = std::array<double, 3>;  // f, f', f''

struct Singularity {
  double x;
};

struct Curve1DSystem {
  const Intensity1D* intensity;
  double eps_singular;

  double third(double x, const State1D& s) const {
    const auto [I, Ix, Ixx] = intensity->eval(x);
    const double a = s[1], fxx = s[2];
    const double w2 = 1 + a * a;
    return fxx * (Ixx + I * fxx * fxx / (w2 * w2) + 2 * Ix * a * fxx / w2) / Ix;
  }

  bool singular(double x, const State1D& s) const {
    const auto v = intensity->eval(x);
    const double iscale = std::max({std::abs(v[0]), 1e-300});
    return !(std::abs(s[2]) >= eps_singular) || !(std::abs(v[1]) > 1e-12 * iscale) || !std::isfinite(s[2]);
  }

  void operator()(const State1D& s, State1D& ds, double x) const {
    ds[0] = s[1];
    ds[1] = s[2];
    ds[2] = third(x, s);
  }
};

// Integrates from x0 to each of `stops` (monotone, either direction).
// Throws Singularity at the first accepted state where the ODE degenerates.
inline std::vector<State1D> integrate_1d(const Curve1DSystem& sys, State1D s, double x0,
                                         const std::vector<double>& stops, double tol) {
  namespace odeint = boost::numeric::odeint;
  auto stepper = odeint::make_controlled(tol, tol, odeint::runge_kutta_dopri5<State1D>());
  std::vector<State1D> out;
  if (stops.empty()) return out;
  out.reserve(stops.size());
  const double dir = stops.back() >= x0 ? 1.0 : -1.0;
  double x = x0;
  double dt = dir * std::abs(stops.back() - x0) / 1000;
  if (sys.singular(x, s)) throw Singularity{x};
  for (double stop : stops) {
    while (dir * (stop - x) > 0) {
      const bool clipped = std::abs(dt) >= std::abs(stop - x);
      double step = clipped ? stop - x : dt;
      int fails = 0;
      while (stepper.try_step(sys, s, x, step) == odeint::fail) {
        if (++fails > 200 || std::abs(step) < 1e-14 * (1 + std::abs(x))) throw Singularity{x};
      }
      // `step` now holds the controller's suggestion for the next step.
      dt = clipped && fails == 0 ? dir * std::max(std::abs(dt), std::abs(step)) : step;
      if (std::abs(stop - x) <= 1e-13 * (1 + std::abs(stop))) x = stop;
      if (sys.singular(x, s)) throw Singularity{x};
    }
    out.push_back(s);
  }
  return out;
}

// Sign-change brackets of `miss` between consecutive samples. Where a
// completed sample neighbours a failed one the edge of the completed region
// is approached by bisection: the target often sits close to it.
template <class Miss>
std::vector<std::array<double, 2>> find_brackets(Miss&& miss, const std::vector<double>& samples) {
  std::vector<std::array<double, 2>> out;
  auto push = [&](double a, double b) { out.push_back({std::min(a, b), std::max(a, b)}); };
  double prev_k = 0;
  std::optional<double> prev_m;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double k = samples[i];
    const std::optional<double> m = miss(k);
    if (i > 0 && m && prev_m) {
      if ((*m <= 0) != (*prev_m <= 0)) push(prev_k, k);
    } else if (i > 0 && (m || prev_m)) {
      double good = m ? k : prev_k, bad = m ? prev_k : k;
      const bool good_sign = (m ? *m : *prev_m) <= 0;
      for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (good + bad);
        const auto mm = miss(mid);
        if (!mm) {
          bad = mid;
        } else if ((*mm <= 0) != good_sign) {
          push(good, mid);
          break;
        } else {
          good = mid;
        }
      }
    }
    prev_k = k;
    prev_m = m;
  }
  return out;
}

// Root of a bracketed miss function; nullopt if the bracket degenerates.
template <class Miss>
std::optional<double> refine_bracket(Miss&& miss, std::array<double, 2> br) {
  const auto mlo = miss(br[0]), mhi = miss(br[1]);
  if (!mlo || !mhi || ((*mlo <= 0) == (*mhi <= 0))) return std::nullopt;
  auto fn = [&](double k) {
    const auto m = miss(k);
    if (!m) throw Singularity{k};
    return *m;
  };
  std::uintmax_t iters = 200;
  try {
    const auto r = boost::math::tools::toms748_solve(fn, br[0], br[1], *mlo, *mhi,
                                                     boost::math::tools::eps_tolerance<double>(52), iters);
    return std::abs(fn(r.first)) <= std::abs(fn(r.second)) ? r.first : r.second;
  } catch (const Singularity&) {
    return std::nullopt;
  }
}

// Interior zeros of Ix, located on the grid and refined.
inline std::vector<double> interior_extrema(const Intensity1D& in, const std::vector<double>& grid) {
  std::vector<double> out;
  double px = grid.front(), pv = in.eval(px)[1];
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double x = grid[i], v = in.eval(x)[1];
    if (v == 0 && i + 1 < grid.size()) {
      out.push_back(x);
    } else if (pv != 0 && v != 0 && (pv < 0) != (v < 0)) {
      std::uintmax_t iters = 200;
      const auto r = boost::math::tools::toms748_solve([&](double t) { return in.eval(t)[1]; }, px, x, pv, v,
                                                       boost::math::tools::eps_tolerance<double>(52), iters);
      out.push_back(0.5 * (r.first + r.second));
    }
    px = x;
    pv = v;
  }
  return out;
}

// Grid states -> solution: residual of the 1D equation with f''' from a
// five-point stencil on the integrated f'', then the endpoints pinned to the
// boundary data.
inline Curve1DSolution assemble(const Intensity1D& in, const std::vector<double>& grid,
                                const std::vector<State1D>& states, const BoundaryConditions1D& bc,
                                double eps_singular) {
  Curve1DSolution sol;
  sol.bc = bc;
  sol.x = grid;
  for (const auto& s : states) {
    sol.f.push_back(s[0]);
    sol.fx.push_back(s[1]);
    sol.fxx.push_back(s[2]);
  }
  sol.curvature0 = sol.fxx.front();
  const std::size_t n = grid.size();
  const double h = (grid.back() - grid.front()) / static_cast<double>(n - 1);
  sol.residual.assign(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 2; i + 2 < n; ++i) {
    const double f3 = (sol.fxx[i - 2] - 8 * sol.fxx[i - 1] + 8 * sol.fxx[i + 1] - sol.fxx[i + 2]) / (12 * h);
    const auto [I, Ix, Ixx] = in.eval(grid[i]);
    const double r = residual_1d({I, Ix, Ixx, sol.fx[i], sol.fxx[i], f3}, eps_singular);
    sol.residual[i] = r;
    sol.max_residual = std::max(sol.max_residual, std::abs(r));
  }
  sol.endpoint_miss = std::abs(sol.f.back() - bc.f1);
  sol.f.front() = bc.f0;
  sol.fx.front() = bc.slope0;
  sol.f.back() = bc.f1;
  return sol;
}

[[noreturn]] inline void throw_singular(double x) {
  throw Error(ErrorCode::SingularityEncountered,
              "f_xx vanished or Ix = 0 during integration at x = " + std::to_string(x));
}

// Shooting on f''(x0) when Ix keeps its sign on the domain.
inline Curve1DSolution solve_shooting(const Curve1DSystem& sys, const std::vector<double>& grid,
                                      const BoundaryConditions1D& bc, const Solve1DOptions& opt) {
  const double x0 = grid.front(), x1 = grid.back();
  std::optional<double> first_singular;
  int completed = 0;
  auto miss = [&](double k) -> std::optional<double> {
    try {
      const double m = integrate_1d(sys, {bc.f0, bc.slope0, k}, x0, {x1}, opt.tolerance).back()[0] - bc.f1;
      ++completed;
      return m;
    } catch (const Singularity& s) {
      if (!first_singular) first_singular = s.x;
      return std::nullopt;
    }
  };

  std::vector<std::array<double, 2>> brackets;
  if (opt.bracket) {
    brackets.push_back({std::min((*opt.bracket)[0], (*opt.bracket)[1]), std::max((*opt.bracket)[0], (*opt.bracket)[1])});
  } else {
    for (int sign : {-1, 1}) {
      std::vector<double> side;
      for (int i = 0; i < opt.scan_count; ++i) {
        const double t = opt.scan_count == 1 ? 0.0 : static_cast<double>(i) / (opt.scan_count - 1);
        side.push_back(sign * opt.scan_min * std::pow(opt.scan_max / opt.scan_min, t));
      }
      const auto found = find_brackets(miss, side);
      brackets.insert(brackets.end(), found.begin(), found.end());
    }
  }
  if (brackets.empty()) {
    if (first_singular && completed == 0) throw_singular(*first_singular);
    throw Error(ErrorCode::NoBracket, "shooting could not bracket f(x1)");
  }

  std::optional<Curve1DSolution> best;
  std::optional<double> singular_at;
  const std::vector<double> stops(grid.begin() + 1, grid.end());
  for (const auto& br : brackets) {
    const auto k = refine_bracket(miss, br);
    if (!k) continue;
    std::vector<State1D> states{{bc.f0, bc.slope0, *k}};
    try {
      const auto rest = integrate_1d(sys, states.front(), x0, stops, opt.tolerance);
      states.insert(states.end(), rest.begin(), rest.end());
    } catch (const Singularity& s) {
      singular_at = s.x;
      continue;
    }
    Curve1DSolution sol = assemble(*sys.intensity, grid, states, bc, opt.eps_singular);
    if (!best || sol.endpoint_miss + sol.max_residual < best->endpoint_miss + best->max_residual)
      best = std::move(sol);
  }
  if (!best) {
    if (singular_at) throw_singular(*singular_at);
    throw Error(ErrorCode::NoBracket, "every bracket degenerated during refinement");
  }
  return *best;
}

// Solution through an interior brightness maximum xs. Ix vanishes there
// while f'' does not, and every solution but one blows up like
// (x - xs)^-2. Regularity fixes f''(xs)^2 = -Ixx W^4 / I and, by
// l'Hopital, f'''(xs) = (f'' Ixxx - 6 I a f''^4 / W^6) / (3 Ixx). The curve
// is integrated outward from xs, where it is stable, and the slope at xs is
// found from f'(x0). The condition f(x1) is then implied by the data and
// only checked.
inline Curve1DSolution solve_anchored(const Curve1DSystem& sys, const std::vector<double>& grid, double xs,
                                      const BoundaryConditions1D& bc, const Solve1DOptions& opt) {
  const Intensity1D& in = *sys.intensity;
  const double x0 = grid.front(), x1 = grid.back();
  const auto [I, Ix, Ixx] = in.eval(xs);
  if (!(Ixx < 0) || !(I > 0)) throw_singular(xs);
  const double hd = 1e-3 * (x1 - x0);
  const double ixxx = (in.eval(xs + hd)[2] - in.eval(xs - hd)[2]) / (2 * hd);
  const double delta = std::min(5e-5 * (x1 - x0), 0.25 * std::min(xs - x0, x1 - xs));

  auto jet = [&](double a, double sign) {
    const double w2 = 1 + a * a;
    const double fxx = sign * w2 * std::sqrt(-Ixx / I);
    const double f3 = (fxx * ixxx - 6 * I * a * std::pow(fxx, 4) / (w2 * w2 * w2)) / (3 * Ixx);
    return std::array<double, 4>{0, a, fxx, f3};
  };
  auto taylor = [](const std::array<double, 4>& j, double t) {
    return State1D{j[0] + j[1] * t + j[2] * t * t / 2 + j[3] * t * t * t / 6, j[1] + j[2] * t + j[3] * t * t / 2,
                   j[2] + j[3] * t};
  };

  std::vector<double> left, right;  // grid points outside the Taylor zone
  for (double x : grid) {
    if (x < xs - delta) left.push_back(x);
    if (x > xs + delta) right.push_back(x);
  }
  std::reverse(left.begin(), left.end());

  std::optional<Curve1DSolution> best;
  for (double sign : {-1.0, 1.0}) {
    auto miss = [&](double theta) -> std::optional<double> {
      const auto j = jet(std::tan(theta), sign);
      try {
        return integrate_1d(sys, taylor(j, -delta), xs - delta, {x0}, opt.tolerance).back()[1] - bc.slope0;
      } catch (const Singularity&) {
        return std::nullopt;
      }
    };
    std::vector<double> thetas;
    for (int i = 0; i < 121; ++i) thetas.push_back(-1.5 + 3.0 * i / 120);
    for (const auto& br : find_brackets(miss, thetas)) {
      const auto theta = refine_bracket(miss, br);
      if (!theta) continue;
      const auto j = jet(std::tan(*theta), sign);
      std::vector<State1D> states(grid.size());
      try {
        const auto l = integrate_1d(sys, taylor(j, -delta), xs - delta, left, opt.tolerance);
        const auto r = integrate_1d(sys, taylor(j, delta), xs + delta, right, opt.tolerance);
        std::size_t il = 0, ir = 0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
          if (grid[i] < xs - delta) {
            states[i] = l[left.size() - 1 - il++];
          } else if (grid[i] > xs + delta) {
            states[i] = r[ir++];
          } else {
            states[i] = taylor(j, grid[i] - xs);
          }
        }
      } catch (const Singularity&) {
        continue;
      }
      const double shift = bc.f0 - states.front()[0];
      for (auto& s : states) s[0] += shift;
      Curve1DSolution sol = assemble(in, grid, states, bc, opt.eps_singular);
      sol.anchor = xs;
      if (!best || sol.endpoint_miss + sol.max_residual < best->endpoint_miss + best->max_residual)
        best = std::move(sol);
    }
  }
  // A regular curve through xs that misses f(x1) means f'' vanishes at xs
  // (an inflection, not a light maximum) or the data are inconsistent.
  if (!best || best->endpoint_miss > opt.anchor_miss * (1 + std::abs(bc.f1))) throw_singular(xs);
  return *best;
}

}  // namespace detail

/// Solves the 1D equation for f on [x0, x1] with f(x0), f(x1), f'(x0) given.
/// Without a brightness extremum inside the domain this is single shooting
/// on f''(x0); both signs are scanned because f'' = 0 is invariant. With one
/// interior extremum the solution is started there instead (see
/// detail::solve_anchored).
inline Curve1DSolution solve_1d(const Intensity1D& intensity, double x0, double x1, const BoundaryConditions1D& bc,
                                const Solve1DOptions& opt = {}) {
  if (!(x1 > x0)) throw Error(ErrorCode::InvalidArgument, "domain must satisfy x0 < x1");
  if (!intensity.eval) throw Error(ErrorCode::InvalidArgument, "intensity callback missing");
  if (opt.grid_points < 5) throw Error(ErrorCode::InvalidArgument, "need at least 5 grid points");
  const detail::Curve1DSystem sys{&intensity, opt.eps_singular};
  std::vector<double> grid;
  for (int i = 0; i < opt.grid_points; ++i) grid.push_back(i == opt.grid_points - 1 ? x1 : x0 + (x1 - x0) * i / (opt.grid_points - 1));

  const std::vector<double> extrema = detail::interior_extrema(intensity, grid);
  if (extrema.size() > 1) detail::throw_singular(extrema[1]);
  if (extrema.size() == 1) return detail::solve_anchored(sys, grid, extrema.front(), bc, opt);
  return detail::solve_shooting(sys, grid, bc, opt);
}

}  // namespace sff
