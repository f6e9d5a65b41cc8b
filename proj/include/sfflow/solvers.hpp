#pragma once

// Inversion of the shading equations for second-order patches: the
// frontal-parallel four-fold solution, root finding over tangent planes,
// the reduced problem at gradient zeros, and emergent light sources.

#include "sfflow/shading_eqs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sff {

// ---------------------------------------------------------------------------
// Emergent light

/// Brightness observations on a known surface. Each sample contributes
/// I = (rho L).N and, when present, grad I = (rho L).d(N)(e_i).
struct LightSample {
  Vec2 point = Vec2::Zero();
  double I = 0;
  std::optional<Vec2> gradient;
};

struct LightRecovery {
  LightSource light;
  double residual = 0;  // |A (rho L) - b|
  double condition = 0;
};

inline constexpr double kMaxLightCondition = 1e8;

/// Least-squares rho L from the samples; the direction is rho L / |rho L|.
inline LightRecovery recover_light(const MongePatch3& patch, std::span<const LightSample> samples) {
  std::vector<Vec3> rows;
  std::vector<double> rhs;
  for (const auto& s : samples) {
    const SurfaceFrame f = surface_frame(patch, s.point);
    rows.push_back(f.normal);
    rhs.push_back(s.I);
    if (s.gradient) {
      rows.push_back(f.ambient(f.normal_derivative(Vec2::UnitX())));
      rows.push_back(f.ambient(f.normal_derivative(Vec2::UnitY())));
      rhs.push_back(s.gradient->x());
      rhs.push_back(s.gradient->y());
    }
  }
  if (rows.size() < 3) throw Error(ErrorCode::InvalidArgument, "need at least three brightness constraints");
  Eigen::MatrixXd a(rows.size(), 3);
  Eigen::VectorXd b(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    a.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    b(static_cast<Eigen::Index>(i)) = rhs[i];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cond = sv(2) > 0 ? sv(0) / sv(2) : std::numeric_limits<double>::infinity();
  if (!(cond <= kMaxLightCondition))
    throw Error(ErrorCode::RankDeficient, "surface normals do not determine the light");
  const Vec3 rl = svd.solve(b);
  if (!(rl.norm() > 0)) throw Error(ErrorCode::RankDeficient, "recovered light vanishes");
  LightRecovery out;
  out.light = LightSource{rl.normalized(), rl.norm()};
  out.residual = (a * rl - b).norm();
  out.condition = cond;
  return out;
}

/// Light reproducing I and grad I of the frame on a second-order patch whose
/// origin sits at the frame's point.
inline std::optional<LightSource> emergent_light(const MongePatch2& patch, const FlowFrame& frame) {
  const LightSample s{Vec2::Zero(), frame.I, frame.gradient()};
  try {
    return recover_light(patch.to_cubic(), std::span<const LightSample>(&s, 1)).light;
  } catch (const Error&) {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Classification

enum class PatchClass { Convex, Concave, SaddlePositive, SaddleNegative, Parabolic };

inline const char* to_string(PatchClass c) {
  switch (c) {
    case PatchClass::Convex: return "convex";
    case PatchClass::Concave: return "concave";
    case PatchClass::SaddlePositive: return "saddle-positive";
    case PatchClass::SaddleNegative: return "saddle-negative";
    case PatchClass::Parabolic: return "parabolic";
  }
  return "unknown";
}

inline std::optional<PatchClass> patch_class_from_string(const std::string& s) {
  for (auto c : {PatchClass::Convex, PatchClass::Concave, PatchClass::SaddlePositive, PatchClass::SaddleNegative,
                 PatchClass::Parabolic})
    if (s == to_string(c)) return c;
  return std::nullopt;
}

/// Principal curvatures: eigenvalues of dN at the origin, ordered by
/// decreasing magnitude.
inline std::array<double, 2> principal_curvatures(const MongePatch2& patch) {
  const SurfaceFrame f = surface_frame(patch.to_cubic(), Vec2::Zero());
  // dN = G^-1 II is self-adjoint in G; its eigenvalues are those of the
  // symmetric G^-1/2 II G^-1/2.
  Eigen::SelfAdjointEigenSolver<Mat2> gs(f.metric);
  const Mat2 isqrt = gs.operatorInverseSqrt();
  Eigen::SelfAdjointEigenSolver<Mat2> es(isqrt * f.second_form * isqrt);
  double k1 = es.eigenvalues()(0), k2 = es.eigenvalues()(1);
  if (std::abs(k2) > std::abs(k1)) std::swap(k1, k2);
  return {k1, k2};
}

/// With the normal facing the viewer, dN > 0 is a bowl opening toward the
/// viewer (concave) and dN < 0 a cap (convex). Saddles are labelled by the
/// sign of the larger-magnitude curvature.
inline PatchClass classify(const MongePatch2& patch, double zero_rel = 1e-8) {
  const auto k = principal_curvatures(patch);
  const double scale = std::abs(k[0]);
  if (scale == 0 || std::abs(k[1]) < zero_rel * scale) return PatchClass::Parabolic;
  if (k[0] > 0 && k[1] > 0) return PatchClass::Concave;
  if (k[0] < 0 && k[1] < 0) return PatchClass::Convex;
  return k[0] > 0 ? PatchClass::SaddlePositive : PatchClass::SaddleNegative;
}

inline double gaussian_sign(PatchClass c) {
  switch (c) {
    case PatchClass::Convex:
    case PatchClass::Concave: return 1;
    case PatchClass::SaddlePositive:
    case PatchClass::SaddleNegative: return -1;
    default: return 0;
  }
}

// ---------------------------------------------------------------------------
// Solution sets

struct PatchSolution {
  MongePatch2 patch;
  PatchClass classification = PatchClass::Parabolic;
  std::optional<LightSource> light;
  double residual = 0;
  bool near_boundary = false;
};

struct PatchSolutionSet {
  Vec2 tangent_plane = Vec2::Zero();
  std::vector<PatchSolution> solutions;
  double residual_bound = 0;
  bool degenerate = false;  // continuum, coincident or multiple roots

  bool boundary_warning() const {
    return std::any_of(solutions.begin(), solutions.end(), [](const auto& s) { return s.near_boundary; });
  }
};

namespace detail {

inline void finalize(PatchSolutionSet& set) {
  set.residual_bound = 0;
  for (auto& s : set.solutions) {
    s.classification = classify(s.patch);
    set.residual_bound = std::max(set.residual_bound, s.residual);
  }
}

// Expresses a Hessian given in the {v, u} basis in image coordinates.
inline Mat2 from_frame_basis(const Mat2& h_vu, const FlowFrame& frame) {
  Mat2 r;
  r.col(0) = frame.v;
  r.col(1) = frame.u;
  return r * h_vu * r.transpose();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Frontal-parallel tangent plane

/// Normalised second derivatives: q1 = -Ivv/I, q2 = -Iuu/I, q3 = -Iuv/I.
struct QuadricTriple {
  double q1 = 0, q2 = 0, q3 = 0;

  static QuadricTriple from_frame(const FlowFrame& f) { return {-f.Ivv / f.I, -f.Iuu / f.I, -f.Iuv / f.I}; }
};

namespace detail {

// Newton polish of (x, y, z) on x^2+y^2 = q1, z^2+y^2 = q2, (x+z) y = q3.
inline Vec3 polish_frontal(Vec3 s, const QuadricTriple& q) {
  for (int it = 0; it < 8; ++it) {
    const double x = s(0), y = s(1), z = s(2);
    const Vec3 r(x * x + y * y - q.q1, z * z + y * y - q.q2, (x + z) * y - q.q3);
    Mat3 j;
    j << 2 * x, 2 * y, 0, 0, 2 * y, 2 * z, y, x + z, y;
    Eigen::FullPivLU<Mat3> lu(j);
    if (!lu.isInvertible()) break;
    const Vec3 step = lu.solve(r);
    s -= step;
    if (step.norm() <= 1e-16 * (1 + s.norm())) break;
  }
  return s;
}

inline double frontal_residual(const Vec3& s, const QuadricTriple& q) {
  const double x = s(0), y = s(1), z = s(2);
  return std::max({std::abs(x * x + y * y - q.q1), std::abs(z * z + y * y - q.q2), std::abs((x + z) * y - q.q3)});
}

}  // namespace detail

/// All real (f_vv, f_uv, f_uu) with f_vv^2 + f_uv^2 = q1, f_uu^2 + f_uv^2 = q2
/// and (f_vv + f_uu) f_uv = q3. Eliminating gives a quadratic in s = f_uv^2,
///   ((q1-q2)^2 + 4 q3^2) s^2 - 2 q3^2 (q1+q2) s + q3^4 = 0,
/// and the signs of f_vv, f_uu are enumerated. Patches are returned in the
/// frame basis: x along v, y along u.
inline PatchSolutionSet solve_frontal_parallel(const QuadricTriple& q, double tolerance = 1e-9) {
  const double scale = std::max({std::abs(q.q1), std::abs(q.q2), std::abs(q.q3), 1e-300});
  const double tol = tolerance * scale;
  if (q.q1 < -tol || q.q2 < -tol) throw Error(ErrorCode::Inconsistent, "q1 and q2 must be non-negative");
  const double q1 = std::max(q.q1, 0.0), q2 = std::max(q.q2, 0.0), q3 = q.q3;
  const double disc = q1 * q2 - q3 * q3;
  if (disc < -tol * scale) throw Error(ErrorCode::Inconsistent, "q1 q2 < q3^2: no real Hessian");
  const double root = std::sqrt(std::max(disc, 0.0));

  PatchSolutionSet set;
  std::vector<double> ys2;
  const double den = (q1 - q2) * (q1 - q2) + 4 * q3 * q3;
  if (den <= tol * tol) {
    // q1 = q2, q3 = 0: f_uv = 0 plus the circle f_vv = -f_uu. Only the
    // axis-aligned representatives are reported.
    set.degenerate = true;
    ys2.push_back(0.0);
  } else {
    const double sum = q1 + q2;
    ys2.push_back(q3 * q3 / (sum + 2 * root));
    ys2.push_back(q3 * q3 * (sum + 2 * root) / den);
  }

  std::vector<Vec3> found;
  for (double s2 : ys2) {
    s2 = std::clamp(s2, 0.0, std::min(q1, q2));
    const double y0 = std::sqrt(s2), x0 = std::sqrt(std::max(q1 - s2, 0.0)), z0 = std::sqrt(std::max(q2 - s2, 0.0));
    for (double sy : {1.0, -1.0})
      for (double sx : {1.0, -1.0})
        for (double sz : {1.0, -1.0}) {
          Vec3 cand(sx * x0, sy * y0, sz * z0);
          if (std::abs((cand(0) + cand(2)) * cand(1) - q3) > 1e3 * tol + 1e-12 * scale) continue;
          cand = detail::polish_frontal(cand, q);
          if (detail::frontal_residual(cand, q) > tol) continue;
          const bool dup = std::any_of(found.begin(), found.end(), [&](const Vec3& f) {
            return (f - cand).norm() <= 1e-7 * std::sqrt(scale);
          });
          if (dup) {
            // Sign flips of a vanishing x or z give coincident roots.
            if (std::min(x0, z0) <= 1e-7 * std::sqrt(scale)) set.degenerate = true;
            continue;
          }
          found.push_back(cand);
        }
  }
  if (found.empty()) throw Error(ErrorCode::Inconsistent, "no real solution within tolerance");
  for (const Vec3& f : found) {
    PatchSolution sol;
    sol.patch = MongePatch2{0, 0, f(0) / 2, f(1), f(2) / 2};
    sol.residual = detail::frontal_residual(f, q) / scale;
    set.solutions.push_back(sol);
  }
  detail::finalize(set);
  return set;
}

/// Frontal solutions for a measured frame, rotated into image coordinates
/// and paired with the light that reproduces I and grad I.
inline PatchSolutionSet solve_frontal_parallel(const FlowFrame& frame, double tolerance = 1e-9) {
  PatchSolutionSet set = solve_frontal_parallel(QuadricTriple::from_frame(frame), tolerance);
  for (auto& s : set.solutions) {
    s.patch = MongePatch2::from_hessian(Vec2::Zero(), detail::from_frame_basis(s.patch.hessian(), frame));
    s.light = emergent_light(s.patch, frame);
  }
  detail::finalize(set);
  return set;
}

// ---------------------------------------------------------------------------
// General second-order patch at a chosen tangent plane

/// g(c, d, e): the three second-order residuals for fixed slope (a, b),
/// quadratic in (c, d, e), with an exact Jacobian.
class SecondOrderSystem {
 public:
  SecondOrderSystem(const FlowFrame& frame, const Vec2& slope)
      : f_(frame.normalized()), p_(slope) {
    w2_ = 1 + p_.squaredNorm();
    ginv_ = (Mat2::Identity() + p_ * p_.transpose()).inverse();
    // Each g_i is an exact quadratic: g_i(z) = k_i + l_i.z + z^T Q_i z.
    // Recover the coefficients by polarisation for cheap seeding iterations.
    const Vec3 g0 = eval(Vec3::Zero());
    std::array<Vec3, 3> gp, gm;
    for (int k = 0; k < 3; ++k) {
      gp[k] = eval(Vec3::Unit(k));
      gm[k] = eval(-Vec3::Unit(k));
    }
    for (int i = 0; i < 3; ++i) {
      k_(i) = g0(i);
      for (int k = 0; k < 3; ++k) {
        l_(i, k) = 0.5 * (gp[k](i) - gm[k](i));
        q_[i](k, k) = 0.5 * (gp[k](i) + gm[k](i)) - g0(i);
      }
    }
    for (int k = 0; k < 3; ++k)
      for (int m = k + 1; m < 3; ++m) {
        const Vec3 gkm = eval(Vec3::Unit(k) + Vec3::Unit(m));
        for (int i = 0; i < 3; ++i) q_[i](k, m) = q_[i](m, k) = 0.5 * (gkm(i) - gp[k](i) - gp[m](i) + g0(i));
      }
  }

  static Mat2 hessian(const Vec3& z) {
    Mat2 h;
    h << 2 * z(0), z(1), z(1), 2 * z(2);
    return h;
  }

  Vec3 eval(const Vec3& z) const {
    const Mat2 h = hessian(z);
    const Vec2 hv = h * f_.v, hu = h * f_.u;
    return {f_.Ivv + f_.I * hv.dot(ginv_ * hv) / w2_,
            f_.Iuu + f_.I * hu.dot(ginv_ * hu) / w2_ + 2 * f_.Iu * p_.dot(hu) / w2_,
            f_.Iuv + f_.I * hv.dot(ginv_ * hu) / w2_ + f_.Iu * p_.dot(hv) / w2_};
  }

  Mat3 jacobian(const Vec3& z) const {
    const Mat2 h = hessian(z);
    const Vec2 hv = h * f_.v, hu = h * f_.u;
    Mat3 j;
    for (int k = 0; k < 3; ++k) {
      Mat2 dh = Mat2::Zero();
      if (k == 0) dh(0, 0) = 2;
      if (k == 1) dh(0, 1) = dh(1, 0) = 1;
      if (k == 2) dh(1, 1) = 2;
      const Vec2 dv = dh * f_.v, du = dh * f_.u;
      j(0, k) = 2 * f_.I * dv.dot(ginv_ * hv) / w2_;
      j(1, k) = 2 * f_.I * du.dot(ginv_ * hu) / w2_ + 2 * f_.Iu * p_.dot(du) / w2_;
      j(2, k) = f_.I * (dv.dot(ginv_ * hu) + hv.dot(ginv_ * du)) / w2_ + f_.Iu * p_.dot(dv) / w2_;
    }
    return j;
  }

  /// Largest magnitude among the frame entries; residuals are judged
  /// relative to it.
  double scale() const {
    return std::max({1.0, std::abs(f_.Iu), std::abs(f_.Ivv), std::abs(f_.Iuu), std::abs(f_.Iuv)});
  }

  Vec3 eval_quadratic(const Vec3& z) const {
    return k_ + l_ * z + Vec3(z.dot(q_[0] * z), z.dot(q_[1] * z), z.dot(q_[2] * z));
  }

  Mat3 jacobian_quadratic(const Vec3& z) const {
    Mat3 j = l_;
    for (int i = 0; i < 3; ++i) j.row(i) += 2 * (q_[i] * z).transpose();
    return j;
  }

  /// Damped Newton from `z`. Returns the converged point or nullopt. The
  /// polarised quadratic drives the iteration; the last steps use the direct
  /// evaluation so the result is accurate to rounding.
  std::optional<Vec3> newton(Vec3 z, int max_iter, double divergence_bound) const {
    const auto fast = newton_impl(z, max_iter, divergence_bound, true);
    if (!fast) return std::nullopt;
    return newton_impl(*fast, 4, divergence_bound, false);
  }

 private:
  std::optional<Vec3> newton_impl(Vec3 z, int max_iter, double divergence_bound, bool quadratic) const {
    auto g = [&](const Vec3& x) { return quadratic ? eval_quadratic(x) : eval(x); };
    const double stop = 1e-16 * scale();
    Vec3 r = g(z);
    double rn = r.norm();
    for (int it = 0; it < max_iter && rn > stop; ++it) {
      Eigen::PartialPivLU<Mat3> lu(quadratic ? jacobian_quadratic(z) : jacobian(z));
      if (!(std::abs(lu.determinant()) > 1e-300)) return std::nullopt;
      const Vec3 step = lu.solve(-r);
      if (!step.allFinite()) return std::nullopt;
      double t = 1.0;
      Vec3 zn = z + step;
      Vec3 rnew = g(zn);
      while (rnew.norm() > rn && t > 1.0 / 64) {
        t *= 0.5;
        zn = z + t * step;
        rnew = g(zn);
      }
      // No descent along the Newton direction: a local minimum of |g|.
      if (rnew.norm() > rn) return quadratic ? std::nullopt : std::optional<Vec3>(z);
      z = zn;
      r = rnew;
      rn = r.norm();
      if (z.lpNorm<Eigen::Infinity>() > divergence_bound) return std::nullopt;
      if (t * step.norm() <= 1e-15 * (1 + z.norm())) break;
    }
    return z;
  }

  FlowFrame f_;
  Vec2 p_;
  double w2_ = 1;
  Mat2 ginv_;
  Vec3 k_ = Vec3::Zero();
  Mat3 l_ = Mat3::Zero();
  std::array<Mat3, 3> q_{Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};
};

struct SecondOrderOptions {
  double box = 10.0;       // search (c, d, e) in [-box, box]^3
  int seeds_per_axis = 17;
  double tolerance = 1e-10;  // |g| relative to the frame scale
  double merge_rel = 1e-6;   // merge roots closer than merge_rel * box
  int max_iterations = 40;
};

/// All real (c, d, e) in the box for the fixed tangent plane. An empty set
/// means the tangent plane admits no second-order patch.
inline PatchSolutionSet solve_second_order(const FlowFrame& frame, const Vec2& tangent_plane,
                                           const SecondOrderOptions& opt = {}) {
  if (!(frame.I > 0)) throw Error(ErrorCode::InvalidArgument, "intensity must be positive");
  const SecondOrderSystem sys(frame, tangent_plane);
  const double tol = opt.tolerance * sys.scale();
  const int n = std::max(opt.seeds_per_axis, 2);
  const double step = 2 * opt.box / (n - 1);
  std::vector<Vec3> roots;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const Vec3 seed(-opt.box + i * step, -opt.box + j * step, -opt.box + k * step);
        const auto z = sys.newton(seed, opt.max_iterations, 100 * opt.box);
        if (!z || sys.eval(*z).norm() > tol) continue;
        if (z->lpNorm<Eigen::Infinity>() > opt.box * (1 + 1e-9)) continue;
        const bool dup = std::any_of(roots.begin(), roots.end(), [&](const Vec3& r) {
          return (r - *z).norm() <= opt.merge_rel * opt.box;
        });
        if (!dup) roots.push_back(*z);
      }
  PatchSolutionSet set;
  // A singular Jacobian marks a multiple root (a fold, or H = 0 for a
  // featureless frame).
  for (const Vec3& z : roots) {
    Eigen::JacobiSVD<Mat3> svd(sys.jacobian(z));
    if (svd.singularValues()(2) <= 1e-6 * std::max(svd.singularValues()(0), sys.scale())) set.degenerate = true;
  }
  std::sort(roots.begin(), roots.end(), [](const Vec3& a, const Vec3& b) {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  });
  set.tangent_plane = tangent_plane;
  for (const Vec3& z : roots) {
    PatchSolution s;
    s.patch = MongePatch2{tangent_plane.x(), tangent_plane.y(), z(0), z(1), z(2)};
    s.residual = sys.eval(z).norm() / sys.scale();
    s.light = emergent_light(s.patch, frame);
    s.near_boundary = z.lpNorm<Eigen::Infinity>() >= 0.99 * opt.box;
    set.solutions.push_back(s);
  }
  detail::finalize(set);
  return set;
}

// ---------------------------------------------------------------------------
// Tangent-plane sweep

struct SweepGrid {
  double a_min = -1.5, a_max = 1.5;
  double b_min = -1.5, b_max = 1.5;
  int a_count = 21, b_count = 21;

  double a_at(int i) const { return a_count == 1 ? a_min : a_min + (a_max - a_min) * i / (a_count - 1); }
  double b_at(int j) const { return b_count == 1 ? b_min : b_min + (b_max - b_min) * j / (b_count - 1); }
};

struct SweepResult {
  SweepGrid grid;
  std::vector<PatchSolutionSet> cells;  // index j * a_count + i (a fastest)
  // Bounding box {a_min, a_max, b_min, b_max} of cells without solutions,
  // recorded as observed.
  std::optional<std::array<double, 4>> empty_region;

  const PatchSolutionSet& cell(int i, int j) const { return cells[static_cast<std::size_t>(j) * grid.a_count + i]; }
};

inline SweepResult sweep_tangent_planes(const FlowFrame& frame, const SweepGrid& grid,
                                        const SecondOrderOptions& opt = {}) {
  if (grid.a_count < 1 || grid.b_count < 1) throw Error(ErrorCode::InvalidArgument, "empty sweep grid");
  SweepResult out;
  out.grid = grid;
  out.cells.reserve(static_cast<std::size_t>(grid.a_count) * grid.b_count);
  for (int j = 0; j < grid.b_count; ++j)
    for (int i = 0; i < grid.a_count; ++i) {
      const Vec2 ab(grid.a_at(i), grid.b_at(j));
      out.cells.push_back(solve_second_order(frame, ab, opt));
      if (out.cells.back().solutions.empty()) {
        if (!out.empty_region) {
          out.empty_region = std::array<double, 4>{ab.x(), ab.x(), ab.y(), ab.y()};
        } else {
          auto& r = *out.empty_region;
          r[0] = std::min(r[0], ab.x()), r[1] = std::max(r[1], ab.x());
          r[2] = std::min(r[2], ab.y()), r[3] = std::max(r[3], ab.y());
        }
      }
    }
  return out;
}

/// Continues one root of the second-order system from `start` to the
/// tangent plane `target` in small steps. Returns nullopt if the branch is
/// lost (fold or divergence).
inline std::optional<MongePatch2> continue_root(const FlowFrame& frame, const MongePatch2& start, const Vec2& target,
                                                int steps = 16) {
  Vec3 z(start.c, start.d, start.e);
  const Vec2 from = start.slope();
  for (int k = 1; k <= steps; ++k) {
    const Vec2 ab = from + (target - from) * (static_cast<double>(k) / steps);
    const SecondOrderSystem sys(frame, ab);
    const auto next = sys.newton(z, 40, 1e6);
    if (!next || sys.eval(*next).norm() > 1e-10 * sys.scale() || (*next - z).norm() > 0.5 * (1 + z.norm()))
      return std::nullopt;
    z = *next;
  }
  return MongePatch2{target.x(), target.y(), z(0), z(1), z(2)};
}

struct LightMatch {
  PatchSolution solution;
  double angle = 0;  // radians between emergent light and target
};

/// Moves the tangent plane of a solution branch until its emergent light
/// points along `target` (Gauss-Newton on the two angular coordinates).
inline std::optional<LightMatch> match_emergent_light(const FlowFrame& frame, const PatchSolution& seed,
                                                      const Vec3& target, int max_iter = 50) {
  const Vec3 t = target.normalized();
  // Orthonormal basis of the plane perpendicular to t.
  const Vec3 e1 = t.unitOrthogonal();
  const Vec3 e2 = t.cross(e1);
  auto light_of = [&](const MongePatch2& p) -> std::optional<Vec3> {
    auto l = emergent_light(p, frame);
    if (!l) return std::nullopt;
    return l->direction;
  };
  auto err = [&](const Vec3& l) { return Vec2(l.dot(e1), l.dot(e2)); };
  MongePatch2 cur = seed.patch;
  auto lcur = light_of(cur);
  if (!lcur) return std::nullopt;
  for (int it = 0; it < max_iter; ++it) {
    const Vec2 e = err(*lcur);
    if (e.norm() < 1e-13 && lcur->dot(t) > 0) break;
    const double h = 1e-6;
    Mat2 jac;
    bool ok = true;
    for (int k = 0; k < 2 && ok; ++k) {
      Vec2 ab = cur.slope();
      ab(k) += h;
      const auto moved = continue_root(frame, cur, ab, 1);
      const auto lm = moved ? light_of(*moved) : std::nullopt;
      if (!lm) {
        ok = false;
        break;
      }
      jac.col(k) = (err(*lm) - e) / h;
    }
    if (!ok || std::abs(jac.determinant()) < 1e-300) return std::nullopt;
    Vec2 step = -jac.inverse() * e;
    if (step.norm() > 0.25) step *= 0.25 / step.norm();
    std::optional<MongePatch2> next;
    for (int tries = 0; tries < 12 && !next; ++tries) {
      next = continue_root(frame, cur, cur.slope() + step, 8);
      if (next) {
        const auto ln = light_of(*next);
        if (!ln || err(*ln).norm() > e.norm()) next.reset();
      }
      if (!next) step *= 0.5;
    }
    if (!next) break;
    cur = *next;
    lcur = light_of(cur);
  }
  LightMatch m;
  m.solution.patch = cur;
  m.solution.classification = classify(cur);
  m.solution.light = emergent_light(cur, frame);
  m.solution.residual = SecondOrderSystem(frame, cur.slope()).eval({cur.c, cur.d, cur.e}).norm();
  if (!m.solution.light) return std::nullopt;
  m.angle = std::acos(std::clamp(m.solution.light->direction.dot(t), -1.0, 1.0));
  return m;
}

// ---------------------------------------------------------------------------
// Gradient zeros

/// At grad I = 0 the equations reduce to II G^-1 II = -Hess(I)/I for any
/// surface. For a chosen tangent plane, with S = G^1/2 and
/// B = S^-1 II S^-1, this is B^2 = S^-1 Q S^-1: the solutions are the four
/// signed square roots of a positive semidefinite matrix.
inline PatchSolutionSet solve_critical_point(const ImageJet2& jet, const Vec2& tangent_plane,
                                             double eps_c_rel = kDefaultCriticalEps, double tolerance = 1e-9) {
  if (!(jet.I > 0)) throw Error(ErrorCode::InvalidArgument, "intensity must be positive");
  if (jet.gradient().norm() > eps_c_rel * jet.I)
    throw Error(ErrorCode::NonCriticalPoint, "|grad I| exceeds the critical-point threshold");
  const Mat2 q = -jet.hessian() / jet.I;
  const Vec2 p = tangent_plane;
  const double w = std::sqrt(1 + p.squaredNorm());
  const Mat2 g = Mat2::Identity() + p * p.transpose();
  Eigen::SelfAdjointEigenSolver<Mat2> gs(g);
  const Mat2 s = gs.operatorSqrt(), sinv = gs.operatorInverseSqrt();
  Mat2 m = sinv * q * sinv;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat2> es(m);
  const Vec2 mu = es.eigenvalues();
  const double scale = std::max(std::abs(mu(0)), std::abs(mu(1)));
  if (mu(0) < -tolerance * std::max(scale, 1e-300))
    throw Error(ErrorCode::Inconsistent, "-Hess(I)/I is not positive semidefinite");
  const Vec2 root(std::sqrt(std::max(mu(0), 0.0)), std::sqrt(std::max(mu(1), 0.0)));
  const Mat2 vecs = es.eigenvectors();

  PatchSolutionSet set;
  set.tangent_plane = tangent_plane;
  std::vector<Mat2> seen;
  for (double s1 : {1.0, -1.0})
    for (double s2 : {1.0, -1.0}) {
      const Mat2 b = vecs * Vec2(s1 * root(0), s2 * root(1)).asDiagonal() * vecs.transpose();
      const Mat2 ii = s * b * s;
      const Mat2 h = w * ii;
      const bool dup = std::any_of(seen.begin(), seen.end(), [&](const Mat2& o) {
        return (o - h).norm() <= 1e-9 * std::max(h.norm(), 1e-300);
      });
      if (dup) {
        set.degenerate = true;
        continue;
      }
      seen.push_back(h);
      PatchSolution sol;
      sol.patch = MongePatch2::from_hessian(p, h);
      const Mat2 pred = ii * g.inverse() * ii;
      sol.residual = (pred - q).norm() / std::max(q.norm(), 1e-300);
      const LightSample ls{Vec2::Zero(), jet.I, jet.gradient()};
      try {
        sol.light = recover_light(sol.patch.to_cubic(), std::span<const LightSample>(&ls, 1)).light;
      } catch (const Error&) {
      }
      set.solutions.push_back(sol);
    }
  detail::finalize(set);
  return set;
}

}  // namespace sff
