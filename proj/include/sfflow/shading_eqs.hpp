#pragma once

// Residuals of the light-source-free second-order shading equations.
//
// In the frame {u, v} (u along grad I, v along the isophote) a Lambertian
// image of a smooth Monge patch satisfies, for any light direction,
//
//   Ivv = -I |dN v|^2                                    + grad I . H^-1 (v[H] v)
//   Iuu = -I |dN u|^2      - 2 |grad I| / W <grad f, dN u> + grad I . H^-1 (u[H] u)
//   Iuv = -I <dN v, dN u>  -   |grad I| / W <grad f, dN v> + grad I . H^-1 (u[H] v)
//
// with dN = G^-1 II, W = sqrt(1 + |grad f|^2) and inner products taken in the
// metric G. Each residual below is LHS - RHS.

#include "sfflow/flow.hpp"
#include "sfflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>

namespace sff {

struct ShadingResiduals {
  double r_vv = 0, r_uu = 0, r_uv = 0;
  double scale = 0;  // largest |term| over the three equations

  double max_abs() const { return std::max({std::abs(r_vv), std::abs(r_uu), std::abs(r_uv)}); }

  ShadingResiduals normalized() const {
    ShadingResiduals n = *this;
    if (scale > 0) {
      n.r_vv /= scale, n.r_uu /= scale, n.r_uv /= scale;
    }
    n.scale = 1.0;
    return n;
  }

  double max_normalized() const { return scale > 0 ? max_abs() / scale : max_abs(); }
};

inline constexpr double kDefaultHessianEps = 1e-9;
inline constexpr double kDefaultCriticalEps = 1e-6;

namespace detail {

inline double track(double& scale, std::initializer_list<double> terms) {
  for (double t : terms) scale = std::max(scale, std::abs(t));
  return 0;
}

inline Mat2 guarded_inverse(const Mat2& h, double eps_h) {
  const double n2 = h.squaredNorm();
  if (n2 == 0 || std::abs(h.determinant()) <= eps_h * n2)
    throw Error(ErrorCode::SingularHessian, "height Hessian is (nearly) singular");
  return h.inverse();
}

}  // namespace detail

struct ResidualOptions {
  double eps_g = kDefaultGradientEps;
  double eps_h = kDefaultHessianEps;  // relative: |det H| <= eps_h |H|_F^2 is singular
};

/// Theorem form: geometric quantities from the patch at `point`, image
/// derivatives from `frame` (measured at the same point).
inline ShadingResiduals residuals_geometric(const MongePatch3& patch, const FlowFrame& frame, const Vec2& point,
                                            const ResidualOptions& opt = {}) {
  if (!(frame.Iu > opt.eps_g)) throw Error(ErrorCode::DegenerateGradient, "|grad I| below threshold");
  const SurfaceFrame s = surface_frame(patch, point);
  const Mat2 hinv = detail::guarded_inverse(s.hessian, opt.eps_h);
  const Vec2& u = frame.u;
  const Vec2& v = frame.v;
  const Vec2 grad = frame.gradient();
  const Vec2 dnu = s.shape_operator * u, dnv = s.shape_operator * v;
  const double w = s.area_factor();
  const Vec2 gh = hinv.transpose() * grad;  // grad I . H^-1 (.)

  ShadingResiduals r;
  {
    const double t1 = -frame.I * s.inner(dnv, dnv);
    const double t3 = gh.dot(patch.directional_hessian(v) * v);
    r.r_vv = frame.Ivv - (t1 + t3);
    detail::track(r.scale, {frame.Ivv, t1, t3});
  }
  {
    const double t1 = -frame.I * s.inner(dnu, dnu);
    const double t2 = -2 * frame.Iu / w * s.inner(s.slope, dnu);
    const double t3 = gh.dot(patch.directional_hessian(u) * u);
    r.r_uu = frame.Iuu - (t1 + t2 + t3);
    detail::track(r.scale, {frame.Iuu, t1, t2, t3});
  }
  {
    const double t1 = -frame.I * s.inner(dnv, dnu);
    const double t2 = -frame.Iu / w * s.inner(s.slope, dnv);
    const double t3 = gh.dot(patch.directional_hessian(u) * v);
    r.r_uv = frame.Iuv - (t1 + t2 + t3);
    detail::track(r.scale, {frame.Iuv, t1, t2, t3});
  }
  return r;
}

inline ShadingResiduals residuals_geometric(const MongePatch3& patch, const ImageJet2& jet, const Vec2& point,
                                            const ResidualOptions& opt = {}) {
  return residuals_geometric(patch, frame_from_jet(jet, opt.eps_g), point, opt);
}

enum class PdeVariant {
  Corrected,  // re-derived expansion; identical to residuals_geometric
  Legacy,     // older expansion: leading f_ij instead of I_ij, no 1/det H
};

/// The same equations expanded in image coordinates x, y and then rotated
/// into the {u, v} frame of the jet.
inline ShadingResiduals residuals_pde(const MongePatch3& patch, const ImageJet2& jet, const Vec2& point,
                                      PdeVariant variant = PdeVariant::Corrected,
                                      const ResidualOptions& opt = {}) {
  const FlowFrame frame = frame_from_jet(jet, opt.eps_g);
  const Vec2 g = patch.gradient(point);
  const Mat2 h = patch.hessian(point);
  const double fx = g.x(), fy = g.y();
  const double fxx = h(0, 0), fxy = h(0, 1), fyy = h(1, 1);
  const double fxxx = patch.fxxx(), fxxy = patch.fxxy(), fxyy = patch.fxyy(), fyyy = patch.fyyy();
  const double I = jet.I, Ix = jet.Ix, Iy = jet.Iy;
  const double w2 = 1 + fx * fx + fy * fy;
  const double w4 = w2 * w2;
  const bool corrected = variant == PdeVariant::Corrected;
  double det = 1.0;
  if (corrected) {
    detail::guarded_inverse(h, opt.eps_h);
    det = h.determinant();
  }

  double scale = 0;
  // xx
  const double lead_xx = corrected ? jet.Ixx : fxx;
  const double a_xx = ((1 + fx * fx) * fxy * fxy - 2 * fx * fy * fxy * fxx + (1 + fy * fy) * fxx * fxx) / w4 * I;
  const double b_xx = 2 * Ix * (fx * fxx + fy * fxy) / w2;
  const double c_xx = (Ix * (fyy * fxxx - fxy * fxxy) + Iy * (-fxy * fxxx + fxx * fxxy)) / det;
  detail::track(scale, {lead_xx, a_xx, b_xx, c_xx});
  // yy
  const double lead_yy = corrected ? jet.Iyy : fyy;
  const double a_yy = ((1 + fx * fx) * fyy * fyy - 2 * fx * fy * fxy * fyy + (1 + fy * fy) * fxy * fxy) / w4 * I;
  const double b_yy = 2 * Iy * (fx * fxy + fy * fyy) / w2;
  const double c_yy = (Ix * (fyy * fxyy - fxy * fyyy) + Iy * (-fxy * fxyy + fxx * fyyy)) / det;
  detail::track(scale, {lead_yy, a_yy, b_yy, c_yy});
  // xy
  const double lead_xy = corrected ? jet.Ixy : fxy;
  const double a_xy =
      (fxy * (fxx + fyy + fy * fy * fxx + fx * fx * fyy) - fx * fy * (fxy * fxy + fxx * fyy)) / w4 * I;
  const double b_xy = (fx * Iy * fxx + (fx * Ix + fy * Iy) * fxy + fy * Ix * fyy) / w2;
  const double c_xy = (Ix * (fyy * fxxy - fxy * fxyy) + Iy * (-fxy * fxxy + fxx * fxyy)) / det;
  detail::track(scale, {lead_xy, a_xy, b_xy, c_xy});

  Mat2 rxy;
  rxy(0, 0) = lead_xx + a_xx + b_xx - c_xx;
  rxy(1, 1) = lead_yy + a_yy + b_yy - c_yy;
  rxy(0, 1) = rxy(1, 0) = lead_xy + a_xy + b_xy - c_xy;

  ShadingResiduals r;
  r.r_vv = frame.v.dot(rxy * frame.v);
  r.r_uu = frame.u.dot(rxy * frame.u);
  r.r_uv = frame.u.dot(rxy * frame.v);
  r.scale = scale;
  return r;
}

/// Second-order patch evaluated at its origin: the v[H] terms vanish and H^-1
/// is never needed.
inline ShadingResiduals residuals_second_order(const MongePatch2& patch, const FlowFrame& frame) {
  const SurfaceFrame s = surface_frame(patch.to_cubic(), Vec2::Zero());
  const Vec2 dnu = s.shape_operator * frame.u, dnv = s.shape_operator * frame.v;
  const double w = s.area_factor();
  ShadingResiduals r;
  const double vv1 = -frame.I * s.inner(dnv, dnv);
  const double uu1 = -frame.I * s.inner(dnu, dnu);
  const double uu2 = -2 * frame.Iu / w * s.inner(s.slope, dnu);
  const double uv1 = -frame.I * s.inner(dnv, dnu);
  const double uv2 = -frame.Iu / w * s.inner(s.slope, dnv);
  r.r_vv = frame.Ivv - vv1;
  r.r_uu = frame.Iuu - (uu1 + uu2);
  r.r_uv = frame.Iuv - (uv1 + uv2);
  detail::track(r.scale, {frame.Ivv, vv1, frame.Iuu, uu1, uu2, frame.Iuv, uv1, uv2});
  return r;
}

/// Data of the one-dimensional problem: intensity derivatives of I(x) and
/// slope, curvature and third derivative of the curve f(x).
struct Jet1D {
  double I = 0, Ix = 0, Ixx = 0;
  double a = 0, fxx = 0, fxxx = 0;
};

/// Ixx - [ -I fxx^2/(1+a^2)^2 - 2 Ix a fxx/(1+a^2) + Ix fxxx/fxx ].
inline double residual_1d(const Jet1D& j, double eps_fxx = 1e-12) {
  if (!(std::abs(j.fxx) > eps_fxx)) throw Error(ErrorCode::SingularFxx, "f_xx vanishes");
  const double w2 = 1 + j.a * j.a;
  return j.Ixx - (-j.I * j.fxx * j.fxx / (w2 * w2) - 2 * j.Ix * j.a * j.fxx / w2 + j.Ix * j.fxxx / j.fxx);
}

/// Reduced equations at a gradient zero, in a caller-supplied frame:
/// Ivv + I|dN v|^2, Iuu + I|dN u|^2, Iuv + I<dN v, dN u>.
inline ShadingResiduals residuals_critical_point(const MongePatch3& patch, const FlowFrame& frame,
                                                 const Vec2& point, double eps_c_rel = kDefaultCriticalEps) {
  if (frame.Iu > eps_c_rel * std::abs(frame.I))
    throw Error(ErrorCode::NonCriticalPoint, "|grad I| exceeds the critical-point threshold");
  const SurfaceFrame s = surface_frame(patch, point);
  const Vec2 dnu = s.shape_operator * frame.u, dnv = s.shape_operator * frame.v;
  ShadingResiduals r;
  const double vv = frame.I * s.inner(dnv, dnv);
  const double uu = frame.I * s.inner(dnu, dnu);
  const double uv = frame.I * s.inner(dnv, dnu);
  r.r_vv = frame.Ivv + vv;
  r.r_uu = frame.Iuu + uu;
  r.r_uv = frame.Iuv + uv;
  detail::track(r.scale, {frame.Ivv, vv, frame.Iuu, uu, frame.Iuv, uv});
  return r;
}

/// Uses the Hessian-eigenvector frame of the jet.
inline ShadingResiduals residuals_critical_point(const MongePatch3& patch, const ImageJet2& jet, const Vec2& point,
                                                 double eps_c_rel = kDefaultCriticalEps) {
  return residuals_critical_point(patch, critical_frame(jet), point, eps_c_rel);
}

}  // namespace sff
