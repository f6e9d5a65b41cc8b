#pragma once

// Differential geometry of a cubic Monge patch z = f(x, y) seen under
// orthographic projection along -z. All quantities are exact polynomial or
// rational evaluations; nothing here uses finite differences.
//
// Tangent vectors are written in the Monge basis X1 = (1, 0, f_x),
// X2 = (0, 1, f_y), so an image vector w lifts to the tangent vector whose
// coordinates are w itself.

#include "sfflow/types.hpp"

#include <array>
#include <cmath>

namespace sff {

/// f(x,y) = c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2 + c6 x^3 + c7 x^2 y + c8 x y^2 + c9 y^3.
/// Stored zero based: c[0] is c1.
struct MongePatch3 {
  std::array<double, 9> c{};

  double value(const Vec2& q) const {
    const double x = q.x(), y = q.y();
    return c[0] * x + c[1] * y + c[2] * x * x + c[3] * x * y + c[4] * y * y + c[5] * x * x * x +
           c[6] * x * x * y + c[7] * x * y * y + c[8] * y * y * y;
  }

  Vec2 gradient(const Vec2& q) const {
    const double x = q.x(), y = q.y();
    return {c[0] + 2 * c[2] * x + c[3] * y + 3 * c[5] * x * x + 2 * c[6] * x * y + c[7] * y * y,
            c[1] + c[3] * x + 2 * c[4] * y + c[6] * x * x + 2 * c[7] * x * y + 3 * c[8] * y * y};
  }

  Mat2 hessian(const Vec2& q) const {
    const double x = q.x(), y = q.y();
    const double fxx = 2 * c[2] + 6 * c[5] * x + 2 * c[6] * y;
    const double fxy = c[3] + 2 * c[6] * x + 2 * c[7] * y;
    const double fyy = 2 * c[4] + 2 * c[7] * x + 6 * c[8] * y;
    Mat2 h;
    h << fxx, fxy, fxy, fyy;
    return h;
  }

  double fxxx() const { return 6 * c[5]; }
  double fxxy() const { return 2 * c[6]; }
  double fxyy() const { return 2 * c[7]; }
  double fyyy() const { return 6 * c[8]; }

  /// v[H]: the Hessian differentiated along image direction w,
  /// (v[H])_ij = sum_k f_ijk w_k. Constant over the patch.
  Mat2 directional_hessian(const Vec2& w) const {
    Mat2 d;
    d(0, 0) = fxxx() * w.x() + fxxy() * w.y();
    d(0, 1) = fxxy() * w.x() + fxyy() * w.y();
    d(1, 0) = d(0, 1);
    d(1, 1) = fxyy() * w.x() + fyyy() * w.y();
    return d;
  }

  /// Exact re-expansion about q, dropping the constant f(q). The result
  /// describes the same surface in coordinates centred at q.
  MongePatch3 recentered(const Vec2& q) const {
    const Vec2 g = gradient(q);
    const Mat2 h = hessian(q);
    return MongePatch3{{g.x(), g.y(), h(0, 0) / 2, h(0, 1), h(1, 1) / 2, c[5], c[6], c[7], c[8]}};
  }

  bool operator==(const MongePatch3&) const = default;
};

/// f(x,y) = a x + b y + c x^2 + d xy + e y^2.
struct MongePatch2 {
  double a = 0, b = 0, c = 0, d = 0, e = 0;

  MongePatch3 to_cubic() const { return MongePatch3{{a, b, c, d, e, 0, 0, 0, 0}}; }

  static MongePatch2 from_hessian(const Vec2& slope, const Mat2& h) {
    return {slope.x(), slope.y(), h(0, 0) / 2, h(0, 1), h(1, 1) / 2};
  }

  Vec2 slope() const { return {a, b}; }

  Mat2 hessian() const {
    Mat2 h;
    h << 2 * c, d, d, 2 * e;
    return h;
  }

  bool operator==(const MongePatch2&) const = default;
};

/// Cubic Taylor expansion of the cap z = sqrt(r^2 - x^2 - y^2) about (x0, y0),
/// in coordinates centred there. The image jet at the origin of the result
/// equals the jet of the true sphere.
inline MongePatch3 sphere_patch(const Vec2& about, double radius = 1.0) {
  if (!(radius > 0)) throw Error(ErrorCode::InvalidArgument, "radius must be positive");
  const double x = about.x() / radius, y = about.y() / radius;
  const double s2 = 1 - x * x - y * y;
  if (!(s2 > 0)) throw Error(ErrorCode::InvalidArgument, "point lies outside the sphere's silhouette");
  const double s = std::sqrt(s2), s3 = s2 * s, s5 = s3 * s2;
  // Derivatives of the unit cap; order k scales by radius^(1-k).
  const double fx = -x / s, fy = -y / s;
  const double fxx = -(1 - y * y) / s3 / radius, fxy = -x * y / s3 / radius, fyy = -(1 - x * x) / s3 / radius;
  const double r2 = radius * radius;
  const double fxxx = 3 * x * (y * y - 1) / s5 / r2, fxxy = -y * (2 * x * x - y * y + 1) / s5 / r2;
  const double fxyy = x * (x * x - 2 * y * y - 1) / s5 / r2, fyyy = 3 * y * (x * x - 1) / s5 / r2;
  return MongePatch3{{fx, fy, fxx / 2, fxy, fyy / 2, fxxx / 6, fxxy / 2, fxyy / 2, fyyy / 6}};
}

struct LightSource {
  Vec3 direction{0, 0, 1};
  double albedo = 1.0;

  /// Normalizes `dir`; rejects zero vectors and non-positive albedo.
  static LightSource make(const Vec3& dir, double albedo = 1.0) {
    const double n = dir.norm();
    if (!(n > 0) || !std::isfinite(n))
      throw Error(ErrorCode::InvalidArgument, "light direction must be a nonzero finite vector");
    if (!(albedo > 0))
      throw Error(ErrorCode::InvalidArgument, "albedo must be positive");
    return {dir / n, albedo};
  }

  /// rho * L, the quantity that image formation is linear in.
  Vec3 scaled() const { return albedo * direction; }
};

struct SurfaceFrame {
  Vec2 point = Vec2::Zero();
  Vec2 slope = Vec2::Zero();       // grad f
  Vec3 normal{0, 0, 1};            // viewer-facing unit normal
  double n3 = 1.0;                 // normal.z() = 1 / sqrt(1 + |grad f|^2)
  Mat2 metric = Mat2::Identity();  // G = I + grad f grad f^T
  Mat2 second_form = Mat2::Zero(); // II = n3 H
  Mat2 hessian = Mat2::Zero();     // H
  Mat2 shape_operator = Mat2::Zero();  // dN = G^-1 II

  /// sqrt(1 + |grad f|^2) = sqrt(det G).
  double area_factor() const { return 1.0 / n3; }

  /// Ambient 3-vector of tangent coordinates w.
  Vec3 ambient(const Vec2& w) const { return {w.x(), w.y(), slope.dot(w)}; }

  /// Inner product of two tangent vectors given in Monge coordinates.
  double inner(const Vec2& w1, const Vec2& w2) const { return w1.dot(metric * w2); }

  /// Derivative of the unit normal field along the lift of image vector w,
  /// in tangent coordinates. With N facing the viewer this is -dN(w).
  Vec2 normal_derivative(const Vec2& w) const { return -(shape_operator * w); }
};

inline SurfaceFrame surface_frame(const MongePatch3& patch, const Vec2& point) {
  SurfaceFrame s;
  s.point = point;
  s.slope = patch.gradient(point);
  s.hessian = patch.hessian(point);
  const double w = std::sqrt(1.0 + s.slope.squaredNorm());
  s.n3 = 1.0 / w;
  s.normal = Vec3(-s.slope.x(), -s.slope.y(), 1.0) / w;
  s.metric = Mat2::Identity() + s.slope * s.slope.transpose();
  s.second_form = s.n3 * s.hessian;
  s.shape_operator = s.metric.inverse() * s.second_form;
  return s;
}

struct ProjectedLight {
  Vec3 ambient = Vec3::Zero();  // L - (L.N) N
  Vec2 coords = Vec2::Zero();   // same vector in the Monge basis
};

/// Orthogonal projection of the light direction onto the tangent plane.
inline ProjectedLight project_light(const LightSource& light, const SurfaceFrame& frame) {
  ProjectedLight lt;
  lt.ambient = light.direction - light.direction.dot(frame.normal) * frame.normal;
  // Covariant components X_i . l, raised with G^-1.
  const Vec2 lowered(lt.ambient.x() + frame.slope.x() * lt.ambient.z(),
                     lt.ambient.y() + frame.slope.y() * lt.ambient.z());
  lt.coords = frame.metric.ldlt().solve(lowered);
  return lt;
}

/// Image brightness gradient rho <l_t, d(N)(e_i)> predicted from the surface
/// alone. Because the normal faces the viewer, d(N) = -G^-1 II and the
/// gradient is -rho II l_t.
inline Vec2 brightness_gradient_from_surface(const MongePatch3& patch, const LightSource& light,
                                             const Vec2& point) {
  const SurfaceFrame frame = surface_frame(patch, point);
  const ProjectedLight lt = project_light(light, frame);
  return -light.albedo * (frame.second_form * lt.coords);
}

/// Gamma^k_ij of the induced metric; gamma[k](i, j). For a Monge patch
/// Gamma^k_ij = f_k f_ij / (1 + |grad f|^2).
using Christoffel = std::array<Mat2, 2>;

inline Christoffel christoffel(const MongePatch3& patch, const Vec2& point) {
  const Vec2 g = patch.gradient(point);
  const Mat2 h = patch.hessian(point);
  const double w2 = 1.0 + g.squaredNorm();
  return {g.x() * h / w2, g.y() * h / w2};
}

/// sum_ij Gamma^k_ij a^i b^j for k = 1, 2.
inline Vec2 contract(const Christoffel& gamma, const Vec2& a, const Vec2& b) {
  return {a.dot(gamma[0] * b), a.dot(gamma[1] * b)};
}

/// Parallel-transport correction of l_t along u in closed form:
/// -(l_t^T II u) grad f / sqrt(1 + |grad f|^2). Equals -contract(gamma, l_t, u).
inline Vec2 transport_correction(const SurfaceFrame& frame, const Vec2& lt_coords, const Vec2& u) {
  return -(lt_coords.dot(frame.second_form * u)) * frame.n3 * frame.slope;
}

/// Finite-difference covariant derivative of l_t along image direction u,
/// compared with -(L.N) d(N)(u). Returns the ambient distance between the
/// two, which is O(h).
inline double verify_light_transport(const MongePatch3& patch, const LightSource& light,
                                     const Vec2& point, const Vec2& u, double h) {
  if (!(h > 0 && h <= 1e-2))
    throw Error(ErrorCode::InvalidArgument, "step must lie in (0, 1e-2]");
  const SurfaceFrame f0 = surface_frame(patch, point);
  const SurfaceFrame f1 = surface_frame(patch, point + h * u);
  const Vec3 l0 = project_light(light, f0).ambient;
  const Vec3 l1 = project_light(light, f1).ambient;
  Vec3 diff = (l1 - l0) / h;
  diff -= diff.dot(f0.normal) * f0.normal;
  const Vec3 expected = -light.direction.dot(f0.normal) * f0.ambient(f0.normal_derivative(u));
  return (diff - expected).norm();
}

}  // namespace sff
