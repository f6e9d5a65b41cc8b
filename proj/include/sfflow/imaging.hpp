#pragma once

// Lambertian image formation for Monge patches: point intensities, exact
// image jets, rasters and finite-difference jets measured from rasters.

#include "sfflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace sff {

/// Intensity and its first and second image derivatives at one point.
struct ImageJet2 {
  double I = 0, Ix = 0, Iy = 0, Ixx = 0, Ixy = 0, Iyy = 0;

  Vec2 gradient() const { return {Ix, Iy}; }

  Mat2 hessian() const {
    Mat2 h;
    h << Ixx, Ixy, Ixy, Iyy;
    return h;
  }

  std::array<double, 6> as_array() const { return {I, Ix, Iy, Ixx, Ixy, Iyy}; }

  ImageJet2& operator+=(const ImageJet2& o) {
    I += o.I, Ix += o.Ix, Iy += o.Iy, Ixx += o.Ixx, Ixy += o.Ixy, Iyy += o.Iyy;
    return *this;
  }

  friend ImageJet2 operator*(double s, ImageJet2 j) {
    j.I *= s, j.Ix *= s, j.Iy *= s, j.Ixx *= s, j.Ixy *= s, j.Iyy *= s;
    return j;
  }

  bool operator==(const ImageJet2&) const = default;
};

/// max_k |a_k - b_k| / max_k |b_k| over the six jet entries.
inline double jet_relative_error(const ImageJet2& a, const ImageJet2& b) {
  const auto x = a.as_array(), y = b.as_array();
  double num = 0, den = 0;
  for (std::size_t k = 0; k < 6; ++k) {
    num = std::max(num, std::abs(x[k] - y[k]));
    den = std::max(den, std::abs(y[k]));
  }
  return den > 0 ? num / den : num;
}

/// I = sum_k rho_k max(L_k . N, 0).
inline double render_intensity(const MongePatch3& patch, std::span<const LightSource> lights,
                               const Vec2& point) {
  if (lights.empty()) throw Error(ErrorCode::InvalidArgument, "at least one light is required");
  const Vec2 g = patch.gradient(point);
  const Vec3 n = Vec3(-g.x(), -g.y(), 1.0) / std::sqrt(1.0 + g.squaredNorm());
  double sum = 0;
  for (const auto& l : lights) sum += l.albedo * std::max(l.direction.dot(n), 0.0);
  return sum;
}

namespace detail {

// Jet of rho L.N for one unshadowed source. With m = L_z - l.p and
// W = sqrt(1+|p|^2), grad I = H lam where lam = -(rho/W)(l + m p / W^2);
// the Hessian is T[lam] + H D(lam), T the third-derivative tensor.
inline ImageJet2 single_light_jet(const MongePatch3& patch, const LightSource& light,
                                  const Vec2& point) {
  const Vec2 p = patch.gradient(point);
  const Mat2 H = patch.hessian(point);
  const Vec2 l = light.direction.head<2>();
  const double rho = light.albedo;
  const double w2 = 1.0 + p.squaredNorm();
  const double w = std::sqrt(w2);
  const double m = light.direction.z() - l.dot(p);

  const Vec2 lam = -(rho / w) * (l + (m / w2) * p);
  const Vec2 Hp = H * p, Hl = H * l;
  const double w3 = w2 * w, w5 = w3 * w2;
  const Mat2 dlam = (rho / w3) * l * Hp.transpose() + (rho / w3) * p * Hl.transpose() +
                    (3 * rho * m / w5) * p * Hp.transpose() - (rho * m / w3) * H;

  const Vec2 grad = H * lam;
  Mat2 hess = patch.directional_hessian(lam) + H * dlam;
  const double off = 0.5 * (hess(0, 1) + hess(1, 0));

  ImageJet2 j;
  j.I = rho * m / w;
  j.Ix = grad.x();
  j.Iy = grad.y();
  j.Ixx = hess(0, 0);
  j.Ixy = off;
  j.Iyy = hess(1, 1);
  return j;
}

}  // namespace detail

/// Closed-form jet of sum_k rho_k L_k.N. Every source must strictly light
/// the point, otherwise the clamp makes I non-smooth there.
inline ImageJet2 analytic_jet(const MongePatch3& patch, std::span<const LightSource> lights,
                              const Vec2& point) {
  if (lights.empty()) throw Error(ErrorCode::InvalidArgument, "at least one light is required");
  const Vec2 g = patch.gradient(point);
  const Vec3 n = Vec3(-g.x(), -g.y(), 1.0) / std::sqrt(1.0 + g.squaredNorm());
  ImageJet2 sum;
  for (const auto& l : lights) {
    if (!(l.direction.dot(n) > 0))
      throw Error(ErrorCode::ShadowedPoint, "light does not reach the point (L.N <= 0)");
    sum += detail::single_light_jet(patch, l, point);
  }
  return sum;
}

inline ImageJet2 analytic_jet(const MongePatch3& patch, const LightSource& light, const Vec2& point) {
  return analytic_jet(patch, std::span<const LightSource>(&light, 1), point);
}

/// Row-major raster. Row 0 is the top (largest y); pixel centres are
/// `spacing` apart and the raster centre maps to `center`.
struct RasterImage {
  int width = 0;
  int height = 0;
  double spacing = 1.0;
  Vec2 center = Vec2::Zero();
  std::vector<double> values;

  double& at(int col, int row) { return values[static_cast<std::size_t>(row) * width + col]; }
  double at(int col, int row) const { return values[static_cast<std::size_t>(row) * width + col]; }

  Vec2 position(int col, int row) const {
    return {center.x() + (col - 0.5 * (width - 1)) * spacing,
            center.y() + (0.5 * (height - 1) - row) * spacing};
  }

  /// Inverse of position(), fractional.
  Vec2 pixel_coords(const Vec2& q) const {
    return {(q.x() - center.x()) / spacing + 0.5 * (width - 1),
            0.5 * (height - 1) - (q.y() - center.y()) / spacing};
  }

  void validate() const {
    if (width <= 0 || height <= 0 || !(spacing > 0) ||
        values.size() != static_cast<std::size_t>(width) * height)
      throw Error(ErrorCode::InvalidArgument, "malformed raster");
  }
};

struct Window {
  Vec2 center = Vec2::Zero();
  double extent = 1.0;  // distance between the first and last pixel centre along x
};

inline RasterImage render_raster(const MongePatch3& patch, std::span<const LightSource> lights,
                                 const Window& window, int width, int height) {
  if (width < 3 || height < 3) throw Error(ErrorCode::InvalidArgument, "raster must be at least 3x3");
  if (!(window.extent > 0)) throw Error(ErrorCode::InvalidArgument, "window extent must be positive");
  RasterImage img;
  img.width = width;
  img.height = height;
  img.spacing = window.extent / (width - 1);
  img.center = window.center;
  img.values.resize(static_cast<std::size_t>(width) * height);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) img.at(c, r) = render_intensity(patch, lights, img.position(c, r));
  return img;
}

struct Pixel {
  int col = 0;
  int row = 0;
};

/// Second-order central differences (3-point and 5-point cross stencils).
/// Errors are O(spacing^2).
inline ImageJet2 fd_jet(const RasterImage& img, Pixel px) {
  if (px.col < 2 || px.row < 2 || px.col > img.width - 3 || px.row > img.height - 3)
    throw Error(ErrorCode::BorderPixel, "pixel closer than 2 pixels to the border");
  const int c = px.col, r = px.row;
  const double s = img.spacing;
  const double s2 = s * s;
  // y grows upward, so the row above is +y.
  const double n = img.at(c, r - 1), so = img.at(c, r + 1);
  const double e = img.at(c + 1, r), we = img.at(c - 1, r);
  const double ctr = img.at(c, r);
  ImageJet2 j;
  j.I = ctr;
  j.Ix = (e - we) / (2 * s);
  j.Iy = (n - so) / (2 * s);
  j.Ixx = (e - 2 * ctr + we) / s2;
  j.Iyy = (n - 2 * ctr + so) / s2;
  j.Ixy = (img.at(c + 1, r - 1) - img.at(c + 1, r + 1) - img.at(c - 1, r - 1) + img.at(c - 1, r + 1)) /
          (4 * s2);
  return j;
}

}  // namespace sff
