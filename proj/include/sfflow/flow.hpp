#pragma once

// Shading flow: the isophote / brightness-gradient frame at a point, flow
// fields measured from rasters, and localisation of gradient zeros.

#include "sfflow/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

namespace sff {

/// Image frame {u, v} with u along +grad I and v = u rotated by +90 degrees,
/// plus the intensity derivatives expressed in that frame. Iv is zero by
/// construction and therefore not stored.
struct FlowFrame {
  Vec2 u{1, 0};
  Vec2 v{0, 1};
  double I = 0;
  double Iu = 0;  // |grad I|
  double Ivv = 0, Iuv = 0, Iuu = 0;

  Vec2 gradient() const { return Iu * u; }

  /// Albedo-free copy: every entry divided by I.
  FlowFrame normalized() const {
    FlowFrame f = *this;
    f.I = 1.0;
    f.Iu /= I, f.Ivv /= I, f.Iuv /= I, f.Iuu /= I;
    return f;
  }
};

inline constexpr double kDefaultGradientEps = 1e-9;

inline FlowFrame rotated_frame(const ImageJet2& jet, const Vec2& u) {
  const Mat2 h = jet.hessian();
  FlowFrame f;
  f.u = u;
  f.v = perp(u);
  f.I = jet.I;
  f.Iu = jet.gradient().dot(u);
  f.Iuu = u.dot(h * u);
  f.Ivv = f.v.dot(h * f.v);
  f.Iuv = u.dot(h * f.v);
  return f;
}

inline FlowFrame frame_from_jet(const ImageJet2& jet, double eps_g = kDefaultGradientEps) {
  const double g = jet.gradient().norm();
  if (!(g > eps_g))
    throw Error(ErrorCode::DegenerateGradient, "|grad I| is below the gradient threshold");
  FlowFrame f = rotated_frame(jet, jet.gradient() / g);
  f.Iu = g;
  return f;
}

/// Frame used where grad I vanishes: u is the intensity-Hessian eigenvector
/// with the larger |eigenvalue|. Iu keeps the (tiny) gradient magnitude.
inline FlowFrame critical_frame(const ImageJet2& jet) {
  Eigen::SelfAdjointEigenSolver<Mat2> es(jet.hessian());
  const auto& ev = es.eigenvalues();
  const int k = std::abs(ev(1)) >= std::abs(ev(0)) ? 1 : 0;
  FlowFrame f = rotated_frame(jet, es.eigenvectors().col(k).normalized());
  f.Iu = jet.gradient().norm();
  return f;
}

struct FlowSample {
  Pixel pixel;
  Vec2 position = Vec2::Zero();
  FlowFrame frame;
  bool masked = false;
};

struct FlowField {
  int cols = 0;  // samples per row
  int rows = 0;
  std::vector<FlowSample> samples;  // row-major over interior pixels

  std::size_t masked_count() const {
    std::size_t n = 0;
    for (const auto& s : samples) n += s.masked;
    return n;
  }
};

/// fd_jet + frame_from_jet at every pixel at least 2 pixels from the border.
/// Degenerate gradients are masked.
inline FlowField flow_field_from_raster(const RasterImage& img, double eps_g = kDefaultGradientEps) {
  img.validate();
  if (img.width < 5 || img.height < 5) throw Error(ErrorCode::InvalidArgument, "raster must be at least 5x5");
  FlowField field;
  field.cols = img.width - 4;
  field.rows = img.height - 4;
  field.samples.reserve(static_cast<std::size_t>(field.cols) * field.rows);
  for (int r = 2; r < img.height - 2; ++r) {
    for (int c = 2; c < img.width - 2; ++c) {
      FlowSample s;
      s.pixel = {c, r};
      s.position = img.position(c, r);
      const ImageJet2 jet = fd_jet(img, s.pixel);
      if (jet.gradient().norm() > eps_g) {
        s.frame = frame_from_jet(jet, eps_g);
      } else {
        s.masked = true;
        s.frame.I = jet.I;
        s.frame.Iu = jet.gradient().norm();
      }
      field.samples.push_back(s);
    }
  }
  return field;
}

namespace detail {

// Roots in [0,1]^2 of two bilinear functions given by their corner values
// (00, 10, 01, 11) = (s,t) corners. Lines of zeros (one field vanishing on
// the whole cell) are sampled once at t = 1/2.
inline std::vector<Vec2> bilinear_roots(const std::array<double, 4>& fa, const std::array<double, 4>& fb,
                                        double zero_tol) {
  auto coeffs = [](const std::array<double, 4>& q) {
    return std::array<double, 4>{q[0], q[1] - q[0], q[2] - q[0], q[3] - q[1] - q[2] + q[0]};
  };
  auto vanishes = [&](const std::array<double, 4>& q) {
    for (double v : q)
      if (std::abs(v) > zero_tol) return false;
    return true;
  };
  auto changes_sign = [](const std::array<double, 4>& q) {
    const auto [mn, mx] = std::minmax_element(q.begin(), q.end());
    return *mn <= 0 && *mx >= 0;
  };
  std::vector<Vec2> out;
  if (!changes_sign(fa) || !changes_sign(fb)) return out;
  const bool za = vanishes(fa), zb = vanishes(fb);
  if (za && zb) return out;  // plateau: no isolated zero
  if (za || zb) {
    const auto c = coeffs(za ? fb : fa);
    const double t = 0.5;
    const double den = c[1] + c[3] * t;
    if (std::abs(den) < 1e-300) return out;
    const double s = -(c[0] + c[2] * t) / den;
    if (s >= 0 && s <= 1) out.emplace_back(s, t);
    return out;
  }
  const auto a = coeffs(fa), b = coeffs(fb);
  // a0 + a1 s + a2 t + a3 s t = 0  ->  s = -(a0 + a2 t) / (a1 + a3 t); substitute into b.
  // (b0 + b2 t)(a1 + a3 t) - (b1 + b3 t)(a0 + a2 t) = 0
  const double q2 = b[2] * a[3] - b[3] * a[2];
  const double q1 = b[0] * a[3] + b[2] * a[1] - b[1] * a[2] - b[3] * a[0];
  const double q0 = b[0] * a[1] - b[1] * a[0];
  std::vector<double> ts;
  const double scale = std::max({std::abs(q2), std::abs(q1), std::abs(q0)});
  if (scale == 0) return out;
  if (std::abs(q2) <= 1e-14 * scale) {
    if (std::abs(q1) > 0) ts.push_back(-q0 / q1);
  } else {
    const double disc = q1 * q1 - 4 * q2 * q0;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      const double r = -0.5 * (q1 + std::copysign(sq, q1));
      if (r != 0) ts.push_back(q0 / r);
      ts.push_back(r / q2);
    }
  }
  for (double t : ts) {
    if (t < -1e-12 || t > 1 + 1e-12) continue;
    double den = a[1] + a[3] * t;
    double s;
    if (std::abs(den) > 1e-14) {
      s = -(a[0] + a[2] * t) / den;
    } else {
      den = b[1] + b[3] * t;
      if (std::abs(den) <= 1e-14) continue;
      s = -(b[0] + b[2] * t) / den;
    }
    if (s < -1e-12 || s > 1 + 1e-12) continue;
    out.emplace_back(std::clamp(s, 0.0, 1.0), std::clamp(t, 0.0, 1.0));
  }
  return out;
}

inline void push_unique(std::vector<Vec2>& pts, const Vec2& q, double tol) {
  for (const auto& p : pts)
    if ((p - q).norm() <= tol) return;
  pts.push_back(q);
}

// Bilinear localisation over a grid of gradient samples. grad(c, r) returns
// the gradient at grid node (c, r); pos maps fractional grid coordinates to
// image positions.
template <class GradFn, class PosFn>
std::vector<Vec2> localize_gradient_zeros(int cols, int rows, GradFn&& grad, PosFn&& pos, double zero_tol,
                                          double merge_tol) {
  std::vector<Vec2> g(static_cast<std::size_t>(cols) * rows);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) g[static_cast<std::size_t>(r) * cols + c] = grad(c, r);
  auto at = [&](int c, int r) -> const Vec2& { return g[static_cast<std::size_t>(r) * cols + c]; };
  std::vector<Vec2> found;
  for (int r = 0; r + 1 < rows; ++r) {
    for (int c = 0; c + 1 < cols; ++c) {
      const std::array<Vec2, 4> q{at(c, r), at(c + 1, r), at(c, r + 1), at(c + 1, r + 1)};
      const std::array<double, 4> gx{q[0].x(), q[1].x(), q[2].x(), q[3].x()};
      const std::array<double, 4> gy{q[0].y(), q[1].y(), q[2].y(), q[3].y()};
      for (const Vec2& st : bilinear_roots(gx, gy, zero_tol))
        push_unique(found, pos(c + st.x(), r + st.y()), merge_tol);
    }
  }
  return found;
}

}  // namespace detail

struct CriticalPointOptions {
  double eps_c_rel = 1e-6;  // accept when |grad I| <= eps_c_rel * max I
  int newton_iterations = 20;
};

/// Sub-pixel zeros of the finite-difference gradient of a raster. Each
/// returned point has an interpolated |grad I| within eps_c.
inline std::vector<Vec2> find_critical_points(const RasterImage& img, const CriticalPointOptions& opt = {}) {
  img.validate();
  if (img.width < 5 || img.height < 5) return {};
  const double max_i = *std::max_element(img.values.begin(), img.values.end());
  const double eps_c = opt.eps_c_rel * max_i;
  const int cols = img.width - 4, rows = img.height - 4;
  auto grad = [&](int c, int r) { return fd_jet(img, {c + 2, r + 2}).gradient(); };
  auto pos = [&](double c, double r) {
    const Vec2 a = img.position(2, 2);
    return Vec2(a.x() + c * img.spacing, a.y() - r * img.spacing);
  };
  // Zero test uses the same threshold as acceptance so flat directions
  // (an identically vanishing component) are recognised.
  std::vector<Vec2> pts = detail::localize_gradient_zeros(cols, rows, grad, pos, eps_c, 1e-9 * img.spacing);
  std::vector<Vec2> out;
  for (const Vec2& q : pts) {
    // Bilinear gradient at q.
    const Vec2 pc = img.pixel_coords(q);
    const int c0 = std::clamp(static_cast<int>(std::floor(pc.x())), 2, img.width - 4);
    const int r0 = std::clamp(static_cast<int>(std::floor(pc.y())), 2, img.height - 4);
    const double s = pc.x() - c0, t = pc.y() - r0;
    const Vec2 gi = (1 - s) * (1 - t) * fd_jet(img, {c0, r0}).gradient() +
                    s * (1 - t) * fd_jet(img, {c0 + 1, r0}).gradient() +
                    (1 - s) * t * fd_jet(img, {c0, r0 + 1}).gradient() +
                    s * t * fd_jet(img, {c0 + 1, r0 + 1}).gradient();
    if (gi.norm() <= eps_c) out.push_back(q);
  }
  return out;
}

/// Gradient zeros of a jet field sampled on a regular grid, refined by
/// Newton's method on grad I using the jet Hessian.
template <class JetFn>
std::vector<Vec2> find_critical_points(JetFn&& jet_at, const Window& window, int width, int height,
                                       const CriticalPointOptions& opt = {}) {
  if (width < 2 || height < 2) return {};
  const double spacing = window.extent / (width - 1);
  auto pos = [&](double c, double r) {
    return Vec2(window.center.x() + (c - 0.5 * (width - 1)) * spacing,
                window.center.y() + (0.5 * (height - 1) - r) * spacing);
  };
  double max_i = 0;
  std::vector<ImageJet2> jets(static_cast<std::size_t>(width) * height);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      jets[static_cast<std::size_t>(r) * width + c] = jet_at(pos(c, r));
      max_i = std::max(max_i, jets[static_cast<std::size_t>(r) * width + c].I);
    }
  const double eps_c = opt.eps_c_rel * max_i;
  auto grad = [&](int c, int r) { return jets[static_cast<std::size_t>(r) * width + c].gradient(); };
  std::vector<Vec2> coarse = detail::localize_gradient_zeros(width, height, grad, pos, eps_c, 1e-9 * spacing);
  std::vector<Vec2> out;
  for (Vec2 q : coarse) {
    ImageJet2 j = jet_at(q);
    for (int it = 0; it < opt.newton_iterations && j.gradient().norm() > 1e-3 * eps_c; ++it) {
      // Minimum-norm step: a line of zeros (rank-one Hessian) is still approached.
      Eigen::JacobiSVD<Mat2> svd(j.hessian(), Eigen::ComputeFullU | Eigen::ComputeFullV);
      svd.setThreshold(1e-12);
      if (svd.rank() == 0) break;
      q -= svd.solve(j.gradient());
      j = jet_at(q);
    }
    if (j.gradient().norm() <= eps_c) detail::push_unique(out, q, 1e-9 * spacing);
  }
  return out;
}

}  // namespace sff
