// Walks through the ambiguity of one shading-flow measurement on a lit
// sphere: the four frontal-parallel surfaces, the root count over tangent
// planes, and the saddle whose emergent light lies along (1,1,1).
//
//   ambiguity_gallery [counts.svg]

#include "sfflow/sfflow.hpp"

#include <cstdio>
#include <string>

using namespace sff;

namespace {

void print_solution(const PatchSolution& s) {
  const auto k = principal_curvatures(s.patch);
  std::printf("  %-16s H = [%7.3f %7.3f; %7.3f %7.3f]  k = (%7.3f, %7.3f)", to_string(s.classification),
              2 * s.patch.c, s.patch.d, s.patch.d, 2 * s.patch.e, k[0], k[1]);
  if (s.light)
    std::printf("  light (%6.3f, %6.3f, %6.3f) albedo %.3f\n", s.light->direction.x(), s.light->direction.y(),
                s.light->direction.z(), s.light->albedo);
  else
    std::printf("  no emergent light\n");
}

// Root count per cell; a fastest, b upward.
std::string counts_svg(const SweepResult& sw) {
  const int cell = 24, na = sw.grid.a_count, nb = sw.grid.b_count;
  const char* fill[] = {"#ffffff", "#dddddd", "#9ecae1", "#cccccc", "#3182bd"};
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(na * cell) + "\" height=\"" +
                    std::to_string(nb * cell) + "\">\n";
  for (int j = 0; j < nb; ++j)
    for (int i = 0; i < na; ++i) {
      const auto n = std::min<std::size_t>(sw.cell(i, j).solutions.size(), 4);
      out += "<rect x=\"" + std::to_string(i * cell) + "\" y=\"" + std::to_string((nb - 1 - j) * cell) +
             "\" width=\"" + std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" + fill[n] +
             "\" stroke=\"#888\"><title>" + io::fmt(sw.grid.a_at(i)) + "," + io::fmt(sw.grid.b_at(j)) + ": " +
             std::to_string(n) + "</title></rect>\n";
    }
  return out + "</svg>\n";
}

}  // namespace

int main(int argc, char** argv) {
  const MongePatch3 sphere = sphere_patch(Vec2(0.4, -0.2));
  const LightSource light = LightSource::make({1, 0, 1});
  const FlowFrame frame = frame_from_jet(analytic_jet(sphere, light, Vec2::Zero()));
  std::printf("unit sphere at (0.4, -0.2), light (1,0,1)/sqrt2\n");
  std::printf("  I = %.4f  Iu = %.4f  Ivv = %.4f  Iuv = %.4f  Iuu = %.4f  u = (%.3f, %.3f)\n\n", frame.I, frame.Iu,
              frame.Ivv, frame.Iuv, frame.Iuu, frame.u.x(), frame.u.y());

  // Reading the same second derivatives as if the patch faced the viewer.
  std::printf("frontal-parallel reading of the same second derivatives:\n");
  try {
    for (const auto& s : solve_frontal_parallel(frame).solutions) print_solution(s);
  } catch (const Error& e) {
    std::printf("  %s\n", e.what());
  }

  // The sphere's cubic terms also shape the image second derivatives, so no
  // quadric here reproduces its Hessian exactly.
  const Mat2 h = sphere.hessian(Vec2::Zero());
  std::printf("\nquadric patches at the sphere's own tangent plane (%.3f, %.3f); sphere H = [%.3f %.3f; %.3f %.3f]:\n",
              sphere.c[0], sphere.c[1], h(0, 0), h(0, 1), h(1, 0), h(1, 1));
  for (const auto& s : solve_second_order(frame, Vec2(sphere.c[0], sphere.c[1])).solutions) print_solution(s);

  const SweepResult sw = sweep_tangent_planes(frame, SweepGrid{});
  std::printf("\nroots per tangent plane (a right, b up):\n");
  for (int j = sw.grid.b_count - 1; j >= 0; --j) {
    std::printf("  %6.2f ", sw.grid.b_at(j));
    for (int i = 0; i < sw.grid.a_count; ++i) std::printf("%zu", sw.cell(i, j).solutions.size());
    std::printf("\n");
  }

  const Vec3 target = Vec3(1, 1, 1).normalized();
  std::optional<PatchSolution> best;
  double best_angle = 10;
  for (const auto& c : sw.cells)
    for (const auto& s : c.solutions) {
      if (gaussian_sign(s.classification) >= 0 || !s.light) continue;
      const double a = std::acos(std::clamp(s.light->direction.dot(target), -1.0, 1.0));
      if (a < best_angle) best_angle = a, best = s;
    }
  if (best) {
    std::printf("\nsaddle closest to light (1,1,1): %.4f rad at (a, b) = (%.3f, %.3f)\n", best_angle, best->patch.a,
                best->patch.b);
    if (const auto m = match_emergent_light(frame, *best, target)) {
      std::printf("after continuation: %.2e rad at (a, b) = (%.4f, %.4f)\n", m->angle, m->solution.patch.a,
                  m->solution.patch.b);
      print_solution(m->solution);
    }
  }

  if (argc > 1) {
    try {
      io::atomic_write(argv[1], counts_svg(sw));
    } catch (const Error& e) {
      std::fprintf(stderr, "%s\n", e.what());
      return 1;
    }
  }
  return 0;
}
