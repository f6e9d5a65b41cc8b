#pragma once

// Serialization: JSON for patches, lights, frames and solution sets; 16-bit
// PGM rasters with a JSON sidecar; CSV tables; SVG quiver plots. Files are
// written through a temporary and renamed into place.

#include "sfflow/curve1d.hpp"
#include "sfflow/solvers.hpp"

#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace sff::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::Io, "cannot read " + path);
  return ss.str();
}

inline void atomic_write(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::Io, "cannot rename into " + path);
  }
}

/// Inline JSON when the argument starts with '{' or '[', otherwise a path.
inline json parse_json_arg(const std::string& arg) {
  const auto first = arg.find_first_not_of(" \t\r\n");
  const bool inline_json = first != std::string::npos && (arg[first] == '{' || arg[first] == '[');
  const std::string text = inline_json ? arg : read_file(arg);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed JSON: ") + e.what());
  }
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline double number(const json& j, const char* what) {
  if (!j.is_number()) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be finite");
  return v;
}

inline std::vector<double> numbers(const json& j, std::size_t n, const char* what) {
  if (!j.is_array() || j.size() != n)
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be an array of " + std::to_string(n));
  std::vector<double> out;
  for (const auto& v : j) out.push_back(number(v, what));
  return out;
}

inline const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw Error(ErrorCode::InvalidArgument, std::string("missing field \"") + key + "\"");
  return j.at(key);
}

}  // namespace detail

inline json to_json(const MongePatch3& p) { return {{"c", p.c}}; }

/// {"c":[c1..c9]} or {"sphere":{"about":[x,y],"radius":r}}.
inline MongePatch3 patch3_from_json(const json& j) {
  if (j.is_object() && j.contains("sphere")) {
    const json& s = j.at("sphere");
    const auto about = s.contains("about") ? detail::numbers(s.at("about"), 2, "sphere.about")
                                           : std::vector<double>{0, 0};
    const double r = s.contains("radius") ? detail::number(s.at("radius"), "sphere.radius") : 1.0;
    return sphere_patch(Vec2(about[0], about[1]), r);
  }
  const auto c = detail::numbers(detail::field(j, "c"), 9, "patch.c");
  MongePatch3 p;
  std::copy(c.begin(), c.end(), p.c.begin());
  return p;
}

inline json to_json(const MongePatch2& p) { return {{"a", p.a}, {"b", p.b}, {"c", p.c}, {"d", p.d}, {"e", p.e}}; }

inline MongePatch2 patch2_from_json(const json& j) {
  return {detail::number(detail::field(j, "a"), "a"), detail::number(detail::field(j, "b"), "b"),
          detail::number(detail::field(j, "c"), "c"), detail::number(detail::field(j, "d"), "d"),
          detail::number(detail::field(j, "e"), "e")};
}

inline json to_json(const LightSource& l) {
  return {{"dir", {l.direction.x(), l.direction.y(), l.direction.z()}}, {"albedo", l.albedo}};
}

/// {"dir":[x,y,z],"albedo":r}; the direction is normalised on load.
inline LightSource light_from_json(const json& j) {
  const auto d = detail::numbers(detail::field(j, "dir"), 3, "light.dir");
  const double albedo = j.contains("albedo") ? detail::number(j.at("albedo"), "albedo") : 1.0;
  return LightSource::make(Vec3(d[0], d[1], d[2]), albedo);
}

/// One light object, an array of them, or {"lights":[...]}.
inline std::vector<LightSource> lights_from_json(const json& j) {
  const json& arr = j.is_object() && j.contains("lights") ? j.at("lights") : j;
  std::vector<LightSource> out;
  if (arr.is_array()) {
    for (const auto& l : arr) out.push_back(light_from_json(l));
  } else {
    out.push_back(light_from_json(arr));
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "no lights given");
  return out;
}

inline json to_json(const FlowFrame& f) {
  return {{"u", {f.u.x(), f.u.y()}}, {"I", f.I}, {"Iu", f.Iu}, {"Ivv", f.Ivv}, {"Iuv", f.Iuv}, {"Iuu", f.Iuu}};
}

inline FlowFrame frame_from_json(const json& j) {
  FlowFrame f;
  const auto u = detail::numbers(detail::field(j, "u"), 2, "frame.u");
  f.u = Vec2(u[0], u[1]);
  if (!(f.u.norm() > 0)) throw Error(ErrorCode::InvalidArgument, "frame.u must be nonzero");
  f.u.normalize();
  f.v = perp(f.u);
  f.I = detail::number(detail::field(j, "I"), "I");
  f.Iu = detail::number(detail::field(j, "Iu"), "Iu");
  f.Ivv = detail::number(detail::field(j, "Ivv"), "Ivv");
  f.Iuv = detail::number(detail::field(j, "Iuv"), "Iuv");
  f.Iuu = detail::number(detail::field(j, "Iuu"), "Iuu");
  return f;
}

inline json to_json(const PatchSolutionSet& set) {
  json sols = json::array();
  for (const auto& s : set.solutions) {
    json e{{"patch", to_json(s.patch)}, {"class", to_string(s.classification)}, {"residual", s.residual}};
    e["light"] = s.light ? to_json(*s.light) : json(nullptr);
    if (s.near_boundary) e["near_boundary"] = true;
    sols.push_back(std::move(e));
  }
  json out{{"tangent_plane", {set.tangent_plane.x(), set.tangent_plane.y()}}, {"solutions", std::move(sols)},
           {"residual_bound", set.residual_bound}};
  if (set.degenerate) out["degenerate"] = true;
  return out;
}

inline PatchSolutionSet solution_set_from_json(const json& j) {
  PatchSolutionSet set;
  const auto tp = detail::numbers(detail::field(j, "tangent_plane"), 2, "tangent_plane");
  set.tangent_plane = Vec2(tp[0], tp[1]);
  for (const auto& e : detail::field(j, "solutions")) {
    PatchSolution s;
    s.patch = patch2_from_json(detail::field(e, "patch"));
    const auto cls = patch_class_from_string(detail::field(e, "class").get<std::string>());
    if (!cls) throw Error(ErrorCode::InvalidArgument, "unknown solution class");
    s.classification = *cls;
    s.residual = detail::number(detail::field(e, "residual"), "residual");
    if (e.contains("light") && !e.at("light").is_null()) {
      const json& l = e.at("light");
      const auto d = detail::numbers(detail::field(l, "dir"), 3, "light.dir");
      s.light = LightSource{Vec3(d[0], d[1], d[2]), detail::number(detail::field(l, "albedo"), "albedo")};
    }
    s.near_boundary = e.value("near_boundary", false);
    set.solutions.push_back(s);
  }
  set.residual_bound = j.contains("residual_bound") ? detail::number(j.at("residual_bound"), "residual_bound") : 0;
  set.degenerate = j.value("degenerate", false);
  return set;
}

// ---------------------------------------------------------------------------
// PGM with sidecar: pixel k maps to intensity k * scale / maxval.

struct PgmSidecar {
  double scale = 1.0;
  double spacing = 1.0;
  Vec2 center = Vec2::Zero();
  std::vector<double> values;  // optional full-precision copy of the pixels

  json to_json() const {
    json j{{"scale", scale}, {"spacing", spacing}, {"center", {center.x(), center.y()}}};
    if (!values.empty()) j["values"] = values;
    return j;
  }

  static PgmSidecar from_json(const json& j) {
    PgmSidecar s;
    s.scale = detail::number(detail::field(j, "scale"), "scale");
    s.spacing = detail::number(detail::field(j, "spacing"), "spacing");
    if (j.contains("center")) {
      const auto c = detail::numbers(j.at("center"), 2, "center");
      s.center = Vec2(c[0], c[1]);
    }
    if (j.contains("values")) {
      if (!j.at("values").is_array()) throw Error(ErrorCode::InvalidArgument, "sidecar values must be an array");
      s.values = detail::numbers(j.at("values"), j.at("values").size(), "values");
    }
    if (!(s.scale > 0) || !(s.spacing > 0)) throw Error(ErrorCode::InvalidArgument, "scale and spacing must be positive");
    return s;
  }
};

inline constexpr int kPgmMax = 65535;

/// Binary 16-bit P5. Returns the bytes and the sidecar describing them.
inline std::pair<std::string, PgmSidecar> encode_pgm(const RasterImage& img) {
  img.validate();
  PgmSidecar side;
  side.spacing = img.spacing;
  side.center = img.center;
  const double mx = *std::max_element(img.values.begin(), img.values.end());
  side.scale = mx > 0 ? mx : 1.0;
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                    std::to_string(kPgmMax) + "\n";
  out.reserve(out.size() + img.values.size() * 2);
  for (double v : img.values) {
    const long k = std::lround(std::clamp(v / side.scale, 0.0, 1.0) * kPgmMax);
    out.push_back(static_cast<char>((k >> 8) & 0xff));
    out.push_back(static_cast<char>(k & 0xff));
  }
  return {out, side};
}

/// Reads P2 (ASCII) or P5 (binary, 8 or 16 bit).
inline RasterImage decode_pgm(const std::string& bytes, const PgmSidecar& side) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_ws();
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  auto integer = [&](const char* what) {
    const std::string t = token();
    try {
      std::size_t used = 0;
      const long v = std::stol(t, &used);
      if (used != t.size() || v < 0) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, std::string("malformed PGM ") + what);
    }
  };
  const std::string magic = token();
  if (magic != "P2" && magic != "P5") throw Error(ErrorCode::InvalidArgument, "not a PGM (P2/P5) file");
  const long w = integer("width"), h = integer("height"), maxval = integer("maxval");
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw Error(ErrorCode::InvalidArgument, "bad PGM header");
  RasterImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.spacing = side.spacing;
  img.center = side.center;
  img.values.resize(static_cast<std::size_t>(w * h));
  if (magic == "P2") {
    for (auto& v : img.values) v = static_cast<double>(integer("sample")) / maxval * side.scale;
  } else {
    ++pos;  // single whitespace after maxval
    const std::size_t bpp = maxval > 255 ? 2 : 1;
    if (bytes.size() < pos + img.values.size() * bpp) throw Error(ErrorCode::InvalidArgument, "truncated PGM data");
    for (std::size_t i = 0; i < img.values.size(); ++i) {
      const auto b0 = static_cast<unsigned char>(bytes[pos + i * bpp]);
      const unsigned k = bpp == 2 ? (b0 << 8) | static_cast<unsigned char>(bytes[pos + i * bpp + 1]) : b0;
      img.values[i] = static_cast<double>(k) / maxval * side.scale;
    }
  }
  if (!side.values.empty()) {
    if (side.values.size() != img.values.size())
      throw Error(ErrorCode::InvalidArgument, "sidecar values do not match the PGM size");
    for (std::size_t i = 0; i < img.values.size(); ++i)
      if (!(std::abs(side.values[i] - img.values[i]) <= side.scale / maxval))
        throw Error(ErrorCode::InvalidArgument, "sidecar values disagree with the PGM");
    img.values = side.values;
  }
  return img;
}

inline std::string sidecar_path(const std::string& pgm_path) { return pgm_path + ".json"; }

/// With `exact`, the sidecar also carries the unquantized values, which
/// load_raster prefers. Second differences of 16-bit data are otherwise
/// limited to roughly 1e-3 relative accuracy.
inline void save_raster(const std::string& path, const RasterImage& img, bool exact = false) {
  auto [bytes, side] = encode_pgm(img);
  if (exact) side.values = img.values;
  atomic_write(path, bytes);
  atomic_write(sidecar_path(path), side.to_json().dump(2) + "\n");
}

/// The sidecar is optional; without it scale = spacing = 1.
inline RasterImage load_raster(const std::string& path) {
  PgmSidecar side;
  if (std::filesystem::exists(sidecar_path(path))) side = PgmSidecar::from_json(parse_json_arg(sidecar_path(path)));
  return decode_pgm(read_file(path), side);
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::vector<std::string>> split_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline double parse_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    throw Error(ErrorCode::InvalidArgument, "bad number in CSV: " + s);
  }
}

// Rows after the header, each with exactly `cols` numeric cells.
inline std::vector<std::vector<double>> numeric_rows(const std::string& text, std::size_t cols) {
  auto rows = split_csv(text);
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i == 0 && !rows[i].empty() && !rows[i][0].empty() && std::isalpha(static_cast<unsigned char>(rows[i][0][0])))
      continue;
    if (rows[i].size() != cols) throw Error(ErrorCode::InvalidArgument, "CSV row has the wrong number of columns");
    std::vector<double> r;
    for (const auto& c : rows[i]) r.push_back(parse_double(c));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace detail

struct FlowRow {
  double x, y, ux, uy, I, Iu, Iuu, Iuv, Ivv;
  bool masked;
  bool operator==(const FlowRow&) const = default;
};

inline std::vector<FlowRow> flow_rows(const FlowField& field) {
  std::vector<FlowRow> rows;
  for (const auto& s : field.samples) {
    const auto& f = s.frame;
    rows.push_back({s.position.x(), s.position.y(), s.masked ? 0.0 : f.u.x(), s.masked ? 0.0 : f.u.y(), f.I, f.Iu,
                    s.masked ? 0.0 : f.Iuu, s.masked ? 0.0 : f.Iuv, s.masked ? 0.0 : f.Ivv, s.masked});
  }
  return rows;
}

inline std::string flow_csv(const std::vector<FlowRow>& rows) {
  std::string out = "x,y,ux,uy,I,Iu,Iuu,Iuv,Ivv,masked\n";
  for (const auto& r : rows)
    out += fmt(r.x) + "," + fmt(r.y) + "," + fmt(r.ux) + "," + fmt(r.uy) + "," + fmt(r.I) + "," + fmt(r.Iu) + "," +
           fmt(r.Iuu) + "," + fmt(r.Iuv) + "," + fmt(r.Ivv) + "," + (r.masked ? "1" : "0") + "\n";
  return out;
}

inline std::vector<FlowRow> parse_flow_csv(const std::string& text) {
  std::vector<FlowRow> out;
  for (const auto& r : detail::numeric_rows(text, 10))
    out.push_back({r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8], r[9] != 0});
  return out;
}

struct SweepRow {
  double a, b;
  int n_roots;
  bool operator==(const SweepRow&) const = default;
};

inline std::string sweep_csv(const SweepResult& sweep) {
  std::string out = "a,b,n_roots\n";
  for (const auto& c : sweep.cells)
    out += fmt(c.tangent_plane.x()) + "," + fmt(c.tangent_plane.y()) + "," + std::to_string(c.solutions.size()) + "\n";
  return out;
}

inline std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::vector<SweepRow> out;
  for (const auto& r : detail::numeric_rows(text, 3)) out.push_back({r[0], r[1], static_cast<int>(r[2])});
  return out;
}

struct CurveRow {
  double x, f, residual;
};

inline std::string curve_csv(const Curve1DSolution& sol) {
  std::string out = "x,f,residual\n";
  for (std::size_t i = 0; i < sol.x.size(); ++i)
    out += fmt(sol.x[i]) + "," + fmt(sol.f[i]) + "," + (std::isnan(sol.residual[i]) ? "nan" : fmt(sol.residual[i])) +
           "\n";
  return out;
}

inline std::vector<CurveRow> parse_curve_csv(const std::string& text) {
  std::vector<CurveRow> out;
  for (const auto& r : detail::numeric_rows(text, 3)) out.push_back({r[0], r[1], r[2]});
  return out;
}

/// Two columns x, I on a uniform grid.
inline Intensity1D intensity_from_csv(const std::string& text) {
  const auto rows = detail::numeric_rows(text, 2);
  if (rows.size() < 6) throw Error(ErrorCode::InvalidArgument, "need at least 6 intensity samples");
  const double dx = (rows.back()[0] - rows.front()[0]) / static_cast<double>(rows.size() - 1);
  std::vector<double> values;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (std::abs(rows[i][0] - (rows.front()[0] + dx * static_cast<double>(i))) > 1e-9 * (1 + std::abs(dx) * rows.size()))
      throw Error(ErrorCode::InvalidArgument, "intensity samples must be uniformly spaced");
    values.push_back(rows[i][1]);
  }
  return Intensity1D::from_samples(rows.front()[0], dx, values);
}

inline std::string jets_csv(const std::vector<std::pair<Vec2, ImageJet2>>& jets) {
  std::string out = "x,y,I,Ix,Iy,Ixx,Ixy,Iyy\n";
  for (const auto& [q, j] : jets)
    out += fmt(q.x()) + "," + fmt(q.y()) + "," + fmt(j.I) + "," + fmt(j.Ix) + "," + fmt(j.Iy) + "," + fmt(j.Ixx) +
           "," + fmt(j.Ixy) + "," + fmt(j.Iyy) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// SVG

/// Isophote tangents (v) as unit segments centred on each sample; masked
/// samples are drawn as small grey dots.
inline std::string quiver_svg(const FlowField& field, int stride = 1) {
  stride = std::max(stride, 1);
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : field.samples) {
    xmin = std::min(xmin, s.position.x()), xmax = std::max(xmax, s.position.x());
    ymin = std::min(ymin, s.position.y()), ymax = std::max(ymax, s.position.y());
  }
  if (field.samples.empty()) xmin = xmax = ymin = ymax = 0;
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-300});
  const double size = 600, margin = 20;
  const double k = (size - 2 * margin) / span;
  const double cell = std::max(field.cols, field.rows) > 1 ? (size - 2 * margin) / std::max(field.cols, field.rows) : 10;
  const double half = 0.4 * cell * stride;
  auto px = [&](double x) { return margin + (x - xmin) * k; };
  auto py = [&](double y) { return size - margin - (y - ymin) * k; };
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" viewBox=\"0 0 600 600\">\n"
                    "<rect width=\"600\" height=\"600\" fill=\"white\"/>\n";
  for (int r = 0; r < field.rows; r += stride)
    for (int c = 0; c < field.cols; c += stride) {
      const auto& s = field.samples[static_cast<std::size_t>(r) * field.cols + c];
      const double x = px(s.position.x()), y = py(s.position.y());
      if (s.masked) {
        out += "<circle class=\"masked\" cx=\"" + fmt(x) + "\" cy=\"" + fmt(y) + "\" r=\"1.5\" fill=\"#999\"/>\n";
        continue;
      }
      // Image y points up, SVG y points down.
      const Vec2 v = s.frame.v;
      out += "<line x1=\"" + fmt(x - half * v.x()) + "\" y1=\"" + fmt(y + half * v.y()) + "\" x2=\"" +
             fmt(x + half * v.x()) + "\" y2=\"" + fmt(y - half * v.y()) + "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    }
  out += "</svg>\n";
  return out;
}

}  // namespace sff::io
