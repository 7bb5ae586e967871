#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hbm/core/bytes.hpp"
#include "hbm/sparse_tensor.hpp"

namespace hbm::eval {

// ---- PLY ----

enum class PlyFormat { Ascii, BinaryLittleEndian };

namespace detail {

inline int ply_type_size(const std::string& t) {
  static const std::map<std::string, int> sizes{{"char", 1},  {"uchar", 1},  {"int8", 1},   {"uint8", 1},
                                                {"short", 2}, {"ushort", 2}, {"int16", 2},  {"uint16", 2},
                                                {"int", 4},   {"uint", 4},   {"int32", 4},  {"uint32", 4},
                                                {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
  auto it = sizes.find(t);
  return it == sizes.end() ? 0 : it->second;
}

inline double read_binary_scalar(const uint8_t* p, const std::string& t) {
  auto get = [&](auto v) {
    std::memcpy(&v, p, sizeof v);
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return get(int8_t{});
  if (t == "uchar" || t == "uint8") return get(uint8_t{});
  if (t == "short" || t == "int16") return get(int16_t{});
  if (t == "ushort" || t == "uint16") return get(uint16_t{});
  if (t == "int" || t == "int32") return get(int32_t{});
  if (t == "uint" || t == "uint32") return get(uint32_t{});
  if (t == "float" || t == "float32") return get(float{});
  return get(double{});
}

struct PlyElement {
  std::string name;
  size_t count = 0;
  std::vector<std::pair<std::string, std::string>> props;  ///< (type, name); list props are rejected.
  size_t stride() const {
    size_t s = 0;
    for (const auto& p : props) s += static_cast<size_t>(ply_type_size(p.first));
    return s;
  }
};

}  // namespace detail

/// Reads x, y, z of the vertex element (ASCII or binary little endian),
/// rounds half away from zero and floor-divides by 2^shift. Header errors name
/// the offending line.
inline CoordSetPtr read_ply(const std::string& path, int shift = 0) {
  const auto bytes = read_file(path);
  size_t pos = 0;
  int line_no = 0;
  auto next_line = [&]() -> std::string {
    if (pos >= bytes.size()) throw FormatError(path + ": unexpected end of PLY header at line " + std::to_string(line_no + 1));
    size_t e = pos;
    while (e < bytes.size() && bytes[e] != '\n') ++e;
    std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(e));
    if (!s.empty() && s.back() == '\r') s.pop_back();
    pos = std::min(bytes.size(), e + 1);
    ++line_no;
    return s;
  };
  auto fail = [&](const std::string& what) { return FormatError(path + ":" + std::to_string(line_no) + ": " + what); };
  if (next_line() != "ply") throw fail("missing 'ply' magic");
  PlyFormat format = PlyFormat::Ascii;
  bool have_format = false;
  std::vector<detail::PlyElement> elements;
  for (;;) {
    std::istringstream ls(next_line());
    std::string kw;
    ls >> kw;
    if (kw == "end_header") break;
    if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
    if (kw == "format") {
      std::string f, v;
      ls >> f >> v;
      if (f == "ascii") format = PlyFormat::Ascii;
      else if (f == "binary_little_endian") format = PlyFormat::BinaryLittleEndian;
      else throw fail("unsupported format '" + f + "'");
      have_format = true;
    } else if (kw == "element") {
      detail::PlyElement e;
      long long n = -1;
      ls >> e.name >> n;
      if (!ls || n < 0) throw fail("malformed element line");
      e.count = static_cast<size_t>(n);
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) throw fail("property before any element");
      std::string type, name;
      ls >> type;
      if (type == "list") {
        if (elements.back().name == "vertex") throw fail("list property in vertex element");
        std::string ct, it;
        ls >> ct >> it >> name;
        elements.back().props.push_back({"list", name});
        continue;
      }
      ls >> name;
      if (!ls || detail::ply_type_size(type) == 0) throw fail("malformed property line");
      elements.back().props.push_back({type, name});
    } else {
      throw fail("unknown header keyword '" + kw + "'");
    }
  }
  if (!have_format) throw FormatError(path + ": PLY header has no format line");
  std::vector<Coord> coords;
  for (const auto& e : elements) {
    const bool vertex = e.name == "vertex";
    int ix = -1, iy = -1, iz = -1;
    for (size_t i = 0; i < e.props.size(); ++i) {
      if (e.props[i].second == "x") ix = static_cast<int>(i);
      if (e.props[i].second == "y") iy = static_cast<int>(i);
      if (e.props[i].second == "z") iz = static_cast<int>(i);
    }
    if (vertex && (ix < 0 || iy < 0 || iz < 0)) throw FormatError(path + ": vertex element lacks x, y or z");
    auto push = [&](double x, double y, double z) {
      auto q = [&](double v) {
        if (!std::isfinite(v) || std::fabs(v) > 2e9) throw FormatError(path + ": coordinate out of range");
        return static_cast<int32_t>(std::round(v)) >> shift;
      };
      coords.push_back({q(x), q(y), q(z)});
    };
    if (format == PlyFormat::Ascii) {
      for (size_t r = 0; r < e.count; ++r) {
        std::istringstream ls(next_line());
        if (!vertex) continue;
        std::vector<double> v(e.props.size());
        for (auto& x : v)
          if (!(ls >> x)) throw fail("too few values in vertex row");
        push(v[static_cast<size_t>(ix)], v[static_cast<size_t>(iy)], v[static_cast<size_t>(iz)]);
      }
    } else {
      for (const auto& p : e.props)
        if (p.first == "list") throw FormatError(path + ": binary list properties before the vertex data are unsupported");
      const size_t stride = e.stride();
      if (bytes.size() - pos < stride * e.count) throw FormatError(path + ": truncated binary PLY body");
      if (vertex) {
        std::vector<size_t> off(e.props.size() + 1, 0);
        for (size_t i = 0; i < e.props.size(); ++i)
          off[i + 1] = off[i] + static_cast<size_t>(detail::ply_type_size(e.props[i].first));
        for (size_t r = 0; r < e.count; ++r) {
          const uint8_t* row = bytes.data() + pos + r * stride;
          auto val = [&](int i) { return detail::read_binary_scalar(row + off[static_cast<size_t>(i)], e.props[static_cast<size_t>(i)].first); };
          push(val(ix), val(iy), val(iz));
        }
      }
      pos += stride * e.count;
    }
    if (vertex) break;
  }
  return make_coords(std::move(coords), 1);
}

/// Writes coordinates as float x, y, z plus optional uchar RGB per point.
inline void write_ply(const std::string& path, const CoordSet& c, PlyFormat format = PlyFormat::Ascii,
                      const std::vector<std::array<uint8_t, 3>>* colors = nullptr) {
  if (colors && colors->size() != c.size()) throw std::invalid_argument("write_ply: color count mismatch");
  std::ostringstream h;
  h << "ply\nformat " << (format == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
    << "element vertex " << c.size() << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (colors) h << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  h << "end_header\n";
  std::string out = h.str();
  if (format == PlyFormat::Ascii) {
    std::ostringstream b;
    for (size_t i = 0; i < c.size(); ++i) {
      b << c[i].x << ' ' << c[i].y << ' ' << c[i].z;
      if (colors) b << ' ' << int((*colors)[i][0]) << ' ' << int((*colors)[i][1]) << ' ' << int((*colors)[i][2]);
      b << '\n';
    }
    out += b.str();
  } else {
    for (size_t i = 0; i < c.size(); ++i) {
      for (float v : {float(c[i].x), float(c[i].y), float(c[i].z)}) {
        char buf[4];
        std::memcpy(buf, &v, 4);
        out.append(buf, 4);
      }
      if (colors)
        for (uint8_t v : (*colors)[i]) out.push_back(static_cast<char>(v));
    }
  }
  write_file(path, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(out.data()), out.size()));
}

// ---- flow export ----

/// Per-point RGB from the channel-mean flow. Components share one symmetric
/// scale: 128 + 127 * v / max|v|, so zero flow is mid-gray and +v / -v map to
/// colours that sum to 256.
inline std::vector<std::array<uint8_t, 3>> flow_colors(const Matrix& flows) {
  if (flows.rows() == 0 || flows.cols() == 0 || flows.cols() % 3) throw std::invalid_argument("flow_colors: bad flow field");
  const Eigen::Index c = flows.cols() / 3;
  Matrix mean = Matrix::Zero(flows.rows(), 3);
  for (Eigen::Index i = 0; i < c; ++i) mean += flows.middleCols(3 * i, 3);
  mean /= static_cast<double>(c);
  const double m = mean.cwiseAbs().maxCoeff();
  std::vector<std::array<uint8_t, 3>> out(static_cast<size_t>(flows.rows()));
  for (Eigen::Index r = 0; r < flows.rows(); ++r)
    for (int a = 0; a < 3; ++a) {
      const double v = m > 0 ? 128.0 + 127.0 * mean(r, a) / m : 128.0;
      out[static_cast<size_t>(r)][a] = static_cast<uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
    }
  return out;
}

inline void export_flow_ply(const std::string& path, const CoordSet& coords, const Matrix& flows,
                            PlyFormat format = PlyFormat::Ascii) {
  if (coords.empty() || static_cast<size_t>(flows.rows()) != coords.size())
    throw std::invalid_argument("export_flow_ply: flow field does not match the coordinates");
  const auto colors = flow_colors(flows);
  write_ply(path, coords, format, &colors);
}

// ---- RD CSV ----

inline constexpr const char* kRdHeader = "lambda,frame,bpp,bpp_flow_low,bpp_flow_high,bpp_residual,bpp_coords,d1_psnr,d2_psnr";

struct RdRow {
  double lambda = 0.0;
  int frame = 0;
  double bpp = 0.0, bpp_flow_low = 0.0, bpp_flow_high = 0.0, bpp_residual = 0.0, bpp_coords = 0.0;
  double d1_psnr = 0.0, d2_psnr = 0.0;
};

inline std::string format_rd_row(const RdRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%g,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.4f,%.4f", r.lambda, r.frame, r.bpp, r.bpp_flow_low,
                r.bpp_flow_high, r.bpp_residual, r.bpp_coords, r.d1_psnr, r.d2_psnr);
  return buf;
}

inline void write_rd_csv(const std::string& path, const std::vector<RdRow>& rows) {
  std::string s = std::string(kRdHeader) + "\n";
  for (const auto& r : rows) s += format_rd_row(r) + "\n";
  write_file(path, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

inline std::vector<RdRow> read_rd_csv(const std::string& path) {
  const auto bytes = read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  int line_no = 1;
  if (!std::getline(in, line)) throw FormatError(path + ": empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRdHeader) throw FormatError(path + ":1: unexpected CSV header");
  std::vector<RdRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    RdRow r;
    char tail = 0;
    const int n = std::sscanf(line.c_str(), "%lf,%d,%lf,%lf,%lf,%lf,%lf,%lf,%lf%c", &r.lambda, &r.frame, &r.bpp,
                              &r.bpp_flow_low, &r.bpp_flow_high, &r.bpp_residual, &r.bpp_coords, &r.d1_psnr,
                              &r.d2_psnr, &tail);
    if (n != 9) throw FormatError(path + ":" + std::to_string(line_no) + ": malformed CSV row");
    rows.push_back(r);
  }
  return rows;
}

}  // namespace hbm::eval
