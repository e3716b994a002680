#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "verefine/geometry.hpp"

namespace verefine::io {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- OBJ (v / vn / f, triangles only) -------------------------------------------------------

namespace detail {
/// Parses "v", "v/vt", "v//vn" or "v/vt/vn"; returns 1-based (v, vn) with 0 for missing vn.
inline std::pair<long, long> parse_face_vertex(const std::string& tok) {
  const auto s1 = tok.find('/');
  const long v = std::stol(tok.substr(0, s1));
  if (s1 == std::string::npos) return {v, 0};
  const auto s2 = tok.find('/', s1 + 1);
  if (s2 == std::string::npos || s2 + 1 >= tok.size()) return {v, 0};
  return {v, std::stol(tok.substr(s2 + 1))};
}

inline long resolve_index(long idx, std::size_t count, const char* what) {
  const long n = static_cast<long>(count);
  const long r = idx < 0 ? n + idx : idx - 1;
  if (r < 0 || r >= n) throw IoError(std::string("OBJ: ") + what + " index out of range");
  return r;
}
}  // namespace detail

/// Vertices referenced with different normals are split so that normals stay per vertex.
/// Faces without normals get area-weighted vertex normals.
inline TriangleMesh parse_obj(std::istream& in) {
  std::vector<Vec3> pos, nrm;
  std::vector<std::array<std::pair<long, long>, 3>> faces;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    try {
      if (tag == "v") {
        Vec3 p;
        if (!(ls >> p.x() >> p.y() >> p.z())) throw IoError("bad vertex");
        pos.push_back(p);
      } else if (tag == "vn") {
        Vec3 n;
        if (!(ls >> n.x() >> n.y() >> n.z())) throw IoError("bad normal");
        nrm.push_back(n);
      } else if (tag == "f") {
        std::vector<std::string> toks;
        for (std::string t; ls >> t;) toks.push_back(t);
        if (toks.size() != 3) throw IoError("only triangular faces are supported");
        std::array<std::pair<long, long>, 3> f;
        for (int i = 0; i < 3; ++i) f[i] = detail::parse_face_vertex(toks[i]);
        faces.push_back(f);
      }
    } catch (const std::logic_error&) {
      throw IoError("OBJ: parse error on line " + std::to_string(lineno));
    } catch (const IoError& e) {
      throw IoError("OBJ: " + std::string(e.what()) + " on line " + std::to_string(lineno));
    }
  }

  TriangleMesh mesh;
  std::map<std::pair<long, long>, std::uint32_t> remap;
  std::vector<bool> needs_normal;
  for (const auto& f : faces) {
    std::array<std::uint32_t, 3> tri{};
    for (int i = 0; i < 3; ++i) {
      const long v = detail::resolve_index(f[i].first, pos.size(), "vertex");
      const long n = f[i].second == 0 ? -1 : detail::resolve_index(f[i].second, nrm.size(), "normal");
      auto [it, inserted] = remap.try_emplace({v, n}, static_cast<std::uint32_t>(mesh.vertices.size()));
      if (inserted) {
        mesh.vertices.push_back(pos[v]);
        mesh.normals.push_back(n >= 0 ? Vec3(nrm[n].normalized()) : Vec3::Zero());
        needs_normal.push_back(n < 0);
      }
      tri[i] = it->second;
    }
    mesh.triangles.push_back(tri);
  }
  for (const auto& t : mesh.triangles) {
    const Vec3 fn = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    for (auto i : t)
      if (needs_normal[i]) mesh.normals[i] += fn;
  }
  for (std::size_t i = 0; i < mesh.normals.size(); ++i)
    if (needs_normal[i]) {
      const double len = mesh.normals[i].norm();
      mesh.normals[i] = len > 0.0 ? Vec3(mesh.normals[i] / len) : Vec3::UnitZ();
    }
  mesh.validate();
  return mesh;
}

inline TriangleMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_obj(in);
}

inline void write_obj(std::ostream& out, const TriangleMesh& mesh) {
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& n : mesh.normals) out << "vn " << n.x() << ' ' << n.y() << ' ' << n.z() << '\n';
  for (const auto& t : mesh.triangles) {
    out << 'f';
    for (auto i : t) out << ' ' << i + 1 << "//" << i + 1;
    out << '\n';
  }
}

inline void write_obj(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_obj(out, mesh);
}

// ---- Netpbm ----------------------------------------------------------------------------------

namespace detail {
inline void skip_ws_and_comments(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string dummy;
      std::getline(in, dummy);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

struct PnmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
};

inline PnmHeader read_header(std::istream& in) {
  PnmHeader h;
  in >> h.magic;
  skip_ws_and_comments(in);
  in >> h.width;
  skip_ws_and_comments(in);
  in >> h.height;
  skip_ws_and_comments(in);
  in >> h.maxval;
  in.get();
  if (!in || h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) throw IoError("bad PNM header");
  return h;
}
}  // namespace detail

/// 16-bit binary PGM, value = millimeters, 0 = invalid.
inline void write_depth_pgm(const std::string& path, const DepthImage& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << depth.width() << ' ' << depth.height() << "\n65535\n";
  for (double d : depth.data()) {
    const double mm = depth_valid(d) ? std::round(d * 1000.0) : 0.0;
    const auto v = static_cast<std::uint16_t>(std::clamp(mm, 0.0, 65535.0));
    const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
    out.write(bytes, 2);
  }
}

inline DepthImage read_depth_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const auto h = detail::read_header(in);
  if (h.magic != "P5" || h.maxval < 256) throw IoError(path + ": expected a 16-bit binary PGM");
  DepthImage depth(h.width, h.height, 0.0);
  for (auto& d : depth.data()) {
    unsigned char b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2)) throw IoError(path + ": truncated");
    d = static_cast<double>((b[0] << 8) | b[1]) / 1000.0;
  }
  return depth;
}

inline void write_mask_pgm(const std::string& path, const Mask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << mask.width() << ' ' << mask.height() << "\n255\n";
  for (auto m : mask.data()) out.put(static_cast<char>(m ? 255 : 0));
}

inline Mask read_mask_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const auto h = detail::read_header(in);
  if (h.magic != "P5" || h.maxval > 255) throw IoError(path + ": expected an 8-bit binary PGM");
  Mask mask(h.width, h.height, 0);
  for (auto& m : mask.data()) {
    const int c = in.get();
    if (c == EOF) throw IoError(path + ": truncated");
    m = c != 0;
  }
  return mask;
}

using Rgb = std::array<std::uint8_t, 3>;

inline void write_ppm(const std::string& path, const Image<Rgb>& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  for (const auto& px : img.data()) out.write(reinterpret_cast<const char*>(px.data()), 3);
}

/// Normals mapped component-wise from [-1, 1] to [0, 255]; undefined normals are black.
inline Image<Rgb> normals_to_rgb(const NormalImage& normals) {
  Image<Rgb> img(normals.width(), normals.height(), Rgb{0, 0, 0});
  for (std::size_t i = 0; i < normals.size(); ++i) {
    const Vec3& n = normals[i];
    if (!normal_defined(n)) continue;
    for (int c = 0; c < 3; ++c)
      img[i][c] = static_cast<std::uint8_t>(std::lround(std::clamp((n[c] + 1.0) * 127.5, 0.0, 255.0)));
  }
  return img;
}

/// Values in [0, 1] mapped blue -> green -> red; NaN entries are black.
inline Image<Rgb> heatmap_to_rgb(const Image<double>& values) {
  Image<Rgb> img(values.width(), values.height(), Rgb{0, 0, 0});
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double s = values[i];
    if (std::isnan(s)) continue;
    const double t = std::clamp(s, 0.0, 1.0);
    const double r = std::clamp(2.0 * t - 1.0, 0.0, 1.0);
    const double b = std::clamp(1.0 - 2.0 * t, 0.0, 1.0);
    const double g = 1.0 - r - b;
    img[i] = Rgb{static_cast<std::uint8_t>(std::lround(255 * r)), static_cast<std::uint8_t>(std::lround(255 * g)),
                 static_cast<std::uint8_t>(std::lround(255 * b))};
  }
  return img;
}

}  // namespace verefine::io
