#pragma once

// Native mesh format, VTK legacy export and CSV node dumps.
//
// Native format (whitespace separated, one record per line):
//
//   morphfit-mesh v1 <dim> <geom> <order> <n_nodes> <n_elems>
//   nodes
//   <x> <y> [<z>]                      n_nodes lines, shortest round-trip decimal
//   elements
//   <id_0> ... <id_{Np-1}>              n_elems lines, lexicographic local order
//   boundary <n_bdr>
//   <elem> <local_face> <attribute>     n_bdr lines
//   material <n_elems>                  optional section
//   <eta>                               n_elems lines

#include "morphfit/mesh.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <sstream>

namespace morphfit {

inline constexpr std::string_view kMeshMagic = "morphfit-mesh";
inline constexpr std::string_view kMeshVersion = "v1";

inline std::string format_double(double v) { return fmt::format("{}", v); }

inline void write_mesh(const HighOrderMesh& mesh, std::ostream& os) {
  const int d = mesh.dim();
  os << fmt::format("{} {} {} {} {} {} {}\n", kMeshMagic, kMeshVersion, d, to_string(mesh.geometry()), mesh.order(),
                    mesh.num_nodes(), mesh.num_elements());
  os << "nodes\n";
  for (int i = 0; i < mesh.num_nodes(); ++i) {
    for (int a = 0; a < d; ++a) {
      if (a) os << ' ';
      os << format_double(mesh.coords()[static_cast<std::size_t>(i) * d + a]);
    }
    os << '\n';
  }
  os << "elements\n";
  for (int e = 0; e < mesh.num_elements(); ++e) {
    auto ids = mesh.element(e);
    for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? " " : "") << ids[i];
    os << '\n';
  }
  os << "boundary " << mesh.boundary_faces().size() << '\n';
  for (const auto& f : mesh.boundary_faces()) os << f.elem << ' ' << f.local_face << ' ' << f.attribute << '\n';
  if (mesh.has_material()) {
    os << "material " << mesh.num_elements() << '\n';
    for (int m : mesh.material()) os << m << '\n';
  }
}

inline void save_mesh(const HighOrderMesh& mesh, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Errc::io_error, "cannot open '" + path + "' for writing");
  write_mesh(mesh, os);
  if (!os) throw Error(Errc::io_error, "write failed for '" + path + "'");
}

namespace detail {

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  std::vector<std::string_view> next(std::string_view what) {
    if (!std::getline(is_, line_)) fail("unexpected end of file, expected " + std::string(what));
    ++lineno_;
    tokens_.clear();
    std::size_t i = 0;
    while (i < line_.size()) {
      while (i < line_.size() && std::isspace(static_cast<unsigned char>(line_[i]))) ++i;
      const std::size_t start = i;
      while (i < line_.size() && !std::isspace(static_cast<unsigned char>(line_[i]))) ++i;
      if (i > start) tokens_.emplace_back(line_.data() + start, i - start);
    }
    return tokens_;
  }

  template <typename T>
  T number(std::string_view tok) const {
    T v{};
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) fail("malformed number '" + std::string(tok) + "'");
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(Errc::parse_error, "line " + std::to_string(lineno_) + ": " + msg);
  }

  void expect_count(const std::vector<std::string_view>& toks, std::size_t n) const {
    if (toks.size() != n)
      fail("expected " + std::to_string(n) + " fields, found " + std::to_string(toks.size()));
  }

  bool eof() {
    return is_.peek() == std::char_traits<char>::eof();
  }

 private:
  std::istream& is_;
  std::string line_;
  std::vector<std::string_view> tokens_;
  int lineno_ = 0;
};

}  // namespace detail

inline HighOrderMesh read_mesh(std::istream& is) {
  detail::LineReader in(is);
  auto head = in.next("header");
  if (head.empty() || head[0] != kMeshMagic) in.fail("not a morphfit mesh file");
  if (head.size() < 2 || head[1] != kMeshVersion)
    throw Error(Errc::unsupported_version,
                "mesh format version '" + std::string(head.size() > 1 ? head[1] : "") + "' (supported: v1)");
  in.expect_count(head, 7);
  const int dim = in.number<int>(head[2]);
  Geometry geom;
  try {
    geom = geometry_from_string(head[3]);
  } catch (const Error&) {
    in.fail("unknown geometry '" + std::string(head[3]) + "'");
  }
  if (geometry_dim(geom) != dim) in.fail("geometry does not match dimension");
  const int order = in.number<int>(head[4]);
  const int nn = in.number<int>(head[5]);
  const int ne = in.number<int>(head[6]);
  if (order < 1 || nn < 0 || ne < 0) in.fail("invalid header values");
  const auto ref = reference_element(geom, order);
  const int np = ref->num_nodes();

  auto tag = in.next("'nodes'");
  if (tag.size() != 1 || tag[0] != "nodes") in.fail("expected 'nodes'");
  std::vector<double> coords;
  coords.reserve(static_cast<std::size_t>(nn) * dim);
  for (int i = 0; i < nn; ++i) {
    auto t = in.next("node coordinates");
    in.expect_count(t, dim);
    for (auto tok : t) coords.push_back(in.number<double>(tok));
  }
  tag = in.next("'elements'");
  if (tag.size() != 1 || tag[0] != "elements") in.fail("expected 'elements'");
  std::vector<int> conn;
  conn.reserve(static_cast<std::size_t>(ne) * np);
  for (int e = 0; e < ne; ++e) {
    auto t = in.next("element connectivity");
    in.expect_count(t, np);
    for (auto tok : t) {
      const int id = in.number<int>(tok);
      if (id < 0 || id >= nn) in.fail("node id out of range");
      conn.push_back(id);
    }
  }
  tag = in.next("'boundary'");
  if (tag.size() != 2 || tag[0] != "boundary") in.fail("expected 'boundary <n>'");
  const int nb = in.number<int>(tag[1]);
  std::vector<BoundaryFace> bdr;
  for (int b = 0; b < nb; ++b) {
    auto t = in.next("boundary face");
    in.expect_count(t, 3);
    BoundaryFace f{in.number<int>(t[0]), in.number<int>(t[1]), in.number<int>(t[2])};
    if (f.elem < 0 || f.elem >= ne || f.local_face < 0 || f.local_face >= num_faces(geom))
      in.fail("boundary face out of range");
    bdr.push_back(f);
  }
  std::vector<int> material;
  if (!in.eof()) {
    tag = in.next("'material'");
    if (!tag.empty()) {
      if (tag.size() != 2 || tag[0] != "material") in.fail("expected 'material <n>'");
      if (in.number<int>(tag[1]) != ne) in.fail("material count != element count");
      for (int e = 0; e < ne; ++e) {
        auto t = in.next("material value");
        in.expect_count(t, 1);
        material.push_back(in.number<int>(t[0]));
      }
    }
  }
  try {
    return HighOrderMesh(geom, order, std::move(coords), std::move(conn), std::move(bdr), std::move(material));
  } catch (const Error& err) {
    throw Error(Errc::parse_error, err.what());
  }
}

inline HighOrderMesh load_mesh(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io_error, "cannot open '" + path + "'");
  return read_mesh(is);
}

// ---------------------------------------------------------------------------
// VTK export: each high-order element is subdivided into linear cells.

namespace detail {

struct LinearCells {
  std::vector<Vec> points;               // reference points
  std::vector<std::vector<int>> cells;   // indices into points
  int vtk_type = 0;
};

inline LinearCells reference_subdivision(Geometry geom, int n) {
  LinearCells out;
  const int d = geometry_dim(geom);
  if (geom == Geometry::quad || geom == Geometry::hex) {
    const int nz = d == 3 ? n : 0;
    auto id = [n](int i, int j, int k) { return i + (n + 1) * (j + (n + 1) * k); };
    for (int k = 0; k <= nz; ++k)
      for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i) {
          Vec p(d);
          p[0] = double(i) / n;
          p[1] = double(j) / n;
          if (d == 3) p[2] = double(k) / n;
          out.points.push_back(p);
        }
    for (int k = 0; k < std::max(nz, 1); ++k)
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          if (d == 2) {
            out.cells.push_back({id(i, j, 0), id(i + 1, j, 0), id(i + 1, j + 1, 0), id(i, j + 1, 0)});
          } else {
            out.cells.push_back({id(i, j, k), id(i + 1, j, k), id(i + 1, j + 1, k), id(i, j + 1, k),
                                 id(i, j, k + 1), id(i + 1, j, k + 1), id(i + 1, j + 1, k + 1), id(i, j + 1, k + 1)});
          }
        }
    out.vtk_type = d == 2 ? 9 : 12;
    return out;
  }
  // simplices: recursive midpoint subdivision (1->4 triangles, 1->8 tets)
  std::vector<std::vector<Vec>> cells;
  {
    std::vector<Vec> root;
    for (int v = 0; v <= d; ++v) {
      Vec p = Vec::Zero(d);
      if (v > 0) p[v - 1] = 1.0;
      root.push_back(p);
    }
    cells.push_back(root);
  }
  int levels = 0;
  while ((1 << levels) < n) ++levels;
  for (int l = 0; l < levels; ++l) {
    std::vector<std::vector<Vec>> next;
    for (const auto& c : cells) {
      auto mid = [&](int a, int b) -> Vec { return 0.5 * (c[a] + c[b]); };
      if (d == 2) {
        const Vec m01 = mid(0, 1), m12 = mid(1, 2), m02 = mid(0, 2);
        next.push_back({c[0], m01, m02});
        next.push_back({m01, c[1], m12});
        next.push_back({m02, m12, c[2]});
        next.push_back({m01, m12, m02});
      } else {
        const Vec m01 = mid(0, 1), m02 = mid(0, 2), m03 = mid(0, 3), m12 = mid(1, 2), m13 = mid(1, 3),
                  m23 = mid(2, 3);
        next.push_back({c[0], m01, m02, m03});
        next.push_back({m01, c[1], m12, m13});
        next.push_back({m02, m12, c[2], m23});
        next.push_back({m03, m13, m23, c[3]});
        next.push_back({m01, m02, m03, m13});
        next.push_back({m01, m02, m12, m13});
        next.push_back({m02, m03, m13, m23});
        next.push_back({m02, m12, m13, m23});
      }
    }
    cells = std::move(next);
  }
  for (const auto& c : cells) {
    std::vector<int> ids;
    for (const Vec& p : c) {
      ids.push_back(static_cast<int>(out.points.size()));
      out.points.push_back(p);
    }
    out.cells.push_back(std::move(ids));
  }
  out.vtk_type = d == 2 ? 5 : 10;
  return out;
}

}  // namespace detail

/// Legacy ASCII VTK unstructured grid of the linearized mesh. Each entry of
/// `cell_data` is a per-element scalar field written as CELL_DATA.
inline void write_vtk(const HighOrderMesh& mesh, std::ostream& os,
                      const std::vector<std::pair<std::string, std::vector<double>>>& cell_data = {},
                      int subdivisions = 0) {
  const int n = subdivisions > 0 ? subdivisions : std::max(1, mesh.order());
  const auto sub = detail::reference_subdivision(mesh.geometry(), n);
  const auto& ref = mesh.reference();
  std::vector<Vector> basis;
  for (const Vec& p : sub.points) basis.push_back(ref.values(p));
  const int ne = mesh.num_elements();
  const std::size_t npts = sub.points.size() * ne;
  const std::size_t ncells = sub.cells.size() * ne;
  os << "# vtk DataFile Version 3.0\nmorphfit mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << npts << " double\n";
  for (int e = 0; e < ne; ++e) {
    const DenseMatrix X = mesh.element_coords(e);
    for (const Vector& w : basis) {
      const Vector x = X * w;
      os << format_double(x[0]) << ' ' << format_double(x[1]) << ' '
         << (mesh.dim() == 3 ? format_double(x[2]) : std::string("0")) << '\n';
    }
  }
  const std::size_t per = sub.cells.front().size();
  os << "CELLS " << ncells << ' ' << ncells * (per + 1) << '\n';
  for (int e = 0; e < ne; ++e)
    for (const auto& c : sub.cells) {
      os << per;
      for (int id : c) os << ' ' << (static_cast<std::size_t>(e) * sub.points.size() + id);
      os << '\n';
    }
  os << "CELL_TYPES " << ncells << '\n';
  for (std::size_t c = 0; c < ncells; ++c) os << sub.vtk_type << '\n';
  os << "CELL_DATA " << ncells << '\n';
  auto write_field = [&](const std::string& name, auto value_of) {
    os << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (int e = 0; e < ne; ++e)
      for (std::size_t c = 0; c < sub.cells.size(); ++c) os << format_double(value_of(e)) << '\n';
  };
  write_field("element", [](int e) { return double(e); });
  if (mesh.has_material()) write_field("material", [&](int e) { return double(mesh.material()[e]); });
  for (const auto& [name, values] : cell_data) write_field(name, [&](int e) { return values.at(e); });
}

inline void save_vtk(const HighOrderMesh& mesh, const std::string& path,
                     const std::vector<std::pair<std::string, std::vector<double>>>& cell_data = {}) {
  std::ofstream os(path);
  if (!os) throw Error(Errc::io_error, "cannot open '" + path + "' for writing");
  write_vtk(mesh, os, cell_data);
}

/// CSV dump of node coordinates: node,x,y[,z].
inline void write_nodes_csv(const HighOrderMesh& mesh, std::ostream& os) {
  const int d = mesh.dim();
  os << "node,x,y" << (d == 3 ? ",z" : "") << '\n';
  for (int i = 0; i < mesh.num_nodes(); ++i) {
    os << i;
    for (int a = 0; a < d; ++a) os << ',' << format_double(mesh.coords()[static_cast<std::size_t>(i) * d + a]);
    os << '\n';
  }
}

}  // namespace morphfit
