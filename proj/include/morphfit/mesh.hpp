#pragma once

// High-order mesh container, element maps and Jacobians, structured mesh
// generation and face topology.
//
// The global coordinate vector is stored node-major: coordinate a of node i
// lives at index i*dim + a. Degree-of-freedom indices in gradients and
// Hessians follow the same layout.

#include "morphfit/common.hpp"
#include "morphfit/refelem.hpp"
#include "morphfit/spatial.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace morphfit {

struct BoundaryFace {
  int elem = 0;
  int local_face = 0;
  int attribute = 1;

  friend bool operator==(const BoundaryFace&, const BoundaryFace&) = default;
};

/// Set of global node ids selected for fitting.
struct NodeSet {
  std::vector<int> ids;  // sorted, unique

  bool empty() const { return ids.empty(); }
  std::size_t size() const { return ids.size(); }
  bool contains(int id) const { return std::binary_search(ids.begin(), ids.end(), id); }
};

class HighOrderMesh {
 public:
  HighOrderMesh() = default;

  HighOrderMesh(Geometry geom, int order, std::vector<double> coords, std::vector<int> connectivity,
                std::vector<BoundaryFace> boundary = {}, std::vector<int> material = {})
      : ref_(reference_element(geom, order)),
        coords_(std::move(coords)),
        conn_(std::move(connectivity)),
        bdr_(std::move(boundary)),
        material_(std::move(material)) {
    const int d = dim();
    if (d < 2) throw Error(Errc::unsupported, "meshes must be 2D or 3D");
    if (coords_.size() % d != 0) throw Error(Errc::invalid_argument, "coordinate vector size not a multiple of dim");
    const int np = nodes_per_element();
    if (conn_.size() % np != 0) throw Error(Errc::invalid_argument, "connectivity size not a multiple of nodes/element");
    const int nn = num_nodes();
    for (int e = 0; e < num_elements(); ++e) {
      auto ids = element(e);
      std::vector<int> sorted(ids.begin(), ids.end());
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw Error(Errc::invalid_argument, "element " + std::to_string(e) + " repeats a node id");
      if (sorted.front() < 0 || sorted.back() >= nn)
        throw Error(Errc::invalid_argument, "element " + std::to_string(e) + " has node id out of range");
    }
    for (const auto& f : bdr_)
      if (f.elem < 0 || f.elem >= num_elements() || f.local_face < 0 || f.local_face >= num_faces(geom))
        throw Error(Errc::invalid_argument, "boundary face references invalid element/face");
    if (!material_.empty() && static_cast<int>(material_.size()) != num_elements())
      throw Error(Errc::invalid_argument, "material indicator count != element count");
  }

  int dim() const { return ref_->dim(); }
  Geometry geometry() const { return ref_->geometry(); }
  int order() const { return ref_->order(); }
  const ReferenceElement& reference() const { return *ref_; }
  std::shared_ptr<const ReferenceElement> reference_ptr() const { return ref_; }

  int num_nodes() const { return static_cast<int>(coords_.size()) / dim(); }
  int num_elements() const { return static_cast<int>(conn_.size()) / nodes_per_element(); }
  int nodes_per_element() const { return ref_->num_nodes(); }
  int num_dofs() const { return static_cast<int>(coords_.size()); }

  std::span<const int> element(int e) const {
    if (e < 0 || e >= num_elements()) throw Error(Errc::bad_element, "element id " + std::to_string(e));
    return {conn_.data() + static_cast<std::size_t>(e) * nodes_per_element(),
            static_cast<std::size_t>(nodes_per_element())};
  }
  const std::vector<int>& connectivity() const { return conn_; }

  const std::vector<double>& coords() const { return coords_; }
  std::vector<double>& coords() { return coords_; }
  void set_coords(std::span<const double> x) {
    if (x.size() != coords_.size()) throw Error(Errc::invalid_argument, "coordinate size mismatch");
    std::copy(x.begin(), x.end(), coords_.begin());
  }

  Vec node(int i) const {
    Vec x(dim());
    for (int a = 0; a < dim(); ++a) x[a] = coords_[static_cast<std::size_t>(i) * dim() + a];
    return x;
  }

  /// d x Np matrix of element node coordinates.
  DenseMatrix element_coords(int e) const { return element_coords(e, coords_); }

  DenseMatrix element_coords(int e, std::span<const double> x) const {
    auto ids = element(e);
    const int d = dim();
    DenseMatrix X(d, ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int a = 0; a < d; ++a) X(a, i) = x[static_cast<std::size_t>(ids[i]) * d + a];
    return X;
  }

  const std::vector<BoundaryFace>& boundary_faces() const { return bdr_; }
  std::vector<BoundaryFace>& boundary_faces() { return bdr_; }

  bool has_material() const { return !material_.empty(); }
  const std::vector<int>& material() const { return material_; }
  void set_material(std::vector<int> m) {
    if (!m.empty() && static_cast<int>(m.size()) != num_elements())
      throw Error(Errc::invalid_argument, "material indicator count != element count");
    material_ = std::move(m);
  }

  /// Global node ids on a local face of an element.
  std::vector<int> face_nodes(int e, int local_face) const {
    auto ids = element(e);
    std::vector<int> out;
    for (int l : ref_->faces()[local_face].nodes) out.push_back(ids[l]);
    return out;
  }

  std::vector<int> face_vertices(int e, int local_face) const {
    auto ids = element(e);
    std::vector<int> out;
    for (int l : ref_->faces()[local_face].vertices) out.push_back(ids[l]);
    return out;
  }

  std::vector<int> element_vertices(int e) const {
    auto ids = element(e);
    std::vector<int> out;
    for (int l : ref_->vertices()) out.push_back(ids[l]);
    return out;
  }

 private:
  std::shared_ptr<const ReferenceElement> ref_;
  std::vector<double> coords_;
  std::vector<int> conn_;
  std::vector<BoundaryFace> bdr_;
  std::vector<int> material_;
};

/// Physical position x = sum_i x_{E,i} w_i(xbar).
inline Vec position(const HighOrderMesh& mesh, int e, const Vec& xb) {
  const DenseMatrix X = mesh.element_coords(e);
  const Vector w = mesh.reference().values(xb);
  return X * w;
}

/// Jacobian A = sum_i x_{E,i} grad(w_i)^T of the element map.
inline Mat jacobian(const HighOrderMesh& mesh, int e, const Vec& xb) {
  const DenseMatrix X = mesh.element_coords(e);
  const BasisEval b = mesh.reference().eval(xb, false);
  return X * b.grads;
}

/// Minimum det(A) over element quadrature points, evaluated for coordinates x.
inline double min_detA(const HighOrderMesh& mesh, std::span<const double> x) {
  double m = std::numeric_limits<double>::infinity();
  const auto& ref = mesh.reference();
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const DenseMatrix X = mesh.element_coords(e, x);
    for (int q = 0; q < ref.quadrature().size(); ++q) {
      const Mat A = X * ref.quad_grads(q);
      m = std::min(m, A.determinant());
    }
  }
  return m;
}

inline double min_detA(const HighOrderMesh& mesh) { return min_detA(mesh, mesh.coords()); }

/// Axis-aligned bounding box of all nodes.
inline std::pair<Vec, Vec> bounding_box(const HighOrderMesh& mesh) {
  Vec lo = Vec::Constant(mesh.dim(), std::numeric_limits<double>::infinity());
  Vec hi = Vec::Constant(mesh.dim(), -std::numeric_limits<double>::infinity());
  for (int i = 0; i < mesh.num_nodes(); ++i) {
    lo = lo.cwiseMin(mesh.node(i));
    hi = hi.cwiseMax(mesh.node(i));
  }
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// Face topology

struct MeshFace {
  int elem[2] = {-1, -1};
  int local_face[2] = {-1, -1};

  bool interior() const { return elem[1] >= 0; }
};

struct FaceTopology {
  std::vector<MeshFace> faces;
  /// neighbor[e][lf]: element across local face lf, or -1 on the boundary.
  std::vector<std::vector<int>> neighbor;
  /// face_of[e][lf]: index into `faces`.
  std::vector<std::vector<int>> face_of;
  /// Faces shared by more than two elements or with mismatching node sets.
  int nonconforming = 0;
};

inline FaceTopology build_faces(const HighOrderMesh& mesh) {
  FaceTopology topo;
  const int nf = num_faces(mesh.geometry());
  topo.neighbor.assign(mesh.num_elements(), std::vector<int>(nf, -1));
  topo.face_of.assign(mesh.num_elements(), std::vector<int>(nf, -1));
  std::map<std::vector<int>, int> index;
  for (int e = 0; e < mesh.num_elements(); ++e) {
    for (int lf = 0; lf < nf; ++lf) {
      std::vector<int> key = mesh.face_vertices(e, lf);
      std::sort(key.begin(), key.end());
      auto [it, inserted] = index.emplace(key, static_cast<int>(topo.faces.size()));
      if (inserted) {
        MeshFace f;
        f.elem[0] = e;
        f.local_face[0] = lf;
        topo.faces.push_back(f);
      } else {
        MeshFace& f = topo.faces[it->second];
        if (f.elem[1] >= 0) {
          ++topo.nonconforming;
          continue;
        }
        f.elem[1] = e;
        f.local_face[1] = lf;
        auto a = mesh.face_nodes(f.elem[0], f.local_face[0]);
        auto b = mesh.face_nodes(e, lf);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        if (a != b) ++topo.nonconforming;
        topo.neighbor[f.elem[0]][f.local_face[0]] = e;
        topo.neighbor[e][lf] = f.elem[0];
      }
      topo.face_of[e][lf] = it->second;
    }
  }
  return topo;
}

/// True when every interior face is shared by exactly two elements with
/// identical global node ids.
inline bool is_conforming(const HighOrderMesh& mesh) { return build_faces(mesh).nonconforming == 0; }

// ---------------------------------------------------------------------------
// Mesh assembly from per-element node positions

/// Builds a mesh by merging coincident element nodes (distance <= tol).
inline HighOrderMesh mesh_from_element_points(Geometry geom, int order,
                                              const std::vector<std::vector<Vec>>& elem_points,
                                              std::vector<int> material = {}, double tol = 1e-10) {
  PointDeduplicator dedup(tol);
  std::vector<int> conn;
  for (const auto& pts : elem_points)
    for (const Vec& p : pts) conn.push_back(dedup.insert(p));
  const int d = geometry_dim(geom);
  std::vector<double> coords;
  coords.reserve(dedup.points().size() * d);
  for (const Vec& p : dedup.points())
    for (int a = 0; a < d; ++a) coords.push_back(p[a]);
  return HighOrderMesh(geom, order, std::move(coords), std::move(conn), {}, std::move(material));
}

/// Boundary faces: faces with a single adjacent element. `attribute_of` maps
/// (element, local face) to an attribute.
template <typename AttributeFn>
std::vector<BoundaryFace> collect_boundary(const FaceTopology& topo, AttributeFn attribute_of) {
  std::vector<BoundaryFace> out;
  for (const MeshFace& f : topo.faces)
    if (!f.interior()) out.push_back({f.elem[0], f.local_face[0], attribute_of(f.elem[0], f.local_face[0])});
  std::sort(out.begin(), out.end(), [](const BoundaryFace& a, const BoundaryFace& b) {
    return std::tie(a.elem, a.local_face) < std::tie(b.elem, b.local_face);
  });
  return out;
}

/// Attribute of a boundary face of the unit box: 2D 1 y=0, 2 x=1, 3 y=1,
/// 4 x=0; 3D 1 z=0, 2 y=0, 3 x=1, 4 y=1, 5 x=0, 6 z=1. Returns 0 when the
/// face does not lie on a box side.
inline int unit_box_side(const HighOrderMesh& mesh, int e, int lf, double tol = 1e-9) {
  const auto verts = mesh.face_vertices(e, lf);
  const int d = mesh.dim();
  auto all = [&](int a, double v) {
    return std::all_of(verts.begin(), verts.end(), [&](int n) { return std::abs(mesh.node(n)[a] - v) < tol; });
  };
  if (d == 2) {
    if (all(1, 0.0)) return 1;
    if (all(0, 1.0)) return 2;
    if (all(1, 1.0)) return 3;
    if (all(0, 0.0)) return 4;
  } else {
    if (all(2, 0.0)) return 1;
    if (all(1, 0.0)) return 2;
    if (all(0, 1.0)) return 3;
    if (all(1, 1.0)) return 4;
    if (all(0, 0.0)) return 5;
    if (all(2, 1.0)) return 6;
  }
  return 0;
}

struct CartesianOptions {
  int tri_split = 2;  // 2 (diagonal) or 4 (through the cell center)
};

/// Maps reference nodes of a simplex through the affine map with the given vertices.
inline std::vector<Vec> affine_simplex_points(const ReferenceElement& ref, const std::vector<Vec>& verts) {
  std::vector<Vec> pts;
  for (const Vec& xb : ref.nodes()) {
    Vec x = verts[0];
    for (int a = 0; a < ref.dim(); ++a) x += xb[a] * (verts[a + 1] - verts[0]);
    pts.push_back(x);
  }
  return pts;
}

/// Unit-domain Cartesian mesh. Triangles split each quad cell in 2 or 4;
/// tetrahedra split each hex into 24 (4 per face, sharing the hex center).
inline HighOrderMesh make_cartesian(int dim, std::vector<int> counts, int order, Geometry geom,
                                    CartesianOptions opts = {}) {
  if (geometry_dim(geom) != dim) throw Error(Errc::unsupported, "geometry does not match dimension");
  if (static_cast<int>(counts.size()) < dim) throw Error(Errc::invalid_argument, "need one count per direction");
  for (int a = 0; a < dim; ++a)
    if (counts[a] < 1) throw Error(Errc::invalid_argument, "counts must be >= 1");
  if (geom == Geometry::tri && opts.tri_split != 2 && opts.tri_split != 4)
    throw Error(Errc::invalid_argument, "tri_split must be 2 or 4");
  auto ref = reference_element(geom, order);
  const int nx = counts[0], ny = counts[1], nz = dim == 3 ? counts[2] : 1;
  std::vector<std::vector<Vec>> elems;
  auto corner = [&](int i, int j, int k) {
    Vec p(dim);
    p[0] = double(i) / nx;
    p[1] = double(j) / ny;
    if (dim == 3) p[2] = double(k) / nz;
    return p;
  };
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const Vec lo = corner(i, j, k);
        Vec h(dim);
        h[0] = 1.0 / nx;
        h[1] = 1.0 / ny;
        if (dim == 3) h[2] = 1.0 / nz;
        if (is_tensor(geom)) {
          std::vector<Vec> pts;
          for (const Vec& xb : ref->nodes()) pts.push_back(lo + xb.cwiseProduct(h));
          elems.push_back(std::move(pts));
        } else if (geom == Geometry::tri) {
          const Vec v00 = corner(i, j, 0), v10 = corner(i + 1, j, 0), v11 = corner(i + 1, j + 1, 0),
                    v01 = corner(i, j + 1, 0);
          if (opts.tri_split == 2) {
            elems.push_back(affine_simplex_points(*ref, {v00, v10, v11}));
            elems.push_back(affine_simplex_points(*ref, {v00, v11, v01}));
          } else {
            const Vec c = 0.25 * (v00 + v10 + v11 + v01);
            elems.push_back(affine_simplex_points(*ref, {v00, v10, c}));
            elems.push_back(affine_simplex_points(*ref, {v10, v11, c}));
            elems.push_back(affine_simplex_points(*ref, {v11, v01, c}));
            elems.push_back(affine_simplex_points(*ref, {v01, v00, c}));
          }
        } else {
          // 24 tets: for each hex face, 4 tets (edge, face center, hex center)
          std::array<Vec, 8> v;
          for (int c = 0; c < 8; ++c) v[c] = corner(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
          Vec center = Vec::Zero(3);
          for (auto& p : v) center += p / 8.0;
          // faces as cyclic vertex loops (bit-indexed corners)
          const int loops[6][4] = {{0, 1, 3, 2}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 3, 7, 6}, {0, 2, 6, 4}, {1, 3, 7, 5}};
          for (const auto& loop : loops) {
            Vec fc = Vec::Zero(3);
            for (int c : loop) fc += v[c] / 4.0;
            for (int s = 0; s < 4; ++s) {
              Vec a = v[loop[s]], b = v[loop[(s + 1) % 4]];
              Mat M(3, 3);
              M.col(0) = b - a;
              M.col(1) = fc - a;
              M.col(2) = center - a;
              if (M.determinant() < 0) std::swap(a, b);
              elems.push_back(affine_simplex_points(*ref, {a, b, fc, center}));
            }
          }
        }
      }
  HighOrderMesh mesh = mesh_from_element_points(geom, order, elems, {}, 1e-10);
  const FaceTopology topo = build_faces(mesh);
  mesh.boundary_faces() = collect_boundary(topo, [&](int e, int lf) { return unit_box_side(mesh, e, lf); });
  return mesh;
}

/// Element index by bounding box, for point location.
inline BoxIndex element_box_index(const HighOrderMesh& mesh, double pad_fraction = 0.05) {
  std::vector<std::pair<Vec, Vec>> boxes;
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const DenseMatrix X = mesh.element_coords(e);
    Vec lo = X.rowwise().minCoeff(), hi = X.rowwise().maxCoeff();
    const double pad = pad_fraction * (hi - lo).maxCoeff() + 1e-12;
    boxes.push_back({Vec(lo.array() - pad), Vec(hi.array() + pad)});
  }
  BoxIndex index;
  index.build(boxes);
  return index;
}

}  // namespace morphfit
