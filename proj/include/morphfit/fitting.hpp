#pragma once

// Material marking, relabeling, conforming quad splits, trimming, fit-node
// selection, the level-set penalty F_sigma and the adaptive weight.

#include "morphfit/levelset.hpp"
#include "morphfit/mesh.hpp"

#include <map>
#include <set>
#include <span>

namespace morphfit {

// ---------------------------------------------------------------------------
// Marking

/// eta_E = 0 when the integral of sigma over E is >= 0, else 1.
inline std::vector<int> mark_integral(const HighOrderMesh& mesh, const LevelSetField& ls) {
  const auto& ref = mesh.reference();
  std::vector<int> eta(mesh.num_elements());
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const DenseMatrix X = mesh.element_coords(e);
    double sum = 0.0;
    for (int q = 0; q < ref.quadrature().size(); ++q) {
      const Vec x = X * ref.quad_values(q);
      const double det = (X * ref.quad_grads(q)).determinant();
      sum += ref.quadrature().weights[q] * det * ls.value(x);
    }
    eta[e] = sum >= 0.0 ? 0 : 1;
  }
  return eta;
}

/// eta_E from the sign of sigma at the quadrature point with the largest |sigma|
/// (first such point on ties): 0 when that value is >= 0, else 1.
inline std::vector<int> mark_sign_at_max(const HighOrderMesh& mesh, const LevelSetField& ls) {
  const auto& ref = mesh.reference();
  std::vector<int> eta(mesh.num_elements());
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const DenseMatrix X = mesh.element_coords(e);
    double best = -1.0, value = 0.0;
    for (int q = 0; q < ref.quadrature().size(); ++q) {
      const double s = ls.value(X * ref.quad_values(q));
      if (std::abs(s) > best) {
        best = std::abs(s);
        value = s;
      }
    }
    eta[e] = value >= 0.0 ? 0 : 1;
  }
  return eta;
}

// ---------------------------------------------------------------------------
// Relabeling

/// Number of faces of e shared with an element of a different label.
inline int interface_face_count(const FaceTopology& topo, const std::vector<int>& eta, int e) {
  int n = 0;
  for (int nb : topo.neighbor[e])
    if (nb >= 0 && eta[nb] != eta[e]) ++n;
  return n;
}

/// Elements with two or more interface faces.
inline std::vector<int> interface_violations(const HighOrderMesh& mesh, const std::vector<int>& eta) {
  const FaceTopology topo = build_faces(mesh);
  std::vector<int> out;
  for (int e = 0; e < mesh.num_elements(); ++e)
    if (interface_face_count(topo, eta, e) >= 2) out.push_back(e);
  return out;
}

struct RelabelResult {
  std::vector<int> eta;
  std::vector<int> split_requests;  // elements still having >= 2 interface faces
  int flipped = 0;
};

/// Two passes (original label 0, then 1; ascending ids): keep when at most
/// one interface face, flip when all but one face are interface faces.
inline RelabelResult relabel(const HighOrderMesh& mesh, const std::vector<int>& eta) {
  if (static_cast<int>(eta.size()) != mesh.num_elements())
    throw Error(Errc::invalid_argument, "material indicator count != element count");
  const FaceTopology topo = build_faces(mesh);
  const int nf = num_faces(mesh.geometry());
  RelabelResult r;
  r.eta = eta;
  for (int pass = 0; pass < 2; ++pass)
    for (int e = 0; e < mesh.num_elements(); ++e) {
      if (eta[e] != pass) continue;
      const int nm = interface_face_count(topo, r.eta, e);
      if (nm > 1 && nm == nf - 1) {
        r.eta[e] = 1 - r.eta[e];
        ++r.flipped;
      }
    }
  for (int e = 0; e < mesh.num_elements(); ++e)
    if (interface_face_count(topo, r.eta, e) >= 2) r.split_requests.push_back(e);
  return r;
}

/// Greedy label repair for meshes without conforming splits: flips an
/// element with >= 2 interface faces, alone or together with a violating
/// neighbor of the same label, when that lowers the number of violations
/// nearby. Sweeps in ascending id until no flip helps.
inline RelabelResult reduce_violations(const HighOrderMesh& mesh, const std::vector<int>& eta, int max_sweeps = 10) {
  if (static_cast<int>(eta.size()) != mesh.num_elements())
    throw Error(Errc::invalid_argument, "material indicator count != element count");
  const FaceTopology topo = build_faces(mesh);
  RelabelResult r;
  r.eta = eta;
  auto violates = [&](int e) { return interface_face_count(topo, r.eta, e) >= 2; };
  auto local_violations = [&](const std::vector<int>& group) {
    std::set<int> near(group.begin(), group.end());
    for (int e : group)
      for (int nb : topo.neighbor[e])
        if (nb >= 0) near.insert(nb);
    return std::count_if(near.begin(), near.end(), violates);
  };
  auto flip = [&](const std::vector<int>& group) {
    for (int e : group) r.eta[e] = 1 - r.eta[e];
  };
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool changed = false;
    for (int e = 0; e < mesh.num_elements(); ++e) {
      if (!violates(e)) continue;
      std::vector<std::vector<int>> candidates = {{e}};
      for (int nb : topo.neighbor[e])
        if (nb >= 0 && r.eta[nb] == r.eta[e] && violates(nb)) candidates.push_back({e, nb});
      for (const auto& group : candidates) {
        const auto before = local_violations(group);
        flip(group);
        if (local_violations(group) < before) {
          r.flipped += static_cast<int>(group.size());
          changed = true;
          break;
        }
        flip(group);
      }
    }
    if (!changed) break;
  }
  for (int e = 0; e < mesh.num_elements(); ++e)
    if (violates(e)) r.split_requests.push_back(e);
  return r;
}

// ---------------------------------------------------------------------------
// Conforming quad splits

struct SplitResult {
  HighOrderMesh mesh;
  std::vector<int> parent;   // parent element of every new element
  std::vector<int> applied;  // requests that were split
  std::vector<int> skipped;  // requests left alone (opposite faces, conflicts)
};

namespace detail {

// Quad faces: 0 y=0, 1 x=1, 2 y=1, 3 x=0. Reference corner shared by two adjacent faces.
inline int shared_quad_corner(int f0, int f1) {
  // corners indexed by bits (x, y): 0 (0,0), 1 (1,0), 2 (0,1), 3 (1,1)
  const std::set<int> s = {f0, f1};
  if (s == std::set<int>{0, 1}) return 1;
  if (s == std::set<int>{1, 2}) return 3;
  if (s == std::set<int>{2, 3}) return 2;
  if (s == std::set<int>{3, 0}) return 0;
  return -1;
}

// Reference vertices are stored as the cycle (0,0), (1,0), (1,1), (0,1); maps cycle index <-> bit index.
inline constexpr int quad_cycle_bits[4] = {0, 1, 3, 2};

inline Vec quad_corner_point(int corner) {
  Vec p(2);
  p << (corner & 1 ? 1.0 : 0.0), (corner & 2 ? 1.0 : 0.0);
  return p;
}

// Three sub-quads of the reference square cutting off `corner`: the corner
// keeps a small quad, the opposite corner's two faces go to different children.
inline std::vector<std::array<Vec, 4>> corner_cut_children(int corner) {
  auto P = [](double x, double y) {
    Vec p(2);
    p << x, y;
    return p;
  };
  // template for the corner (1,1)
  std::vector<std::array<Vec, 4>> kids = {
      {P(0, 0), P(1, 0), P(1, 0.5), P(0.5, 0.5)},
      {P(0.5, 0.5), P(1, 0.5), P(1, 1), P(0.5, 1)},
      {P(0, 0), P(0.5, 0.5), P(0.5, 1), P(0, 1)},
  };
  const bool fx = !(corner & 1), fy = !(corner & 2);
  for (auto& k : kids) {
    for (Vec& p : k) {
      if (fx) p[0] = 1.0 - p[0];
      if (fy) p[1] = 1.0 - p[1];
    }
    if (fx != fy) std::swap(k[1], k[3]);  // a single reflection flips orientation
  }
  return kids;
}

// Reference points of a child quad's nodes: bilinear map of its corner cycle.
inline Vec bilinear(const std::array<Vec, 4>& c, const Vec& xi) {
  // cycle order: (0,0), (1,0), (1,1), (0,1)
  return (1 - xi[0]) * (1 - xi[1]) * c[0] + xi[0] * (1 - xi[1]) * c[1] + xi[0] * xi[1] * c[2] +
         (1 - xi[0]) * xi[1] * c[3];
}

}  // namespace detail

/// Splits requested quads so that the vertex joining their two interface
/// faces is bisected. Each request cuts the corner opposite that vertex in
/// every quad around the opposite vertex, which keeps the mesh conforming.
/// Children inherit the parent's material and boundary attributes.
inline SplitResult split_quads(const HighOrderMesh& mesh, const std::vector<int>& requests) {
  if (mesh.geometry() != Geometry::quad) throw Error(Errc::unsupported, "conforming splits are implemented for quads only");
  if (!mesh.has_material()) throw Error(Errc::invalid_argument, "split_quads needs material indicators");
  const FaceTopology topo = build_faces(mesh);
  const auto& eta = mesh.material();
  const auto& ref = mesh.reference();
  // vertex node -> elements having it as a corner
  std::map<int, std::vector<int>> ring;
  auto corner_of = [&](int e, int node) {
    const auto& verts = ref.vertices();
    for (int k = 0; k < 4; ++k)
      if (mesh.element(e)[verts[k]] == node) return detail::quad_cycle_bits[k];
    return -1;
  };
  for (int e = 0; e < mesh.num_elements(); ++e)
    for (int v : mesh.element_vertices(e)) ring[v].push_back(e);

  SplitResult out;
  std::vector<int> cut(mesh.num_elements(), -1);  // corner to cut per element
  std::map<int, int> bad_corner;                  // element -> corner joining its interface faces
  std::vector<std::pair<int, int>> plan;          // (request, opposite vertex node)
  for (int e : requests) {
    std::vector<int> faces;
    for (int lf = 0; lf < 4; ++lf) {
      const int nb = topo.neighbor[e][lf];
      if (nb >= 0 && eta[nb] != eta[e]) faces.push_back(lf);
    }
    const int c = faces.size() == 2 ? detail::shared_quad_corner(faces[0], faces[1]) : -1;
    if (c < 0) {
      out.skipped.push_back(e);
      continue;
    }
    bad_corner[e] = c;
    plan.push_back({e, mesh.element(e)[ref.vertices()[detail::quad_cycle_bits[3 - c]]]});
  }
  for (auto [e, vopp] : plan) {
    bool ok = true;
    for (int r : ring[vopp]) {
      const int k = corner_of(r, vopp);
      if (cut[r] >= 0 && cut[r] != k) ok = false;
      auto it = bad_corner.find(r);
      if (it != bad_corner.end() && it->second == k) ok = false;
    }
    if (!ok) {
      out.skipped.push_back(e);
      continue;
    }
    for (int r : ring[vopp]) cut[r] = corner_of(r, vopp);
    out.applied.push_back(e);
  }

  std::vector<std::vector<Vec>> elems;
  std::vector<int> material;
  // per new element: reference corner cycle inside the parent, to recover boundary faces
  std::vector<std::array<Vec, 4>> cycles;
  const std::array<Vec, 4> whole = {detail::quad_corner_point(0), detail::quad_corner_point(1),
                                    detail::quad_corner_point(3), detail::quad_corner_point(2)};
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const DenseMatrix X = mesh.element_coords(e);
    const auto kids = cut[e] >= 0 ? detail::corner_cut_children(cut[e]) : std::vector<std::array<Vec, 4>>{whole};
    for (const auto& k : kids) {
      std::vector<Vec> pts;
      for (const Vec& xi : ref.nodes()) pts.push_back(X * ref.values(detail::bilinear(k, xi)));
      elems.push_back(std::move(pts));
      material.push_back(eta[e]);
      out.parent.push_back(e);
      cycles.push_back(k);
    }
  }
  std::sort(out.skipped.begin(), out.skipped.end());
  HighOrderMesh m = mesh_from_element_points(Geometry::quad, mesh.order(), elems, material, 1e-10);
  std::map<std::pair<int, int>, int> attr;
  for (const auto& f : mesh.boundary_faces()) attr[{f.elem, f.local_face}] = f.attribute;
  const FaceTopology nt = build_faces(m);
  // child face lf runs between cycle corners; find the parent face containing its midpoint
  static const int face_cycle[4][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3}};
  m.boundary_faces() = collect_boundary(nt, [&](int e, int lf) {
    const auto& k = cycles[e];
    const Vec mid = 0.5 * (k[face_cycle[lf][0]] + k[face_cycle[lf][1]]);
    int pf = -1;
    if (std::abs(mid[1]) < 1e-12) pf = 0;
    else if (std::abs(mid[0] - 1) < 1e-12) pf = 1;
    else if (std::abs(mid[1] - 1) < 1e-12) pf = 2;
    else if (std::abs(mid[0]) < 1e-12) pf = 3;
    auto it = attr.find({out.parent[e], pf});
    return it == attr.end() ? 0 : it->second;
  });
  out.mesh = std::move(m);
  return out;
}

// ---------------------------------------------------------------------------
// Trimming

/// Submesh of elements with eta == keep (all elements when keep is empty).
/// Faces that become boundary get attribute max(existing) + 1.
inline HighOrderMesh trim(const HighOrderMesh& mesh, const std::vector<int>& eta, std::optional<int> keep) {
  if (static_cast<int>(eta.size()) != mesh.num_elements())
    throw Error(Errc::invalid_argument, "material indicator count != element count");
  if (!keep) {
    HighOrderMesh m = mesh;
    m.set_material(eta);
    return m;
  }
  std::vector<int> kept;
  for (int e = 0; e < mesh.num_elements(); ++e)
    if (eta[e] == *keep) kept.push_back(e);
  if (kept.empty()) throw Error(Errc::empty_result, "trim removed every element");
  std::vector<int> new_id(mesh.num_elements(), -1), node_map(mesh.num_nodes(), -1);
  std::vector<int> conn;
  std::vector<double> coords;
  const int d = mesh.dim();
  for (std::size_t i = 0; i < kept.size(); ++i) {
    new_id[kept[i]] = static_cast<int>(i);
    for (int n : mesh.element(kept[i])) {
      if (node_map[n] < 0) {
        node_map[n] = static_cast<int>(coords.size()) / d;
        for (int a = 0; a < d; ++a) coords.push_back(mesh.coords()[static_cast<std::size_t>(n) * d + a]);
      }
      conn.push_back(node_map[n]);
    }
  }
  int max_attr = 0;
  std::map<std::pair<int, int>, int> attr;
  for (const auto& f : mesh.boundary_faces()) {
    max_attr = std::max(max_attr, f.attribute);
    if (new_id[f.elem] >= 0) attr[{new_id[f.elem], f.local_face}] = f.attribute;
  }
  HighOrderMesh m(mesh.geometry(), mesh.order(), std::move(coords), std::move(conn), {},
                  std::vector<int>(kept.size(), *keep));
  const FaceTopology topo = build_faces(m);
  m.boundary_faces() = collect_boundary(topo, [&](int e, int lf) {
    auto it = attr.find({e, lf});
    return it == attr.end() ? max_attr + 1 : it->second;
  });
  return m;
}

// ---------------------------------------------------------------------------
// Fit node selection

inline NodeSet make_node_set(std::set<int> ids) { return NodeSet{std::vector<int>(ids.begin(), ids.end())}; }

/// Nodes on faces shared by elements with different labels.
inline NodeSet select_interface_nodes(const HighOrderMesh& mesh, const std::vector<int>& eta) {
  if (static_cast<int>(eta.size()) != mesh.num_elements())
    throw Error(Errc::invalid_argument, "material indicator count != element count");
  const FaceTopology topo = build_faces(mesh);
  std::set<int> ids;
  for (const MeshFace& f : topo.faces)
    if (f.interior() && eta[f.elem[0]] != eta[f.elem[1]])
      for (int n : mesh.face_nodes(f.elem[0], f.local_face[0])) ids.insert(n);
  if (ids.empty()) throw Error(Errc::empty_fit_set, "no material interface faces");
  return make_node_set(std::move(ids));
}

/// Nodes on boundary faces whose attribute is listed (all boundary faces when empty).
inline NodeSet select_boundary_nodes(const HighOrderMesh& mesh, const std::vector<int>& attributes = {}) {
  std::set<int> ids;
  for (const auto& f : mesh.boundary_faces())
    if (attributes.empty() || std::find(attributes.begin(), attributes.end(), f.attribute) != attributes.end())
      for (int n : mesh.face_nodes(f.elem, f.local_face)) ids.insert(n);
  if (ids.empty()) throw Error(Errc::empty_fit_set, "no boundary faces with the selected attributes");
  return make_node_set(std::move(ids));
}

/// Nodes on any boundary face.
inline std::vector<int> boundary_nodes(const HighOrderMesh& mesh) {
  std::set<int> ids;
  for (const auto& f : mesh.boundary_faces())
    for (int n : mesh.face_nodes(f.elem, f.local_face)) ids.insert(n);
  return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------------------
// Penalty term

inline Vec node_position(std::span<const double> x, int dim, int node) {
  Vec p(dim);
  for (int a = 0; a < dim; ++a) p[a] = x[static_cast<std::size_t>(node) * dim + a];
  return p;
}

/// Level-set samples at the fitted nodes for coordinates x.
inline std::vector<LevelSetSample> sample_nodes(std::span<const double> x, int dim, const NodeSet& S,
                                                const LevelSetField& ls) {
  std::vector<LevelSetSample> out;
  out.reserve(S.size());
  for (int s : S.ids) out.push_back(ls.eval(node_position(x, dim, s)));
  return out;
}

inline double fit_error(std::span<const double> x, int dim, const NodeSet& S, const LevelSetField& ls) {
  if (S.empty()) throw Error(Errc::empty_fit_set, "fit error of an empty node set");
  double m = 0.0;
  for (int s : S.ids) m = std::max(m, std::abs(ls.value(node_position(x, dim, s))));
  return m;
}

/// F_sigma = w sum_s sigma(x_s)^2.
inline double objective_sigma(std::span<const double> x, int dim, const NodeSet& S, const LevelSetField& ls, double w) {
  double sum = 0.0;
  for (int s : S.ids) {
    const double v = ls.value(node_position(x, dim, s));
    sum += v * v;
  }
  return w * sum;
}

/// Gradient 2 w sigma grad(sigma) placed at the fitted nodes' slots.
inline Vector grad_sigma(std::span<const double> x, int dim, const NodeSet& S, const LevelSetField& ls, double w) {
  Vector g = Vector::Zero(static_cast<Eigen::Index>(x.size()));
  for (int s : S.ids) {
    const LevelSetSample v = ls.eval(node_position(x, dim, s));
    for (int a = 0; a < dim; ++a) g[static_cast<Eigen::Index>(s) * dim + a] = 2.0 * w * v.value * v.grad[a];
  }
  return g;
}

/// Hessian 2 w (grad(sigma) grad(sigma)^T + sigma hess(sigma)), one d x d block per fitted node.
inline std::vector<Triplet> hess_sigma_triplets(const std::vector<LevelSetSample>& samples, int dim, const NodeSet& S,
                                                double w) {
  std::vector<Triplet> t;
  for (std::size_t k = 0; k < S.size(); ++k) {
    const LevelSetSample& v = samples[k];
    const Mat B = 2.0 * w * (v.grad * v.grad.transpose() + v.value * v.hess);
    const int base = S.ids[k] * dim;
    for (int a = 0; a < dim; ++a)
      for (int b = 0; b < dim; ++b) t.emplace_back(base + a, base + b, B(a, b));
  }
  return t;
}

inline SparseMatrix hess_sigma(std::span<const double> x, int dim, const NodeSet& S, const LevelSetField& ls, double w) {
  const auto t = hess_sigma_triplets(sample_nodes(x, dim, S, ls), dim, S, w);
  SparseMatrix H(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(x.size()));
  H.setFromTriplets(t.begin(), t.end());
  return H;
}

// ---------------------------------------------------------------------------
// Adaptive weight

enum class CounterMode {
  algorithm,     // reset on adaptation, count otherwise
  consecutive,   // count consecutive adaptations, reset otherwise
};

struct WeightState {
  double w = 10.0;
  double alpha = 10.0;
  double eps_dsigma = 1e-3;
  int n = 0;
  int n_max = 10;
  bool adaptive = true;
  CounterMode mode = CounterMode::algorithm;
};

/// Scales w by alpha when the relative decrease of the fit error is below
/// eps_dsigma. Returns true when the weight changed.
inline bool update_weight(WeightState& st, double err_k, double err_k1) {
  if (!st.adaptive) return false;
  const bool stagnant = err_k1 > 0.0 ? (err_k - err_k1) / err_k1 < st.eps_dsigma : false;
  if (stagnant) st.w *= st.alpha;
  if (st.mode == CounterMode::algorithm)
    st.n = stagnant ? 0 : st.n + 1;
  else
    st.n = stagnant ? st.n + 1 : 0;
  st.n = std::min(st.n, st.n_max);
  return stagnant;
}

}  // namespace morphfit
