#include <gtest/gtest.h>

#include "morphfit/fitting.hpp"
#include "support.hpp"

#include <numeric>
#include <random>

using namespace morphfit;
using namespace morphfit::testing;

namespace {

Vec v2(double x, double y) {
  Vec p(2);
  p << x, y;
  return p;
}

LevelSetField constant_field(int dim, double c) {
  return LevelSetField::from_function(dim, [dim, c](const Vec&) {
    return LevelSetSample{c, Vec::Zero(dim), Mat::Zero(dim, dim)};
  });
}

// sigma = x_0 - c
LevelSetField plane_field(int dim, double c) {
  return LevelSetField::from_function(dim, [dim, c](const Vec& x) {
    Vec g = Vec::Zero(dim);
    g[0] = 1.0;
    return LevelSetSample{x[0] - c, g, Mat::Zero(dim, dim)};
  });
}

LevelSetField circle_field(double r = 0.3) { return LevelSetField(CsgTree{2, csg::sphere(v2(0.5, 0.5), r)}); }

// Element ids in a Cartesian quad mesh: i + nx * j.
int cell(int i, int j, int nx) { return i + nx * j; }

// Same mesh with elements stored in the order given by perm (new e = perm position).
HighOrderMesh permuted(const HighOrderMesh& m, const std::vector<int>& perm) {
  std::vector<int> conn;
  for (int e : perm)
    for (int n : m.element(e)) conn.push_back(n);
  return HighOrderMesh(m.geometry(), m.order(), m.coords(), std::move(conn));
}

// Quadrature sum of sigma det(A) per element, computed directly from the element map.
double sigma_integral(const HighOrderMesh& m, int e, const LevelSetField& ls) {
  const auto& ref = m.reference();
  double s = 0.0;
  for (int q = 0; q < ref.quadrature().size(); ++q) {
    const Vec xb = ref.quadrature().points[q];
    s += ref.quadrature().weights[q] * jacobian(m, e, xb).determinant() * ls.value(position(m, e, xb));
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Marking

TEST(Marking, ConstantFields) {
  const HighOrderMesh m = make_cartesian(2, {3, 3}, 2, Geometry::quad);
  for (auto mark : {mark_integral, mark_sign_at_max}) {
    for (int v : mark(m, constant_field(2, 1.0))) EXPECT_EQ(v, 0);
    for (int v : mark(m, constant_field(2, -1.0))) EXPECT_EQ(v, 1);
  }
}

TEST(Marking, CircleOnFourByFourQuads) {
  const HighOrderMesh m = make_cartesian(2, {4, 4}, 2, Geometry::quad);
  const LevelSetField ls = circle_field();
  const auto eta = mark_integral(m, ls);
  std::vector<int> inside;
  for (int e = 0; e < m.num_elements(); ++e) {
    EXPECT_EQ(eta[e], sigma_integral(m, e, ls) >= 0.0 ? 0 : 1);
    if (eta[e] == 1) inside.push_back(e);
  }
  EXPECT_EQ(inside, (std::vector<int>{cell(1, 1, 4), cell(2, 1, 4), cell(1, 2, 4), cell(2, 2, 4)}));
}

TEST(Marking, SignAtMaxOnStraddlingElement) {
  // one unit element, sigma = x - 0.3: values in [-0.3, 0.7] with the largest magnitude positive
  const HighOrderMesh m = make_cartesian(2, {1, 1}, 2, Geometry::quad);
  const LevelSetField ls = plane_field(2, 0.3);
  const auto& ref = m.reference();
  double best = -1, val = 0;
  for (int q = 0; q < ref.quadrature().size(); ++q) {
    const double s = ls.value(position(m, 0, ref.quadrature().points[q]));
    if (std::abs(s) > best) best = std::abs(s), val = s;
  }
  ASSERT_GT(val, 0.0);
  EXPECT_EQ(mark_sign_at_max(m, ls)[0], 0);
  EXPECT_EQ(mark_sign_at_max(m, plane_field(2, 0.7))[0], 1);
}

TEST(Marking, RulesAgreeOnSingleSignElements) {
  const HighOrderMesh m = make_cartesian(2, {6, 6}, 2, Geometry::tri);
  const LevelSetField ls = circle_field(0.31);
  const auto a = mark_integral(m, ls), b = mark_sign_at_max(m, ls);
  const auto& ref = m.reference();
  int checked = 0;
  for (int e = 0; e < m.num_elements(); ++e) {
    bool pos = true, neg = true;
    for (int q = 0; q < ref.quadrature().size(); ++q) {
      const double s = ls.value(position(m, e, ref.quadrature().points[q]));
      pos = pos && s > 0;
      neg = neg && s < 0;
    }
    if (pos || neg) {
      EXPECT_EQ(a[e], b[e]);
      ++checked;
    }
  }
  EXPECT_GT(checked, 40);
}

// ---------------------------------------------------------------------------
// Relabeling

TEST(Relabel, QuadOneFaceUnchanged) {
  const HighOrderMesh m = make_cartesian(2, {4, 4}, 1, Geometry::quad);
  std::vector<int> eta(16, 0);
  for (int i = 0; i < 4; ++i) eta[cell(i, 0, 4)] = 1;  // bottom row: one interface face each
  const RelabelResult r = relabel(m, eta);
  EXPECT_EQ(r.eta, eta);
  EXPECT_EQ(r.flipped, 0);
  EXPECT_TRUE(r.split_requests.empty());
}

TEST(Relabel, QuadTwoFacesKeptAndRequested) {
  const HighOrderMesh m = make_cartesian(2, {4, 4}, 1, Geometry::quad);
  std::vector<int> eta(16, 0);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i) eta[cell(i, j, 4)] = 1;
  const RelabelResult r = relabel(m, eta);
  EXPECT_EQ(r.eta, eta);
  EXPECT_EQ(r.split_requests, std::vector<int>{cell(1, 1, 4)});
}

TEST(Relabel, QuadThreeFacesFlipped) {
  const HighOrderMesh m = make_cartesian(2, {4, 4}, 1, Geometry::quad);
  std::vector<int> eta(16, 0);
  eta[cell(1, 1, 4)] = eta[cell(1, 2, 4)] = 1;
  const RelabelResult r = relabel(m, eta);
  // cell (1,1) sees three interface faces and flips first; (1,2) is then isolated
  EXPECT_EQ(r.eta[cell(1, 1, 4)], 0);
  EXPECT_EQ(r.eta[cell(1, 2, 4)], 1);
  EXPECT_EQ(r.flipped, 1);
  EXPECT_EQ(r.split_requests, std::vector<int>{cell(1, 2, 4)});
}

TEST(Relabel, QuadFourFacesKept) {
  const HighOrderMesh m = make_cartesian(2, {3, 3}, 1, Geometry::quad);
  std::vector<int> eta(9, 0);
  eta[cell(1, 1, 3)] = 1;
  const RelabelResult r = relabel(m, eta);
  EXPECT_EQ(r.eta, eta);
  EXPECT_EQ(r.split_requests, std::vector<int>{cell(1, 1, 3)});
}

TEST(Relabel, TriangleBranches) {
  const HighOrderMesh m = make_cartesian(2, {3, 3}, 1, Geometry::tri);
  const FaceTopology topo = build_faces(m);
  int interior = -1;
  for (int e = 0; e < m.num_elements() && interior < 0; ++e)
    if (std::all_of(topo.neighbor[e].begin(), topo.neighbor[e].end(), [](int n) { return n >= 0; })) interior = e;
  ASSERT_GE(interior, 0);
  const auto& nb = topo.neighbor[interior];

  {  // one interface face on each side of a single face: unchanged
    std::vector<int> eta(m.num_elements(), 0);
    eta[nb[0]] = 1;
    std::vector<int> single = eta;
    int boundary_elem = -1;
    for (int e = 0; e < m.num_elements(); ++e)
      if (std::count(topo.neighbor[e].begin(), topo.neighbor[e].end(), -1) == 2) boundary_elem = e;
    ASSERT_GE(boundary_elem, 0);  // corner triangle with a single neighbor
    std::vector<int> corner(m.num_elements(), 0);
    corner[boundary_elem] = 1;
    const RelabelResult r = relabel(m, corner);
    EXPECT_EQ(r.eta, corner);
    EXPECT_TRUE(r.split_requests.empty());
  }
  {  // two of three faces: flipped
    std::vector<int> eta(m.num_elements(), 0);
    eta[nb[0]] = eta[nb[1]] = 1;
    const RelabelResult r = relabel(m, eta);
    EXPECT_EQ(r.eta[interior], 1);
    EXPECT_GE(r.flipped, 1);
  }
  {  // all three faces: kept and requested
    std::vector<int> eta(m.num_elements(), 0);
    eta[interior] = 1;
    const RelabelResult r = relabel(m, eta);
    EXPECT_EQ(r.eta, eta);
    EXPECT_EQ(r.split_requests, std::vector<int>{interior});
  }
}

TEST(Relabel, DeterministicUnderPermutation) {
  for (Geometry g : {Geometry::quad, Geometry::tri}) {
    const HighOrderMesh m = make_cartesian(2, {8, 8}, 2, g);
    const auto eta = mark_integral(m, circle_field());
    const RelabelResult r = relabel(m, eta);
    EXPECT_EQ(relabel(m, eta).eta, r.eta);
    std::vector<int> perm(m.num_elements());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937(7));
    const HighOrderMesh pm = permuted(m, perm);
    std::vector<int> peta(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) peta[k] = eta[perm[k]];
    const RelabelResult pr = relabel(pm, peta);
    for (std::size_t k = 0; k < perm.size(); ++k) EXPECT_EQ(pr.eta[k], r.eta[perm[k]]);
  }
}

TEST(Relabel, ViolationsReportedInThreeD) {
  const HighOrderMesh m = make_cartesian(3, {3, 3, 3}, 1, Geometry::hex);
  std::vector<int> eta(27, 0);
  eta[13] = 1;  // center cell: six interface faces
  EXPECT_EQ(interface_violations(m, eta), std::vector<int>{13});
  EXPECT_EQ(relabel(m, eta).split_requests, std::vector<int>{13});
}

// ---------------------------------------------------------------------------
// Splits

TEST(Split, NoRequestsKeepsMesh) {
  HighOrderMesh m = make_cartesian(2, {3, 3}, 2, Geometry::quad);
  m.set_material(std::vector<int>(9, 0));
  const SplitResult s = split_quads(m, {});
  EXPECT_EQ(s.mesh.num_elements(), 9);
  EXPECT_EQ(s.mesh.num_nodes(), m.num_nodes());
  EXPECT_EQ(s.mesh.boundary_faces().size(), m.boundary_faces().size());
}

TEST(Split, SingleCornerRequest) {
  HighOrderMesh m = make_cartesian(2, {4, 4}, 2, Geometry::quad);
  std::vector<int> eta(16, 0);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i) eta[cell(i, j, 4)] = 1;
  m.set_material(eta);
  const SplitResult s = split_quads(m, {cell(1, 1, 4)});
  EXPECT_EQ(s.applied, std::vector<int>{cell(1, 1, 4)});
  EXPECT_TRUE(s.skipped.empty());
  EXPECT_EQ(s.mesh.num_elements(), 16 + 2 * 4);
  EXPECT_TRUE(is_conforming(s.mesh));
  EXPECT_GT(min_detA(s.mesh), 0.0);
  EXPECT_TRUE(interface_violations(s.mesh, s.mesh.material()).empty());
  // area and boundary preserved
  double area = 0.0;
  const auto& ref = s.mesh.reference();
  for (int e = 0; e < s.mesh.num_elements(); ++e)
    for (int q = 0; q < ref.quadrature().size(); ++q)
      area += ref.quadrature().weights[q] * jacobian(s.mesh, e, ref.quadrature().points[q]).determinant();
  EXPECT_NEAR(area, 1.0, 1e-12);
  std::map<int, int> per_attr;
  for (const auto& f : s.mesh.boundary_faces()) {
    ++per_attr[f.attribute];
    EXPECT_EQ(f.attribute, unit_box_side(s.mesh, f.elem, f.local_face));
  }
  for (int a = 1; a <= 4; ++a) EXPECT_EQ(per_attr[a], 4) << "attribute " << a;
}

TEST(Split, CircleCaseSatisfiesInterfaceRule) {
  HighOrderMesh m = make_cartesian(2, {8, 8}, 2, Geometry::quad);
  const RelabelResult r = relabel(m, mark_integral(m, circle_field()));
  m.set_material(r.eta);
  ASSERT_FALSE(r.split_requests.empty());
  const SplitResult s = split_quads(m, r.split_requests);
  EXPECT_EQ(s.applied, r.split_requests);
  EXPECT_TRUE(s.skipped.empty());
  EXPECT_TRUE(is_conforming(s.mesh));
  EXPECT_GT(min_detA(s.mesh), 0.0);
  EXPECT_TRUE(interface_violations(s.mesh, s.mesh.material()).empty());
  for (std::size_t e = 0; e < s.parent.size(); ++e) EXPECT_EQ(s.mesh.material()[e], r.eta[s.parent[e]]);
}

TEST(Split, RejectsNonQuads) {
  HighOrderMesh m = make_cartesian(2, {2, 2}, 1, Geometry::tri);
  m.set_material(std::vector<int>(8, 0));
  try {
    split_quads(m, {0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unsupported);
  }
}

// ---------------------------------------------------------------------------
// Trimming

TEST(Trim, KeepsSelectedElements) {
  const HighOrderMesh m = make_cartesian(2, {4, 4}, 2, Geometry::quad);
  const auto eta = mark_integral(m, circle_field());
  const HighOrderMesh inner = trim(m, eta, 1);
  EXPECT_EQ(inner.num_elements(), 4);
  EXPECT_EQ(inner.num_nodes(), 25);
  EXPECT_EQ(inner.boundary_faces().size(), 8u);
  for (const auto& f : inner.boundary_faces()) EXPECT_EQ(f.attribute, 5);
  EXPECT_TRUE(is_conforming(inner));

  const HighOrderMesh outer = trim(m, eta, 0);
  EXPECT_EQ(outer.num_elements(), 12);
  int fresh = 0;
  for (const auto& f : outer.boundary_faces()) fresh += f.attribute == 5;
  EXPECT_EQ(fresh, 8);
  EXPECT_EQ(outer.boundary_faces().size(), 24u);
  EXPECT_NEAR(min_detA(outer), min_detA(m), 1e-14);
}

TEST(Trim, NoneIsIdentityAndEmptyThrows) {
  const HighOrderMesh m = make_cartesian(2, {2, 2}, 1, Geometry::quad);
  const HighOrderMesh same = trim(m, {0, 1, 0, 1}, std::nullopt);
  EXPECT_EQ(same.connectivity(), m.connectivity());
  EXPECT_EQ(same.coords(), m.coords());
  EXPECT_EQ(same.material(), (std::vector<int>{0, 1, 0, 1}));
  try {
    trim(m, {0, 0, 0, 0}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_result);
  }
}

// ---------------------------------------------------------------------------
// Fit node selection

TEST(FitNodes, UniformLabelsThrow) {
  const HighOrderMesh m = make_cartesian(2, {2, 2}, 2, Geometry::quad);
  try {
    select_interface_nodes(m, {0, 0, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_fit_set);
  }
}

TEST(FitNodes, TwoElementsShareOneFace) {
  for (int p : {1, 2, 3}) {
    const HighOrderMesh m = make_cartesian(2, {2, 1}, p, Geometry::quad);
    const NodeSet S = select_interface_nodes(m, {0, 1});
    EXPECT_EQ(S.size(), static_cast<std::size_t>(p + 1));
    for (int n : S.ids) EXPECT_NEAR(m.node(n)[0], 0.5, 1e-14);
  }
}

TEST(FitNodes, CircleMatchesFaceScan) {
  for (Geometry g : {Geometry::quad, Geometry::tri}) {
    const HighOrderMesh m = make_cartesian(2, {8, 8}, 2, g);
    const auto eta = relabel(m, mark_integral(m, circle_field())).eta;
    const NodeSet S = select_interface_nodes(m, eta);
    std::set<int> brute;
    const int nf = num_faces(g);
    for (int e = 0; e < m.num_elements(); ++e)
      for (int lf = 0; lf < nf; ++lf) {
        const auto fn = m.face_nodes(e, lf);
        for (int o = 0; o < m.num_elements(); ++o) {
          if (o == e || eta[o] == eta[e]) continue;
          const auto on = m.element(o);
          if (std::all_of(fn.begin(), fn.end(), [&](int n) { return std::find(on.begin(), on.end(), n) != on.end(); }))
            brute.insert(fn.begin(), fn.end());
        }
      }
    EXPECT_EQ(S.ids, std::vector<int>(brute.begin(), brute.end()));
  }
}

TEST(FitNodes, BoundaryAttributes) {
  const HighOrderMesh m = make_cartesian(2, {3, 3}, 2, Geometry::quad);
  EXPECT_EQ(select_boundary_nodes(m, {1}).size(), 7u);
  EXPECT_EQ(select_boundary_nodes(m).size(), 24u);
  EXPECT_EQ(boundary_nodes(m).size(), 24u);
  EXPECT_THROW(select_boundary_nodes(m, {9}), Error);
}

// ---------------------------------------------------------------------------
// Penalty term

TEST(Penalty, HandValues) {
  const LevelSetField ls = plane_field(2, 0.5);
  std::vector<double> x = {0.6, 0.0, 0.5, 1.0, 0.7, 0.3};
  EXPECT_NEAR(objective_sigma(x, 2, NodeSet{{0}}, ls, 1e3), 10.0, 1e-12);
  EXPECT_EQ(objective_sigma(x, 2, NodeSet{{1}}, ls, 1e3), 0.0);
  EXPECT_EQ(objective_sigma(x, 2, NodeSet{{0, 2}}, ls, 0.0), 0.0);
  const Vector g = grad_sigma(x, 2, NodeSet{{2}}, ls, 1.0);
  EXPECT_NEAR(g[4], 0.4, 1e-14);
  EXPECT_EQ(g[5], 0.0);
  EXPECT_EQ(g.head(4).norm(), 0.0);
  EXPECT_EQ(grad_sigma(x, 2, NodeSet{{1}}, ls, 5.0).norm(), 0.0);
  // sigma in {-0.2, 0.05}
  std::vector<double> y = {0.3, 0.1, 0.55, 0.9};
  EXPECT_NEAR(fit_error(y, 2, NodeSet{{0, 1}}, ls), 0.2, 1e-15);
  EXPECT_THROW(fit_error(y, 2, NodeSet{}, ls), Error);
}

TEST(Penalty, DerivativesMatchFiniteDifferences) {
  const LevelSetField ls2 = circle_field();
  const LevelSetField ls3(CsgTree{3, csg::sphere(Vec::Constant(3, 0.5), 0.3)});
  for (int d : {2, 3}) {
    const LevelSetField& ls = d == 2 ? ls2 : ls3;
    for (unsigned seed = 0; seed < 5; ++seed) {
      const HighOrderMesh m = perturbed_mesh(d, d == 2 ? Geometry::quad : Geometry::hex, 2, 3, 0.3, seed);
      std::vector<int> all(m.num_nodes());
      std::iota(all.begin(), all.end(), 0);
      std::mt19937 rng(seed);
      std::shuffle(all.begin(), all.end(), rng);
      std::vector<int> pick(all.begin(), all.begin() + m.num_nodes() / 3);
      std::sort(pick.begin(), pick.end());
      const NodeSet S{pick};
      const double w = 37.0;
      const Vector x = Eigen::Map<const Vector>(m.coords().data(), m.num_dofs());
      auto F = [&](const Vector& y) { return objective_sigma(as_span(y), d, S, ls, w); };
      auto G = [&](const Vector& y) { return grad_sigma(as_span(y), d, S, ls, w); };
      const Vector g = G(x);
      EXPECT_LT(rel_error(g, fd_gradient(F, x, 1e-6)), 1e-6);
      const DenseMatrix H = hess_sigma(as_span(x), d, S, ls, w);
      EXPECT_LT(rel_error(H, fd_jacobian(G, x, 1e-6)), 1e-5);
      EXPECT_LT((H - H.transpose()).norm(), 1e-12);
    }
  }
}

// ---------------------------------------------------------------------------
// Adaptive weight

TEST(Weight, UpdateRule) {
  WeightState st;
  st.w = 1.0;
  EXPECT_FALSE(update_weight(st, 1.0, 0.5));
  EXPECT_EQ(st.w, 1.0);
  EXPECT_EQ(st.n, 1);
  EXPECT_TRUE(update_weight(st, 1.0, 0.9995));
  EXPECT_EQ(st.w, 10.0);
  EXPECT_EQ(st.n, 0);
  double prev = st.w;
  for (int k = 0; k < 20; ++k) {
    update_weight(st, 1.0, k % 2 ? 1.0 : 0.1);
    EXPECT_GE(st.w, prev);
    EXPECT_LE(st.n, st.n_max);
    prev = st.w;
  }
}

TEST(Weight, ConsecutiveCounter) {
  WeightState st;
  st.mode = CounterMode::consecutive;
  EXPECT_TRUE(update_weight(st, 1.0, 1.0));
  EXPECT_TRUE(update_weight(st, 1.0, 1.0));
  EXPECT_EQ(st.n, 2);
  EXPECT_FALSE(update_weight(st, 1.0, 0.5));
  EXPECT_EQ(st.n, 0);
  EXPECT_EQ(st.w, 1000.0);
}

TEST(Weight, FixedWeightNeverChanges) {
  WeightState st;
  st.adaptive = false;
  EXPECT_FALSE(update_weight(st, 1.0, 1.0));
  EXPECT_EQ(st.w, 10.0);
}
