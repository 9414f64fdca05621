#include <gtest/gtest.h>

#include "morphfit/solver.hpp"
#include "support.hpp"

#include <random>
#include <sstream>

using namespace morphfit;
using namespace morphfit::testing;

namespace {

Vec v2(double x, double y) {
  Vec p(2);
  p << x, y;
  return p;
}

SparseMatrix sparse(const DenseMatrix& A) { return A.sparseView(); }

// Every accepted iterate against the five line-search constraints.
void expect_constraints(const SolverReport& rep, const SolverConfig& cfg, bool fitting) {
  auto below = [&](double v, double ref) { return ref > 0 ? v < cfg.growth * ref : v <= ref; };
  for (const auto& r : rep.iterations) {
    const TrialState& b = r.before;
    const TrialState& a = r.accepted;
    EXPECT_GT(r.alpha, 0.0);
    EXPECT_LE(r.alpha, 1.0);
    EXPECT_TRUE(below(a.F, b.F));
    EXPECT_TRUE(below(a.grad_norm, b.grad_norm));
    EXPECT_GT(a.min_det, 0.0);
    if (fitting) {
      EXPECT_TRUE(below(a.fit_error, b.fit_error));
    }
    EXPECT_GT(a.min_det, cfg.det_floor * rep.initial_min_det);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// MINRES

TEST(Minres, IdentityAndDiagonal) {
  const Vector b = Vector::LinSpaced(6, -2.0, 3.0);
  const MinresResult r = minres_jacobi(sparse(DenseMatrix::Identity(6, 6)), b, 1e-12, 50);
  EXPECT_TRUE(r.converged);
  EXPECT_LT((r.x - b).norm(), 1e-14);
  Vector d(6);
  d << 1, -2, 3, 0.5, -7, 10;
  const MinresResult rd = minres_jacobi(sparse(d.asDiagonal().toDenseMatrix()), b, 1e-12, 50);
  EXPECT_LT((rd.x - b.cwiseQuotient(d)).norm(), 1e-13);
}

TEST(Minres, RandomSpdMatchesDirectSolve) {
  std::mt19937 rng(3);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 10; ++trial) {
    DenseMatrix B(5, 5);
    for (int i = 0; i < 25; ++i) B.data()[i] = n01(rng);
    const DenseMatrix A = B * B.transpose() + 0.5 * DenseMatrix::Identity(5, 5);
    Vector b(5);
    for (int i = 0; i < 5; ++i) b[i] = n01(rng);
    const Vector x = A.ldlt().solve(b);
    const MinresResult r = minres_jacobi(sparse(A), b, 1e-12, 100);
    EXPECT_TRUE(r.converged);
    EXPECT_LT((r.x - x).norm() / x.norm(), 1e-8);
  }
}

TEST(Minres, SymmetricIndefinite) {
  DenseMatrix A(4, 4);
  A << 2, 1, 0, 0, 1, -3, 1, 0, 0, 1, 4, 1, 0, 0, 1, -1;
  Vector b(4);
  b << 1, 2, 3, 4;
  const MinresResult r = minres_jacobi(sparse(A), b, 1e-12, 100);
  EXPECT_LT((r.x - A.fullPivLu().solve(b)).norm(), 1e-9);
}

TEST(Minres, ZeroDiagonalWarnsAndSolves) {
  DenseMatrix A(2, 2);
  A << 0, 1, 1, 0;
  Vector b(2);
  b << 1, 2;
  std::vector<std::string> msgs;
  auto old = warning_handler();
  warning_handler() = [&](std::string_view m) { msgs.emplace_back(m); };
  const MinresResult r = minres_jacobi(sparse(A), b, 1e-12, 10);
  warning_handler() = old;
  EXPECT_EQ(msgs.size(), 1u);
  EXPECT_LT((r.x - Vector::Map(std::vector<double>{2, 1}.data(), 2)).norm(), 1e-12);
}

TEST(Minres, IterationCapFlagsNonConvergence) {
  const int n = 50;
  DenseMatrix A = DenseMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    A(i, i) = 2;
    if (i + 1 < n) A(i, i + 1) = A(i + 1, i) = -1;
  }
  const MinresResult r = minres_jacobi(sparse(A), Vector::Ones(n), 1e-12, 3);
  EXPECT_EQ(r.iterations, 3);
  EXPECT_FALSE(r.converged);
  EXPECT_TRUE(r.x.allFinite());
}

// ---------------------------------------------------------------------------
// Line search

TEST(LineSearch, ZeroStepAcceptsFullStep) {
  const HighOrderMesh m = perturbed_mesh(2, Geometry::quad, 2, 3, 0.3, 1);
  FitProblem P(m, {}, Metric{MetricKind::mu2}, nullptr, {}, boundary_nodes(m));
  const Vector x = Eigen::Map<const Vector>(m.coords().data(), m.num_dofs());
  TrialState cur = detail::evaluate_state(P, x, 0.0);
  const LineSearchResult r = line_search(P, x, Vector::Zero(x.size()), 0.0, cur, cur.min_det, SolverConfig{});
  EXPECT_TRUE(r.accepted);
  EXPECT_EQ(r.alpha, 1.0);
}

TEST(LineSearch, InvertingStepIsHalved) {
  // two unit quads; moving the shared middle-right node far left inverts the right element at alpha = 1
  const HighOrderMesh m = make_cartesian(2, {2, 1}, 1, Geometry::quad);
  FitProblem P(m, {}, Metric{MetricKind::mu2}, nullptr, {}, {});
  const Vector x = Eigen::Map<const Vector>(m.coords().data(), m.num_dofs());
  int mid_top = -1;
  for (int n = 0; n < m.num_nodes(); ++n)
    if (std::abs(m.node(n)[0] - 0.5) < 1e-12 && std::abs(m.node(n)[1] - 1.0) < 1e-12) mid_top = n;
  ASSERT_GE(mid_top, 0);
  Vector dx = Vector::Zero(x.size());
  dx[2 * mid_top] = -0.8;  // x_new = 0.5 + 0.8 alpha: inverted right element at alpha = 1, valid at 0.5
  const TrialState cur = detail::evaluate_state(P, x, 0.0);
  SolverConfig cfg;
  cfg.growth = 1e6;  // isolate the determinant constraints
  const LineSearchResult r = line_search(P, x, dx, 0.0, cur, cur.min_det, cfg);
  ASSERT_TRUE(r.accepted);
  EXPECT_LE(r.alpha, 0.5);
  EXPECT_GT(min_detA(m, as_span(r.x)), 1e-3 * cur.min_det);
}

TEST(LineSearch, ObjectiveGrowthRejected) {
  const HighOrderMesh m = make_cartesian(2, {2, 2}, 2, Geometry::quad);
  FitProblem P(m, {}, Metric{MetricKind::mu2}, nullptr, {}, boundary_nodes(m));
  const Vector x = Eigen::Map<const Vector>(m.coords().data(), m.num_dofs());
  const TrialState cur = detail::evaluate_state(P, x, 0.0);
  ASSERT_NEAR(cur.F, 0.0, 1e-13);
  // any motion of an interior node of the ideal mesh increases F from zero; only tiny steps survive
  Vector dx = Vector::Zero(x.size());
  for (int n = 0; n < m.num_nodes(); ++n)
    if (std::abs(m.node(n)[0] - 0.5) < 1e-12 && std::abs(m.node(n)[1] - 0.5) < 1e-12) dx[2 * n] = 0.1;
  const LineSearchResult r = line_search(P, x, dx, 0.0, cur, cur.min_det, SolverConfig{});
  EXPECT_FALSE(r.accepted);
}

// ---------------------------------------------------------------------------
// Newton, quality only

TEST(NewtonQuality, IdealMeshStopsImmediately) {
  const HighOrderMesh m = make_cartesian(2, {3, 3}, 2, Geometry::quad);
  const NewtonResult r = newton_quality(m, {}, Metric{MetricKind::mu2});
  EXPECT_EQ(r.report.iterations.size(), 0u);
  EXPECT_EQ(r.report.reason, Termination::gradient_tolerance);
}

TEST(NewtonQuality, PerturbedMeshConverges) {
  struct Case {
    Geometry g;
    int dim, order;
    MetricKind mu;
  };
  for (const Case& c : {Case{Geometry::quad, 2, 2, MetricKind::mu2}, Case{Geometry::quad, 2, 3, MetricKind::mu80},
                        Case{Geometry::tri, 2, 2, MetricKind::mu2}, Case{Geometry::hex, 3, 2, MetricKind::mu303}}) {
    const HighOrderMesh m = perturbed_mesh(c.dim, c.g, c.order, 3, 0.4, 11);
    SolverConfig cfg;
    cfg.max_iter = 100;
    // mu80 is not scale invariant: target the Cartesian cell size
    const TargetSpec target{c.g == Geometry::tri ? TargetKind::ideal_simplex : TargetKind::identity,
                            c.mu == MetricKind::mu80 ? 1.0 / 3.0 : 1.0};
    Metric mu{c.mu};
    const NewtonResult r = newton_quality(m, target, mu, cfg);
    EXPECT_EQ(r.report.reason, Termination::gradient_tolerance) << to_string(r.report.reason);
    // the line search tolerates bounded growth of F; shape metrics here decrease monotonically
    if (c.mu != MetricKind::mu80) {
      double prev = r.report.initial.F_mu;
      for (const auto& it : r.report.iterations) {
        EXPECT_LE(it.F_mu, prev * (1 + 1e-12));
        prev = it.F_mu;
      }
    }
    EXPECT_LE(r.report.iterations.back().grad_norm, 1e-10 * r.report.initial.grad_norm);
    expect_constraints(r.report, cfg, false);
    // boundary nodes untouched
    for (int n : boundary_nodes(m))
      for (int a = 0; a < c.dim; ++a)
        EXPECT_EQ(r.coords[static_cast<std::size_t>(n) * c.dim + a], m.coords()[static_cast<std::size_t>(n) * c.dim + a]);
  }
}

TEST(NewtonQuality, Reproducible) {
  const HighOrderMesh m = perturbed_mesh(2, Geometry::quad, 2, 4, 0.4, 5);
  const NewtonResult a = newton_quality(m, {}, Metric{MetricKind::mu2});
  const NewtonResult b = newton_quality(m, {}, Metric{MetricKind::mu2});
  EXPECT_EQ(a.coords, b.coords);
  std::ostringstream sa, sb;
  write_report_csv(sa, a.report);
  write_report_csv(sb, b.report);
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(NewtonQuality, RejectsInvertedMesh) {
  HighOrderMesh m = make_cartesian(2, {1, 1}, 1, Geometry::quad);
  std::swap(m.coords()[0], m.coords()[2]);
  try {
    newton_quality(m, {}, Metric{MetricKind::mu2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_mesh);
  }
}

// ---------------------------------------------------------------------------
// Newton with fitting

namespace {

struct CircleCase {
  HighOrderMesh mesh;
  NodeSet S;
};

CircleCase circle_case(Geometry g, int n, int order, const LevelSetField& ls) {
  HighOrderMesh m = make_cartesian(2, {n, n}, order, g);
  const RelabelResult r = relabel(m, mark_integral(m, ls));
  m.set_material(r.eta);
  if (g == Geometry::quad && !r.split_requests.empty()) m = split_quads(m, r.split_requests).mesh;
  NodeSet S = select_interface_nodes(m, m.material());
  return {std::move(m), std::move(S)};
}

}  // namespace

TEST(NewtonFit, AlreadyFittedReturnsImmediately) {
  const HighOrderMesh m = make_cartesian(2, {4, 4}, 2, Geometry::quad);
  const LevelSetField ls = LevelSetField::from_function(2, [](const Vec& x) {
    Vec g(2);
    g << 1.0, 0.0;
    return LevelSetSample{x[0] - 0.5, g, Mat::Zero(2, 2)};
  });
  const NodeSet S = select_interface_nodes(m, mark_integral(m, ls));
  const NewtonResult r = newton_fit(m, {}, Metric{MetricKind::mu2}, ls, S, WeightState{});
  EXPECT_EQ(r.report.iterations.size(), 0u);
  EXPECT_EQ(r.report.reason, Termination::fit_tolerance);
}

TEST(NewtonFit, EmptySetThrows) {
  const HighOrderMesh m = make_cartesian(2, {2, 2}, 1, Geometry::quad);
  const LevelSetField ls(CsgTree{2, csg::sphere(v2(0.5, 0.5), 0.3)});
  try {
    newton_fit(m, {}, Metric{MetricKind::mu2}, ls, NodeSet{}, WeightState{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_fit_set);
  }
}

TEST(NewtonFit, CircleOnQuadsConverges) {
  const LevelSetField ls(CsgTree{2, csg::sphere(v2(0.5, 0.5), 0.3)});
  const CircleCase c = circle_case(Geometry::quad, 8, 2, ls);
  SolverConfig cfg;
  WeightState w;
  w.mode = CounterMode::consecutive;
  const NewtonResult r = newton_fit(c.mesh, {}, Metric{MetricKind::mu2}, ls, c.S, w, cfg);
  EXPECT_EQ(r.report.reason, Termination::fit_tolerance) << to_string(r.report.reason);
  EXPECT_LE(r.report.final_error, 1e-5);
  EXPECT_GT(r.report.final_min_det, 0.0);
  expect_constraints(r.report, cfg, true);
  // non-fitted boundary nodes stay in place
  for (int n : boundary_nodes(c.mesh))
    for (int a = 0; a < 2; ++a) EXPECT_EQ(r.coords[2 * n + a], c.mesh.coords()[2 * n + a]);
  // weight never decreases
  double w_prev = 0.0;
  for (const auto& it : r.report.iterations) {
    EXPECT_GE(it.w_sigma, w_prev);
    w_prev = it.w_sigma;
  }
}

TEST(NewtonFit, ZeroWeightMatchesQualityStep) {
  const HighOrderMesh m = perturbed_mesh(2, Geometry::quad, 2, 3, 0.3, 2);
  const LevelSetField ls(CsgTree{2, csg::sphere(v2(0.5, 0.5), 0.3)});
  std::vector<int> fixed = boundary_nodes(m);
  FitProblem Pq(m, {}, Metric{MetricKind::mu2}, nullptr, {}, fixed);
  FitProblem Pf(m, {}, Metric{MetricKind::mu2}, &ls, NodeSet{{0}}, fixed);
  const Vector x = Eigen::Map<const Vector>(m.coords().data(), m.num_dofs());
  EXPECT_EQ((Pq.gradient(x, 0.0) - Pf.gradient(x, 0.0)).norm(), 0.0);
  EXPECT_EQ(DenseMatrix(Pq.hessian(x, 0.0) - Pf.hessian(x, 0.0)).norm(), 0.0);
}

TEST(NewtonFit, FixedWeightIgnoresCounter) {
  const LevelSetField ls(CsgTree{2, csg::sphere(v2(0.5, 0.5), 0.3)});
  const CircleCase c = circle_case(Geometry::quad, 4, 2, ls);
  WeightState w;
  w.adaptive = false;
  w.w = 100.0;
  SolverConfig cfg;
  cfg.max_iter = 15;
  const NewtonResult r = newton_fit(c.mesh, {}, Metric{MetricKind::mu2}, ls, c.S, w, cfg);
  for (const auto& it : r.report.iterations) EXPECT_EQ(it.w_sigma, 100.0);
  EXPECT_NE(r.report.reason, Termination::adaptation_limit);
}

TEST(Report, CsvLayout) {
  SolverReport rep;
  rep.iterations.push_back({});
  rep.iterations.back().iter = 1;
  std::ostringstream os;
  write_report_csv(os, rep, {{"metric", "2"}});
  std::istringstream is(os.str());
  std::string line, header;
  int comments = 0, rows = 0;
  while (std::getline(is, line)) {
    if (line.rfind("#", 0) == 0) ++comments;
    else if (header.empty()) header = line;
    else ++rows;
  }
  EXPECT_EQ(header, "iter,F_mu,F_sigma,fit_error,min_detA,alpha,w_sigma,minres_iters");
  EXPECT_GE(comments, 6);
  EXPECT_EQ(rows, 1);
}
