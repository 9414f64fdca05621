#pragma once

// Newton iterations for F = F_mu + F_sigma with MINRES/Jacobi linear solves
// and a backtracking line search.

#include "morphfit/fitting.hpp"
#include "morphfit/tmop.hpp"

#include <fmt/format.h>

#include <cmath>
#include <optional>
#include <ostream>

namespace morphfit {

struct SolverConfig {
  double grad_rel_tol = 1e-10;  // stop when |J_k| / |J_ref| <= tol
  double grad_abs_tol = 1e-12;  // or when |J_k| is at rounding level
  double fit_tol = 1e-5;        // stop when |sigma|_{S,inf} <= tol
  int max_iter = 200;           // Newton iterations
  int max_halvings = 30;
  double growth = 1.2;          // bound for F, |J| and fit error growth per step
  double det_floor = 1e-3;      // min det(A) must stay above det_floor * initial minimum
  double minres_rel_tol = 1e-8;
  int minres_max_iter = 200;

  void validate() const {
    if (!(grad_rel_tol > 0 && grad_abs_tol >= 0 && fit_tol > 0 && minres_rel_tol > 0 && growth > 1.0 && det_floor > 0))
      throw Error(Errc::invalid_argument, "solver tolerances must be positive");
    if (max_iter < 0 || max_halvings < 0 || minres_max_iter < 1)
      throw Error(Errc::invalid_argument, "iteration limits must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// MINRES with Jacobi preconditioning

struct MinresResult {
  Vector x;
  int iterations = 0;
  double rel_residual = 0.0;  // true residual |b - Hx| / |b|
  bool converged = false;
  bool breakdown = false;
};

/// Solves H x = b for symmetric H, preconditioned by |diag(H)|.
inline MinresResult minres_jacobi(const SparseMatrix& H, const Vector& b, double rel_tol, int max_iter) {
  const Eigen::Index n = b.size();
  MinresResult res;
  res.x = Vector::Zero(n);
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  Vector dinv(n);
  int zeros = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = std::abs(H.coeff(i, i));
    if (d == 0.0) ++zeros;
    dinv[i] = d > 0.0 ? 1.0 / d : 1.0;
  }
  if (zeros > 0) warn(fmt::format("MINRES: {} zero diagonal entries replaced by 1 in the preconditioner", zeros));

  Vector r1 = b, r2 = b, y = dinv.cwiseProduct(b);
  double beta1 = r1.dot(y);
  if (!(beta1 > 0.0)) {
    res.breakdown = true;
    return res;
  }
  beta1 = std::sqrt(beta1);
  double oldb = 0.0, beta = beta1, dbar = 0.0, epsln = 0.0, phibar = beta1;
  double cs = -1.0, sn = 0.0;
  Vector w = Vector::Zero(n), w1(n), w2 = Vector::Zero(n), v(n);
  for (int it = 1; it <= max_iter; ++it) {
    v = y / beta;
    y = H * v;
    if (it >= 2) y -= (beta / oldb) * r1;
    const double alfa = v.dot(y);
    y -= (alfa / beta) * r2;
    r1 = r2;
    r2 = y;
    y = dinv.cwiseProduct(r2);
    oldb = beta;
    const double b2 = r2.dot(y);
    if (b2 < 0.0 || !std::isfinite(b2)) {
      res.breakdown = true;
      res.iterations = it;
      break;
    }
    beta = std::sqrt(b2);
    const double oldeps = epsln;
    const double delta = cs * dbar + sn * alfa;
    const double gbar = sn * dbar - cs * alfa;
    epsln = sn * beta;
    dbar = -cs * beta;
    const double gamma = std::max(std::hypot(gbar, beta), std::numeric_limits<double>::min());
    cs = gbar / gamma;
    sn = beta / gamma;
    const double phi = cs * phibar;
    phibar = sn * phibar;
    w1 = w2;
    w2 = w;
    w = (v - oldeps * w1 - delta * w2) / gamma;
    res.x += phi * w;
    res.iterations = it;
    if (phibar <= rel_tol * beta1 || beta == 0.0) break;
  }
  res.rel_residual = (b - H * res.x).norm() / bnorm;
  if (!res.x.allFinite()) res.breakdown = true;
  res.converged = !res.breakdown && res.rel_residual <= std::max(rel_tol, 1e-14) * 1.0001;
  // the preconditioned estimate drives stopping; accept the true residual within a modest factor
  if (!res.converged && !res.breakdown && phibar <= rel_tol * beta1) res.converged = true;
  return res;
}

// ---------------------------------------------------------------------------
// Problem state

/// The combined objective on a fixed mesh layout; coordinates vary.
class FitProblem {
 public:
  FitProblem(const HighOrderMesh& mesh, TargetSpec target, Metric metric, const LevelSetField* ls, NodeSet S,
             std::vector<int> fixed_nodes)
      : mesh_(&mesh), quality_(mesh, target, metric), ls_(ls), S_(std::move(S)) {
    const int d = mesh.dim();
    free_ = Vector::Ones(mesh.num_dofs());
    for (int n : fixed_nodes)
      for (int a = 0; a < d; ++a) free_[static_cast<Eigen::Index>(n) * d + a] = 0.0;
    if (ls_ && ls_->dim() != d) throw Error(Errc::invalid_argument, "level-set dimension differs from mesh dimension");
  }

  const HighOrderMesh& mesh() const { return *mesh_; }
  const NodeSet& fit_nodes() const { return S_; }
  bool fitting() const { return ls_ != nullptr && !S_.empty(); }
  const Vector& free_mask() const { return free_; }

  static std::span<const double> span(const Vector& x) { return {x.data(), static_cast<std::size_t>(x.size())}; }

  double quality(const Vector& x) const { return quality_.energy(span(x)); }
  double penalty(const Vector& x, double w) const {
    return fitting() && w != 0.0 ? objective_sigma(span(x), mesh_->dim(), S_, *ls_, w) : 0.0;
  }
  double error(const Vector& x) const { return fitting() ? fit_error(span(x), mesh_->dim(), S_, *ls_) : 0.0; }

  /// Masked gradient of F_mu + F_sigma.
  Vector gradient(const Vector& x, double w) const {
    Vector g = quality_.gradient(span(x));
    if (fitting() && w != 0.0) g += grad_sigma(span(x), mesh_->dim(), S_, *ls_, w);
    return g.cwiseProduct(free_);
  }

  /// Hessian restricted to free dofs (identity rows for fixed dofs).
  SparseMatrix hessian(const Vector& x, double w) const {
    SparseMatrix H = quality_.hessian(span(x));
    if (fitting() && w != 0.0) {
      const auto t = hess_sigma_triplets(sample_nodes(span(x), mesh_->dim(), S_, *ls_), mesh_->dim(), S_, w);
      SparseMatrix Hs(H.rows(), H.cols());
      Hs.setFromTriplets(t.begin(), t.end());
      H += Hs;
    }
    for (int k = 0; k < H.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(H, k); it; ++it)
        if (free_[it.row()] == 0.0 || free_[it.col()] == 0.0) it.valueRef() = it.row() == it.col() ? 1.0 : 0.0;
    return H;
  }

 private:
  const HighOrderMesh* mesh_;
  QualityObjective quality_;
  const LevelSetField* ls_;
  NodeSet S_;
  Vector free_;
};

// ---------------------------------------------------------------------------
// Line search

/// Values at a trial point, used to check the acceptance constraints.
struct TrialState {
  double F = 0.0, F_mu = 0.0, F_sigma = 0.0, grad_norm = 0.0, fit_error = 0.0, min_det = 0.0;
};

struct LineSearchResult {
  bool accepted = false;
  double alpha = 0.0;
  int halvings = 0;
  Vector x;
  TrialState state;
};

namespace detail {

inline bool below(double v, double factor, double ref) { return ref > 0.0 ? v < factor * ref : v <= ref; }

}  // namespace detail

/// Backtracking from alpha = 1 until all five constraints hold at x - alpha dx:
/// F growth, gradient growth, positive det(A), fit-error growth, det floor.
inline LineSearchResult line_search(const FitProblem& P, const Vector& x, const Vector& dx, double w,
                                    const TrialState& current, double min_det0, const SolverConfig& cfg) {
  LineSearchResult r;
  double alpha = 1.0;
  for (int h = 0; h <= cfg.max_halvings; ++h, alpha *= 0.5) {
    const Vector y = x - alpha * dx;
    r.halvings = h;
    if (!y.allFinite()) continue;
    TrialState s;
    s.min_det = min_detA(P.mesh(), FitProblem::span(y));
    if (!(s.min_det > 0.0) || !(s.min_det > cfg.det_floor * min_det0)) continue;
    try {
      s.F_mu = P.quality(y);
      s.F_sigma = P.penalty(y, w);
      s.F = s.F_mu + s.F_sigma;
      if (!detail::below(s.F, cfg.growth, current.F)) continue;
      s.fit_error = P.error(y);
      if (P.fitting() && !detail::below(s.fit_error, cfg.growth, current.fit_error)) continue;
      s.grad_norm = P.gradient(y, w).norm();
      if (!detail::below(s.grad_norm, cfg.growth, current.grad_norm)) continue;
    } catch (const Error& e) {
      if (e.code() == Errc::out_of_domain || e.code() == Errc::invalid_mesh || e.code() == Errc::metric_undefined)
        continue;
      throw;
    }
    r.accepted = true;
    r.alpha = alpha;
    r.x = y;
    r.state = s;
    return r;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Newton driver

enum class Termination { fit_tolerance, adaptation_limit, iteration_limit, gradient_tolerance, line_search_failure };

inline std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::fit_tolerance: return "fit-tolerance";
    case Termination::adaptation_limit: return "adaptation-limit";
    case Termination::iteration_limit: return "iteration-limit";
    case Termination::gradient_tolerance: return "gradient-tolerance";
    case Termination::line_search_failure: return "line-search-failure";
  }
  return "?";
}

struct IterationRecord {
  int iter = 0;
  double F_mu = 0.0, F_sigma = 0.0, fit_error = 0.0, min_det = 0.0;
  double alpha = 0.0;
  double w_sigma = 0.0;  // weight after this iteration's update; F_sigma uses it
  int minres_iters = 0;
  bool minres_converged = true;
  bool fallback = false;  // preconditioned gradient used instead of the MINRES solution
  double grad_norm = 0.0;
  TrialState before;      // state at x_k with the weight used for the step
  TrialState accepted;    // state at x_{k+1} with the same weight
};

struct SolverReport {
  TrialState initial;
  double initial_min_det = 0.0;
  double initial_w = 0.0;
  std::vector<IterationRecord> iterations;
  Termination reason = Termination::iteration_limit;
  double final_error = 0.0;
  double final_min_det = 0.0;
  double final_w = 0.0;
};

struct NewtonResult {
  std::vector<double> coords;
  SolverReport report;
};

namespace detail {

inline TrialState evaluate_state(const FitProblem& P, const Vector& x, double w) {
  TrialState s;
  s.F_mu = P.quality(x);
  s.F_sigma = P.penalty(x, w);
  s.F = s.F_mu + s.F_sigma;
  s.fit_error = P.error(x);
  s.grad_norm = P.gradient(x, w).norm();
  s.min_det = min_detA(P.mesh(), FitProblem::span(x));
  return s;
}

}  // namespace detail

/// Newton iterations on F_mu + w F_sigma. Without fit nodes this is the
/// quality-only optimizer; the weight is adapted when `weight.adaptive`.
inline NewtonResult newton_solve(const FitProblem& P, WeightState weight, const SolverConfig& cfg) {
  cfg.validate();
  const HighOrderMesh& mesh = P.mesh();
  Vector x = Eigen::Map<const Vector>(mesh.coords().data(), mesh.num_dofs());
  NewtonResult out;
  SolverReport& rep = out.report;
  const double min_det0 = min_detA(mesh);
  if (!(min_det0 > 0.0)) throw Error(Errc::invalid_mesh, "initial mesh has non-positive det(A)");
  double w = P.fitting() ? weight.w : 0.0;
  if (!P.fitting()) weight.adaptive = false;
  TrialState cur = detail::evaluate_state(P, x, w);
  rep.initial = cur;
  rep.initial_min_det = min_det0;
  rep.initial_w = w;
  double grad_ref = cur.grad_norm;
  rep.reason = Termination::iteration_limit;
  int k = 0;
  for (;;) {
    if (P.fitting() && cur.fit_error <= cfg.fit_tol) {
      rep.reason = Termination::fit_tolerance;
      break;
    }
    if (weight.adaptive && weight.n >= weight.n_max) {
      rep.reason = Termination::adaptation_limit;
      break;
    }
    if (k >= cfg.max_iter) {
      rep.reason = Termination::iteration_limit;
      break;
    }
    if (cur.grad_norm <= std::max(cfg.grad_rel_tol * grad_ref, cfg.grad_abs_tol)) {
      rep.reason = Termination::gradient_tolerance;
      break;
    }
    const Vector J = P.gradient(x, w);
    const SparseMatrix H = P.hessian(x, w);
    MinresResult lin = minres_jacobi(H, J, cfg.minres_rel_tol, cfg.minres_max_iter);
    IterationRecord rec;
    rec.iter = k + 1;
    rec.before = cur;
    rec.minres_iters = lin.iterations;
    rec.minres_converged = lin.converged;
    Vector dx = lin.x;
    if (lin.breakdown || !dx.allFinite()) {
      rec.fallback = true;
      Vector d = H.diagonal().cwiseAbs();
      for (Eigen::Index i = 0; i < d.size(); ++i)
        if (d[i] == 0.0) d[i] = 1.0;
      dx = J.cwiseQuotient(d);
    }
    LineSearchResult ls = line_search(P, x, dx, w, cur, min_det0, cfg);
    if (!ls.accepted && !rec.fallback) {
      // retry along the preconditioned gradient before giving up
      Vector d = H.diagonal().cwiseAbs();
      for (Eigen::Index i = 0; i < d.size(); ++i)
        if (d[i] == 0.0) d[i] = 1.0;
      ls = line_search(P, x, J.cwiseQuotient(d), w, cur, min_det0, cfg);
      rec.fallback = ls.accepted;
    }
    if (!ls.accepted) {
      rep.reason = Termination::line_search_failure;
      break;
    }
    x = ls.x;
    const double err_prev = cur.fit_error;
    cur = ls.state;
    rec.alpha = ls.alpha;
    rec.accepted = cur;
    const bool adapted = P.fitting() && update_weight(weight, err_prev, cur.fit_error);
    if (adapted) {
      w = weight.w;
      cur = detail::evaluate_state(P, x, w);
      grad_ref = cur.grad_norm;
    }
    rec.w_sigma = w;
    rec.F_mu = cur.F_mu;
    rec.F_sigma = cur.F_sigma;
    rec.fit_error = cur.fit_error;
    rec.min_det = cur.min_det;
    rec.grad_norm = cur.grad_norm;
    rep.iterations.push_back(rec);
    ++k;
  }
  rep.final_error = cur.fit_error;
  rep.final_min_det = cur.min_det;
  rep.final_w = w;
  out.coords.assign(x.data(), x.data() + x.size());
  return out;
}

/// Quality-only optimization with all boundary nodes fixed.
inline NewtonResult newton_quality(const HighOrderMesh& mesh, TargetSpec target, Metric metric,
                                   const SolverConfig& cfg = {}) {
  FitProblem P(mesh, target, metric, nullptr, {}, boundary_nodes(mesh));
  return newton_solve(P, WeightState{}, cfg);
}

/// Surface fitting: boundary nodes outside S are fixed, S nodes move freely.
inline NewtonResult newton_fit(const HighOrderMesh& mesh, TargetSpec target, Metric metric, const LevelSetField& ls,
                               const NodeSet& S, const WeightState& weight, const SolverConfig& cfg = {}) {
  if (S.empty()) throw Error(Errc::empty_fit_set, "no nodes selected for fitting");
  std::vector<int> fixed;
  for (int n : boundary_nodes(mesh))
    if (!S.contains(n)) fixed.push_back(n);
  FitProblem P(mesh, target, metric, &ls, S, std::move(fixed));
  return newton_solve(P, weight, cfg);
}

// ---------------------------------------------------------------------------
// CSV report

/// Effective configuration and initial state as '#' comment lines, then one
/// row per iteration.
inline void write_report_csv(std::ostream& os, const SolverReport& rep,
                             const std::vector<std::pair<std::string, std::string>>& config = {}) {
  for (const auto& [k, v] : config) os << "# " << k << " = " << v << '\n';
  os << fmt::format("# initial F_mu = {}\n# initial F_sigma = {}\n# initial fit_error = {}\n# initial min_detA = {}\n",
                    rep.initial.F_mu, rep.initial.F_sigma, rep.initial.fit_error, rep.initial_min_det);
  os << "# termination = " << to_string(rep.reason) << '\n';
  os << "iter,F_mu,F_sigma,fit_error,min_detA,alpha,w_sigma,minres_iters\n";
  for (const auto& r : rep.iterations)
    os << fmt::format("{},{},{},{},{},{},{},{}\n", r.iter, r.F_mu, r.F_sigma, r.fit_error, r.min_det, r.alpha,
                      r.w_sigma, r.minres_iters);
}

}  // namespace morphfit
