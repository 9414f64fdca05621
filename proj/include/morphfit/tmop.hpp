#pragma once

// Target-matrix quality metrics mu(T), targets W, and the quality objective
// F_mu = sum_E sum_q w_q det(W) mu(A_q W^{-1}) with exact first and second
// derivatives with respect to the node coordinates.

#include "morphfit/mesh.hpp"

#include <cmath>
#include <span>

namespace morphfit {

enum class MetricKind { mu2, mu77, mu80, mu303 };

inline std::string_view to_string(MetricKind k) {
  switch (k) {
    case MetricKind::mu2: return "mu2";
    case MetricKind::mu77: return "mu77";
    case MetricKind::mu80: return "mu80";
    case MetricKind::mu303: return "mu303";
  }
  return "?";
}

/// Metric identifier; `gamma` is the shape weight of mu80.
struct Metric {
  MetricKind kind = MetricKind::mu2;
  double gamma = 0.5;

  /// Metrics mu2 and mu80 are planar, mu303 is volumetric, mu77 works in both.
  bool supports_dim(int d) const {
    switch (kind) {
      case MetricKind::mu2:
      case MetricKind::mu80: return d == 2;
      case MetricKind::mu303: return d == 3;
      case MetricKind::mu77: return d == 2 || d == 3;
    }
    return false;
  }

  void validate(int d) const {
    if (kind == MetricKind::mu80 && (gamma < 0.0 || gamma > 1.0))
      throw Error(Errc::invalid_argument, "mu80 gamma must lie in [0,1]");
    if (!supports_dim(d))
      throw Error(Errc::unsupported, std::string(to_string(kind)) + " is not defined in " + std::to_string(d) + "D");
  }
};

inline Metric metric_from_number(int id, double gamma = 0.5) {
  switch (id) {
    case 2: return {MetricKind::mu2, gamma};
    case 77: return {MetricKind::mu77, gamma};
    case 80: return {MetricKind::mu80, gamma};
    case 303: return {MetricKind::mu303, gamma};
  }
  throw Error(Errc::invalid_argument, "unknown metric id " + std::to_string(id));
}

namespace detail {

// mu = f(I1, tau) with I1 = |T|^2 and tau = det T. Partial derivatives of f.
struct InvariantDerivs {
  double f = 0, f1 = 0, ft = 0, f11 = 0, f1t = 0, ftt = 0;
};

inline InvariantDerivs invariant_derivs(const Metric& m, double I1, double tau, int order) {
  InvariantDerivs r;
  auto add = [&](double w, const InvariantDerivs& o) {
    r.f += w * o.f;
    r.f1 += w * o.f1;
    r.ft += w * o.ft;
    r.f11 += w * o.f11;
    r.f1t += w * o.f1t;
    r.ftt += w * o.ftt;
  };
  auto mu2 = [&] {
    InvariantDerivs o;
    o.f = I1 / (2.0 * tau) - 1.0;
    if (order >= 1) {
      o.f1 = 1.0 / (2.0 * tau);
      o.ft = -I1 / (2.0 * tau * tau);
    }
    if (order >= 2) {
      o.f1t = -1.0 / (2.0 * tau * tau);
      o.ftt = I1 / (tau * tau * tau);
    }
    return o;
  };
  auto mu77 = [&] {
    InvariantDerivs o;
    const double s = tau - 1.0 / tau;
    o.f = 0.5 * s * s;
    if (order >= 1) o.ft = s * (1.0 + 1.0 / (tau * tau));
    if (order >= 2) {
      const double ds = 1.0 + 1.0 / (tau * tau);
      o.ftt = ds * ds - 2.0 * s / (tau * tau * tau);
    }
    return o;
  };
  auto mu303 = [&] {
    InvariantDerivs o;
    const double t23 = std::cbrt(tau * tau);
    o.f = I1 / (3.0 * t23) - 1.0;
    if (order >= 1) {
      o.f1 = 1.0 / (3.0 * t23);
      o.ft = -2.0 / 9.0 * I1 / (t23 * tau);
    }
    if (order >= 2) {
      o.f1t = -2.0 / 9.0 / (t23 * tau);
      o.ftt = 10.0 / 27.0 * I1 / (t23 * tau * tau);
    }
    return o;
  };
  switch (m.kind) {
    case MetricKind::mu2: add(1.0, mu2()); break;
    case MetricKind::mu77: add(1.0, mu77()); break;
    case MetricKind::mu80:
      add(m.gamma, mu2());
      add(1.0 - m.gamma, mu77());
      break;
    case MetricKind::mu303: add(1.0, mu303()); break;
  }
  return r;
}

inline void require_positive(double tau) {
  if (!(tau > 0.0)) throw Error(Errc::metric_undefined, "det(T) must be positive, got " + std::to_string(tau));
}

}  // namespace detail

inline double metric_eval(const Metric& m, const Mat& T) {
  const double tau = T.determinant();
  detail::require_positive(tau);
  return detail::invariant_derivs(m, T.squaredNorm(), tau, 0).f;
}

/// dmu/dT (d x d).
inline Mat metric_grad(const Metric& m, const Mat& T) {
  const double tau = T.determinant();
  detail::require_positive(tau);
  const auto f = detail::invariant_derivs(m, T.squaredNorm(), tau, 1);
  const Mat C = tau * T.inverse().transpose();  // d tau / dT
  return f.f1 * 2.0 * T + f.ft * C;
}

/// d2mu/dT2 as a (d*d) x (d*d) matrix; entry ((a*d+c), (b*d+e)) is
/// d2 mu / dT_ac dT_be.
inline DenseMatrix metric_hess(const Metric& m, const Mat& T) {
  const int d = static_cast<int>(T.rows());
  const double tau = T.determinant();
  detail::require_positive(tau);
  const auto f = detail::invariant_derivs(m, T.squaredNorm(), tau, 2);
  const Mat Ti = T.inverse();
  const Mat C = tau * Ti.transpose();
  const int n = d * d;
  DenseMatrix H = DenseMatrix::Zero(n, n);
  for (int a = 0; a < d; ++a)
    for (int c = 0; c < d; ++c) {
      const int r = a * d + c;
      for (int b = 0; b < d; ++b)
        for (int e = 0; e < d; ++e) {
          const int s = b * d + e;
          // d2 tau / dT_ac dT_be = tau (Ti_ca Ti_eb - Ti_cb Ti_ea)
          const double d2tau = tau * (Ti(c, a) * Ti(e, b) - Ti(c, b) * Ti(e, a));
          double h = f.ft * d2tau;
          if (r == s) h += 2.0 * f.f1;
          h += f.f11 * 4.0 * T(a, c) * T(b, e);
          h += f.f1t * (2.0 * T(a, c) * C(b, e) + C(a, c) * 2.0 * T(b, e));
          h += f.ftt * C(a, c) * C(b, e);
          H(r, s) = h;
        }
    }
  return H;
}

// ---------------------------------------------------------------------------
// Targets

enum class TargetKind { identity, ideal_simplex };

struct TargetSpec {
  TargetKind kind = TargetKind::identity;
  double scale = 1.0;
};

inline Mat target_matrix(const TargetSpec& spec, Geometry geom) {
  const int d = geometry_dim(geom);
  if (!(spec.scale > 0.0)) throw Error(Errc::invalid_argument, "target scale must be positive");
  Mat W = Mat::Identity(d, d);
  if (spec.kind == TargetKind::ideal_simplex) {
    if (geom == Geometry::tri) {
      W << 1.0, 0.5, 0.0, std::sqrt(3.0) / 2.0;
    } else if (geom == Geometry::tet) {
      // right tet -> regular tet with unit edges
      W << 1.0, 0.5, 0.5, 0.0, std::sqrt(3.0) / 2.0, std::sqrt(3.0) / 6.0, 0.0, 0.0, std::sqrt(2.0 / 3.0);
    } else {
      throw Error(Errc::unsupported, "ideal-simplex targets require tri or tet geometry");
    }
  }
  return spec.scale * W;
}

// ---------------------------------------------------------------------------
// Quality objective

/// F_mu and its derivatives for one (metric, target) pair on a mesh layout.
class QualityObjective {
 public:
  QualityObjective(const HighOrderMesh& mesh, TargetSpec target, Metric metric)
      : mesh_(&mesh), metric_(metric), W_(target_matrix(target, mesh.geometry())) {
    metric_.validate(mesh.dim());
    Winv_ = W_.inverse();
    detW_ = W_.determinant();
    const auto& ref = mesh.reference();
    for (int q = 0; q < ref.quadrature().size(); ++q) G_.push_back(ref.quad_grads(q) * Winv_);
  }

  const Metric& metric() const { return metric_; }
  const Mat& target() const { return W_; }

  double energy(std::span<const double> x) const {
    double F = 0.0;
    for (int e = 0; e < mesh_->num_elements(); ++e) F += element_energy(e, x);
    return F;
  }

  double element_energy(int e, std::span<const double> x) const {
    const auto& ref = mesh_->reference();
    const DenseMatrix X = mesh_->element_coords(e, x);
    double F = 0.0;
    for (int q = 0; q < ref.quadrature().size(); ++q) {
      const Mat T = X * G_[q];
      check_det(X, q, e);
      F += ref.quadrature().weights[q] * detW_ * metric_eval(metric_, T);
    }
    return F;
  }

  Vector gradient(std::span<const double> x) const {
    Vector g = Vector::Zero(mesh_->num_dofs());
    const int d = mesh_->dim();
    for (int e = 0; e < mesh_->num_elements(); ++e) {
      const DenseMatrix ge = element_gradient(e, x);
      auto ids = mesh_->element(e);
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int a = 0; a < d; ++a) g[static_cast<Eigen::Index>(ids[i]) * d + a] += ge(a, i);
    }
    return g;
  }

  /// Element gradient as d x Np.
  DenseMatrix element_gradient(int e, std::span<const double> x) const {
    const auto& ref = mesh_->reference();
    const DenseMatrix X = mesh_->element_coords(e, x);
    DenseMatrix g = DenseMatrix::Zero(X.rows(), X.cols());
    for (int q = 0; q < ref.quadrature().size(); ++q) {
      const Mat T = X * G_[q];
      check_det(X, q, e);
      const Mat P = metric_grad(metric_, T);
      g += (ref.quadrature().weights[q] * detW_) * (P * G_[q].transpose());
    }
    return g;
  }

  /// Element Hessian (d*Np)^2 with local dof index i*d + a.
  DenseMatrix element_hessian(int e, std::span<const double> x) const {
    const auto& ref = mesh_->reference();
    const DenseMatrix X = mesh_->element_coords(e, x);
    const int d = static_cast<int>(X.rows()), np = static_cast<int>(X.cols());
    DenseMatrix H = DenseMatrix::Zero(d * np, d * np);
    DenseMatrix M(d * np, d * d);  // M((i,a), (b,f)) = sum_c Hmu(ac, bf) G(i,c)
    for (int q = 0; q < ref.quadrature().size(); ++q) {
      const DenseMatrix& G = G_[q];
      const Mat T = X * G;
      check_det(X, q, e);
      const DenseMatrix Hm = metric_hess(metric_, T);
      const double wq = ref.quadrature().weights[q] * detW_;
      M.setZero();
      for (int i = 0; i < np; ++i)
        for (int a = 0; a < d; ++a)
          for (int c = 0; c < d; ++c) {
            const double gic = G(i, c);
            if (gic == 0.0) continue;
            M.row(i * d + a) += gic * Hm.row(a * d + c);
          }
      for (int j = 0; j < np; ++j)
        for (int b = 0; b < d; ++b) {
          const int col = j * d + b;
          for (int f = 0; f < d; ++f) {
            const double gjf = wq * G(j, f);
            if (gjf == 0.0) continue;
            H.col(col) += gjf * M.col(b * d + f);
          }
        }
    }
    return 0.5 * (H + H.transpose());
  }

  SparseMatrix hessian(std::span<const double> x) const {
    const int d = mesh_->dim();
    std::vector<Triplet> trips;
    for (int e = 0; e < mesh_->num_elements(); ++e) {
      const DenseMatrix He = element_hessian(e, x);
      auto ids = mesh_->element(e);
      const int np = static_cast<int>(ids.size());
      for (int j = 0; j < np; ++j)
        for (int b = 0; b < d; ++b)
          for (int i = 0; i < np; ++i)
            for (int a = 0; a < d; ++a)
              trips.emplace_back(ids[i] * d + a, ids[j] * d + b, He(i * d + a, j * d + b));
    }
    SparseMatrix H(mesh_->num_dofs(), mesh_->num_dofs());
    H.setFromTriplets(trips.begin(), trips.end());
    return H;
  }

 private:
  void check_det(const DenseMatrix& X, int q, int e) const {
    const Mat A = X * mesh_->reference().quad_grads(q);
    if (!(A.determinant() > 0.0))
      throw Error(Errc::invalid_mesh, "non-positive det(A) in element " + std::to_string(e));
  }

  const HighOrderMesh* mesh_;
  Metric metric_;
  Mat W_, Winv_;
  double detW_ = 1.0;
  std::vector<DenseMatrix> G_;  // reference gradients times W^{-1}, per quadrature point
};

inline double objective_mu(const HighOrderMesh& mesh, const TargetSpec& target, const Metric& metric) {
  return QualityObjective(mesh, target, metric).energy(mesh.coords());
}

inline Vector grad_mu(const HighOrderMesh& mesh, const TargetSpec& target, const Metric& metric) {
  return QualityObjective(mesh, target, metric).gradient(mesh.coords());
}

inline SparseMatrix hess_mu(const HighOrderMesh& mesh, const TargetSpec& target, const Metric& metric) {
  return QualityObjective(mesh, target, metric).hessian(mesh.coords());
}

}  // namespace morphfit
