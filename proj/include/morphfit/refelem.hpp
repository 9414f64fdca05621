#pragma once

// Reference elements: Gauss-Lobatto nodal bases and quadrature rules.
//
// Reference domains are [0,1]^d for tensor geometries and the unit right
// simplex for triangles/tetrahedra. Nodes are numbered lexicographically
// (x fastest). Local faces:
//   quad: 0 y=0, 1 x=1, 2 y=1, 3 x=0
//   tri:  0 y=0, 1 x+y=1, 2 x=0
//   hex:  0 z=0, 1 y=0, 2 x=1, 3 y=1, 4 x=0, 5 z=1
//   tet:  0 z=0, 1 y=0, 2 x=0, 3 x+y+z=1
//   segment: 0 x=0, 1 x=1

#include "morphfit/common.hpp"

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

namespace morphfit {

enum class Geometry { segment, quad, tri, hex, tet };

inline int geometry_dim(Geometry g) {
  switch (g) {
    case Geometry::segment: return 1;
    case Geometry::quad:
    case Geometry::tri: return 2;
    case Geometry::hex:
    case Geometry::tet: return 3;
  }
  return 0;
}

inline bool is_tensor(Geometry g) { return g == Geometry::segment || g == Geometry::quad || g == Geometry::hex; }

inline bool is_simplex(Geometry g) { return g == Geometry::tri || g == Geometry::tet; }

inline std::string_view to_string(Geometry g) {
  switch (g) {
    case Geometry::segment: return "segment";
    case Geometry::quad: return "quad";
    case Geometry::tri: return "tri";
    case Geometry::hex: return "hex";
    case Geometry::tet: return "tet";
  }
  return "?";
}

inline Geometry geometry_from_string(std::string_view s) {
  if (s == "segment") return Geometry::segment;
  if (s == "quad") return Geometry::quad;
  if (s == "tri") return Geometry::tri;
  if (s == "hex") return Geometry::hex;
  if (s == "tet") return Geometry::tet;
  throw Error(Errc::unsupported, "unknown geometry '" + std::string(s) + "'");
}

inline double reference_measure(Geometry g) {
  switch (g) {
    case Geometry::tri: return 0.5;
    case Geometry::tet: return 1.0 / 6.0;
    default: return 1.0;
  }
}

inline int num_vertices(Geometry g) {
  switch (g) {
    case Geometry::segment: return 2;
    case Geometry::quad: return 4;
    case Geometry::tri: return 3;
    case Geometry::hex: return 8;
    case Geometry::tet: return 4;
  }
  return 0;
}

inline int num_faces(Geometry g) {
  switch (g) {
    case Geometry::segment: return 2;
    case Geometry::quad: return 4;
    case Geometry::tri: return 3;
    case Geometry::hex: return 6;
    case Geometry::tet: return 4;
  }
  return 0;
}

namespace detail {

// Legendre P_n and P_n' at x in [-1,1].
inline std::pair<double, double> legendre(int n, double x) {
  double p0 = 1.0, p1 = x;
  if (n == 0) return {1.0, 0.0};
  for (int k = 2; k <= n; ++k) {
    const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  // derivative from the three-term identity; valid away from |x| = 1
  const double dp = n * (x * p1 - p0) / (x * x - 1.0);
  return {p1, dp};
}

}  // namespace detail

/// The p+1 Gauss-Lobatto points mapped to [0,1].
inline std::vector<double> gauss_lobatto_nodes(int p) {
  if (p < 1) throw Error(Errc::invalid_order, "Gauss-Lobatto order must be >= 1, got " + std::to_string(p));
  std::vector<double> x(p + 1);
  x[0] = -1.0;
  x[p] = 1.0;
  for (int k = 1; k < p; ++k) {
    double t = -std::cos(std::numbers::pi * k / p);
    for (int it = 0; it < 100; ++it) {
      auto [pn, dpn] = detail::legendre(p, t);
      // (1-t^2) P'' = 2 t P' - p(p+1) P
      const double d2 = (2.0 * t * dpn - p * (p + 1.0) * pn) / (1.0 - t * t);
      const double dt = dpn / d2;
      t -= dt;
      if (std::abs(dt) < 1e-16) break;
    }
    x[k] = t;
  }
  std::vector<double> out(p + 1);
  for (int k = 0; k <= p; ++k) out[k] = 0.5 * (x[k] + 1.0);
  for (int k = 0; k <= p / 2; ++k) {
    const double s = 0.5 * (out[k] + 1.0 - out[p - k]);
    out[k] = s;
    out[p - k] = 1.0 - s;
  }
  out[0] = 0.0;
  out[p] = 1.0;
  if (p % 2 == 0) out[p / 2] = 0.5;
  return out;
}

struct QuadratureRule {
  std::vector<Vec> points;
  std::vector<double> weights;

  int size() const { return static_cast<int>(weights.size()); }
};

/// n-point Gauss-Legendre rule on [0,1]; exact for degree 2n-1.
inline QuadratureRule gauss_legendre_1d(int n) {
  if (n < 1) throw Error(Errc::invalid_argument, "quadrature needs at least one point");
  QuadratureRule rule;
  for (int i = 1; i <= n; ++i) {
    double t = std::cos(std::numbers::pi * (i - 0.25) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      auto [p, d] = detail::legendre(n, t);
      dp = d;
      const double dt = p / d;
      t -= dt;
      if (std::abs(dt) < 1e-16) break;
    }
    dp = detail::legendre(n, t).second;
    Vec pt(1);
    pt[0] = 0.5 * (1.0 - t);
    rule.points.push_back(pt);
    rule.weights.push_back(1.0 / ((1.0 - t * t) * dp * dp));
  }
  return rule;
}

/// Quadrature on a reference element with `npts` points per direction.
/// Tensor geometries use Gauss-Legendre products (exact to degree 2n-1 per
/// variable); simplices use collapsed (Duffy) Gauss-Legendre products, exact
/// to total degree 2n-1-(d-1).
inline QuadratureRule quadrature_rule(Geometry geom, int npts) {
  const QuadratureRule g = gauss_legendre_1d(npts);
  QuadratureRule rule;
  const int n = g.size();
  switch (geom) {
    case Geometry::segment: return g;
    case Geometry::quad:
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          Vec p(2);
          p << g.points[i][0], g.points[j][0];
          rule.points.push_back(p);
          rule.weights.push_back(g.weights[i] * g.weights[j]);
        }
      return rule;
    case Geometry::hex:
      for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i) {
            Vec p(3);
            p << g.points[i][0], g.points[j][0], g.points[k][0];
            rule.points.push_back(p);
            rule.weights.push_back(g.weights[i] * g.weights[j] * g.weights[k]);
          }
      return rule;
    case Geometry::tri:
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          const double u = g.points[i][0], v = g.points[j][0];
          Vec p(2);
          p << u, v * (1.0 - u);
          rule.points.push_back(p);
          rule.weights.push_back(g.weights[i] * g.weights[j] * (1.0 - u));
        }
      return rule;
    case Geometry::tet:
      for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i) {
            const double u = g.points[i][0], v = g.points[j][0], w = g.points[k][0];
            Vec p(3);
            p << u, v * (1.0 - u), w * (1.0 - u) * (1.0 - v);
            rule.points.push_back(p);
            rule.weights.push_back(g.weights[i] * g.weights[j] * g.weights[k] * (1.0 - u) * (1.0 - u) * (1.0 - v));
          }
      return rule;
  }
  throw Error(Errc::unsupported, "no quadrature for geometry");
}

/// 1D Lagrange polynomials on a node set: values and first/second derivatives.
class Lagrange1D {
 public:
  explicit Lagrange1D(std::vector<double> nodes) : x_(std::move(nodes)) {}

  int size() const { return static_cast<int>(x_.size()); }
  const std::vector<double>& nodes() const { return x_; }

  void eval(double t, double* v, double* d1, double* d2) const {
    const int n = size();
    for (int i = 0; i < n; ++i) {
      double val = 1.0, der = 0.0, sec = 0.0;
      for (int k = 0; k < n; ++k) {
        if (k == i) continue;
        const double dik = x_[i] - x_[k];
        val *= (t - x_[k]) / dik;
        if (d1 || d2) {
          double prod = 1.0 / dik;
          for (int j = 0; j < n; ++j)
            if (j != i && j != k) prod *= (t - x_[j]) / (x_[i] - x_[j]);
          der += prod;
        }
        if (d2) {
          for (int l = 0; l < n; ++l) {
            if (l == i || l == k) continue;
            double prod = 1.0 / (dik * (x_[i] - x_[l]));
            for (int j = 0; j < n; ++j)
              if (j != i && j != k && j != l) prod *= (t - x_[j]) / (x_[i] - x_[j]);
            sec += prod;
          }
        }
      }
      v[i] = val;
      if (d1) d1[i] = der;
      if (d2) d2[i] = sec;
    }
  }

 private:
  std::vector<double> x_;
};

/// Basis values at one reference point: values (Np), gradients (Np x d) and
/// Hessians (Np x d*d, row-major within each d x d block).
struct BasisEval {
  Vector values;
  DenseMatrix grads;
  DenseMatrix hessians;
};

struct LocalFace {
  std::vector<int> vertices;  // local node ids of the face's vertices
  std::vector<int> nodes;     // all local node ids on the face
};

class ReferenceElement {
 public:
  ReferenceElement(Geometry geom, int order, int quad_points = 0)
      : geom_(geom), order_(order), dim_(geometry_dim(geom)) {
    if (order < 1) throw Error(Errc::invalid_order, "element order must be >= 1");
    if (quad_points <= 0) quad_points = order + 2;
    quad_points_ = quad_points;
    if (is_tensor(geom)) {
      build_tensor();
    } else {
      build_simplex();
    }
    build_faces();
    quad_ = quadrature_rule(geom, quad_points);
    for (const Vec& q : quad_.points) {
      BasisEval b = eval(q, false);
      q_values_.push_back(b.values);
      q_grads_.push_back(b.grads);
    }
  }

  Geometry geometry() const { return geom_; }
  int order() const { return order_; }
  int dim() const { return dim_; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int quadrature_points_per_direction() const { return quad_points_; }
  const std::vector<Vec>& nodes() const { return nodes_; }
  const Vec& node(int i) const { return nodes_[i]; }
  const std::vector<int>& vertices() const { return vertices_; }
  const std::vector<LocalFace>& faces() const { return faces_; }
  const QuadratureRule& quadrature() const { return quad_; }

  /// Tabulated basis values/gradients at the default quadrature points.
  const Vector& quad_values(int q) const { return q_values_[q]; }
  const DenseMatrix& quad_grads(int q) const { return q_grads_[q]; }

  /// Inside test for the reference domain, with tolerance.
  bool contains(const Vec& xb, double tol = 1e-12) const {
    double sum = 0.0;
    for (int a = 0; a < dim_; ++a) {
      if (xb[a] < -tol) return false;
      if (is_tensor(geom_) && xb[a] > 1.0 + tol) return false;
      sum += xb[a];
    }
    return is_tensor(geom_) || sum <= 1.0 + tol;
  }

  Vec center() const {
    Vec c(dim_);
    c.setConstant(is_tensor(geom_) ? 0.5 : 1.0 / (dim_ + 1));
    return c;
  }

  BasisEval eval(const Vec& xb, bool with_hessians = true) const {
    return is_tensor(geom_) ? eval_tensor(xb, with_hessians) : eval_simplex(xb, with_hessians);
  }

  Vector values(const Vec& xb) const { return eval(xb, false).values; }

 private:
  void build_tensor() {
    line_ = std::make_unique<Lagrange1D>(gauss_lobatto_nodes(order_));
    const auto& x = line_->nodes();
    const int n = order_ + 1;
    const int nz = dim_ == 3 ? n : 1, ny = dim_ >= 2 ? n : 1;
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < n; ++i) {
          Vec p(dim_);
          p[0] = x[i];
          if (dim_ >= 2) p[1] = x[j];
          if (dim_ == 3) p[2] = x[k];
          nodes_.push_back(p);
          lattice_.push_back({i, j, k});
        }
    auto id = [n, this](int i, int j, int k) { return i + (dim_ >= 2 ? n * j : 0) + (dim_ == 3 ? n * n * k : 0); };
    const int p = order_;
    if (dim_ == 1) vertices_ = {id(0, 0, 0), id(p, 0, 0)};
    if (dim_ == 2) vertices_ = {id(0, 0, 0), id(p, 0, 0), id(p, p, 0), id(0, p, 0)};
    if (dim_ == 3)
      vertices_ = {id(0, 0, 0), id(p, 0, 0), id(p, p, 0), id(0, p, 0),
                   id(0, 0, p), id(p, 0, p), id(p, p, p), id(0, p, p)};
  }

  void build_simplex() {
    const int p = order_;
    for (int k = 0; k <= (dim_ == 3 ? p : 0); ++k)
      for (int j = 0; j <= p - k; ++j)
        for (int i = 0; i <= p - j - k; ++i) {
          Vec q(dim_);
          q[0] = double(i) / p;
          q[1] = double(j) / p;
          if (dim_ == 3) q[2] = double(k) / p;
          nodes_.push_back(q);
          lattice_.push_back({i, j, k});
        }
    auto find = [this](int i, int j, int k) {
      for (int n = 0; n < num_nodes(); ++n)
        if (lattice_[n] == std::array<int, 3>{i, j, k}) return n;
      return -1;
    };
    if (dim_ == 2) vertices_ = {find(0, 0, 0), find(p, 0, 0), find(0, p, 0)};
    if (dim_ == 3) vertices_ = {find(0, 0, 0), find(p, 0, 0), find(0, p, 0), find(0, 0, p)};

    for (int k = 0; k <= (dim_ == 3 ? p : 0); ++k)
      for (int j = 0; j <= p - k; ++j)
        for (int i = 0; i <= p - j - k; ++i) exponents_.push_back({i, j, k});
    shift_ = center();
    const int np = num_nodes();
    DenseMatrix V(np, np);
    for (int r = 0; r < np; ++r)
      for (int m = 0; m < np; ++m) V(r, m) = monomial(m, nodes_[r] - shift_);
    coeffs_ = V.fullPivLu().inverse();
  }

  double monomial(int m, const Vec& y) const {
    double v = 1.0;
    for (int a = 0; a < dim_; ++a) v *= std::pow(y[a], exponents_[m][a]);
    return v;
  }

  void build_faces() {
    const int p = order_;
    std::vector<std::function<bool(const std::array<int, 3>&)>> preds;
    switch (geom_) {
      case Geometry::segment:
        preds = {[](auto& l) { return l[0] == 0; }, [p](auto& l) { return l[0] == p; }};
        break;
      case Geometry::quad:
        preds = {[](auto& l) { return l[1] == 0; }, [p](auto& l) { return l[0] == p; },
                 [p](auto& l) { return l[1] == p; }, [](auto& l) { return l[0] == 0; }};
        break;
      case Geometry::tri:
        preds = {[](auto& l) { return l[1] == 0; }, [p](auto& l) { return l[0] + l[1] == p; },
                 [](auto& l) { return l[0] == 0; }};
        break;
      case Geometry::hex:
        preds = {[](auto& l) { return l[2] == 0; }, [](auto& l) { return l[1] == 0; },
                 [p](auto& l) { return l[0] == p; }, [p](auto& l) { return l[1] == p; },
                 [](auto& l) { return l[0] == 0; }, [p](auto& l) { return l[2] == p; }};
        break;
      case Geometry::tet:
        preds = {[](auto& l) { return l[2] == 0; }, [](auto& l) { return l[1] == 0; },
                 [](auto& l) { return l[0] == 0; }, [p](auto& l) { return l[0] + l[1] + l[2] == p; }};
        break;
    }
    for (auto& pred : preds) {
      LocalFace f;
      for (int n = 0; n < num_nodes(); ++n)
        if (pred(lattice_[n])) f.nodes.push_back(n);
      for (int v : vertices_)
        if (pred(lattice_[v])) f.vertices.push_back(v);
      faces_.push_back(std::move(f));
    }
  }

  BasisEval eval_tensor(const Vec& xb, bool hess) const {
    const int n = order_ + 1;
    std::array<std::vector<double>, 3> v, d1, d2;
    for (int a = 0; a < dim_; ++a) {
      v[a].resize(n);
      d1[a].resize(n);
      d2[a].resize(n);
      line_->eval(xb[a], v[a].data(), d1[a].data(), hess ? d2[a].data() : nullptr);
    }
    const int np = num_nodes();
    BasisEval out{Vector(np), DenseMatrix(np, dim_), DenseMatrix(hess ? np : 0, dim_ * dim_)};
    for (int r = 0; r < np; ++r) {
      const auto& l = lattice_[r];
      // f[a][order] = factor in direction a of derivative order 0/1/2
      double f[3][3];
      for (int a = 0; a < 3; ++a) {
        if (a < dim_) {
          f[a][0] = v[a][l[a]];
          f[a][1] = d1[a][l[a]];
          f[a][2] = hess ? d2[a][l[a]] : 0.0;
        } else {
          f[a][0] = 1.0;
          f[a][1] = f[a][2] = 0.0;
        }
      }
      out.values[r] = f[0][0] * f[1][0] * f[2][0];
      for (int a = 0; a < dim_; ++a) {
        double g = 1.0;
        for (int c = 0; c < 3; ++c) g *= f[c][c == a ? 1 : 0];
        out.grads(r, a) = g;
      }
      if (hess) {
        for (int a = 0; a < dim_; ++a)
          for (int b = 0; b < dim_; ++b) {
            double h = 1.0;
            for (int c = 0; c < 3; ++c) {
              const int ord = (c == a) + (c == b);
              h *= f[c][ord];
            }
            out.hessians(r, a * dim_ + b) = h;
          }
      }
    }
    return out;
  }

  BasisEval eval_simplex(const Vec& xb, bool hess) const {
    const int np = num_nodes();
    const Vec y = xb - shift_;
    Vector mv(np);
    DenseMatrix mg(np, dim_), mh(hess ? np : 0, dim_ * dim_);
    auto ipow = [](double base, int e) { return e <= 0 ? 1.0 : std::pow(base, e); };
    for (int m = 0; m < np; ++m) {
      const auto& e = exponents_[m];
      double pw[3][3];  // pw[a][k] = k-th derivative factor of y_a^e_a
      for (int a = 0; a < 3; ++a) {
        const int ea = a < dim_ ? e[a] : 0;
        const double ya = a < dim_ ? y[a] : 0.0;
        pw[a][0] = ipow(ya, ea);
        pw[a][1] = ea >= 1 ? ea * ipow(ya, ea - 1) : 0.0;
        pw[a][2] = ea >= 2 ? ea * (ea - 1) * ipow(ya, ea - 2) : 0.0;
      }
      mv[m] = pw[0][0] * pw[1][0] * pw[2][0];
      for (int a = 0; a < dim_; ++a) {
        double g = 1.0;
        for (int c = 0; c < 3; ++c) g *= pw[c][c == a ? 1 : 0];
        mg(m, a) = g;
      }
      if (hess)
        for (int a = 0; a < dim_; ++a)
          for (int b = 0; b < dim_; ++b) {
            double h = 1.0;
            for (int c = 0; c < 3; ++c) h *= pw[c][(c == a) + (c == b)];
            mh(m, a * dim_ + b) = h;
          }
    }
    BasisEval out;
    out.values = coeffs_.transpose() * mv;
    out.grads = coeffs_.transpose() * mg;
    if (hess) out.hessians = coeffs_.transpose() * mh;
    else out.hessians.resize(0, dim_ * dim_);
    return out;
  }

  Geometry geom_;
  int order_;
  int dim_;
  int quad_points_ = 0;
  std::vector<Vec> nodes_;
  std::vector<std::array<int, 3>> lattice_;
  std::vector<int> vertices_;
  std::vector<LocalFace> faces_;
  QuadratureRule quad_;
  std::vector<Vector> q_values_;
  std::vector<DenseMatrix> q_grads_;
  std::unique_ptr<Lagrange1D> line_;
  std::vector<std::array<int, 3>> exponents_;
  Vec shift_;
  DenseMatrix coeffs_;
};

/// Shared, cached reference element for a (geometry, order, quadrature) triple.
inline std::shared_ptr<const ReferenceElement> reference_element(Geometry geom, int order, int quad_points = 0) {
  static std::mutex mutex;
  static std::map<std::tuple<int, int, int>, std::shared_ptr<const ReferenceElement>> cache;
  if (quad_points <= 0) quad_points = order + 2;
  const auto key = std::make_tuple(static_cast<int>(geom), order, quad_points);
  std::lock_guard lock(mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto ref = std::make_shared<const ReferenceElement>(geom, order, quad_points);
  cache.emplace(key, ref);
  return ref;
}

}  // namespace morphfit
