#pragma once

// Shared helpers for the unit and acceptance tests.

#include "morphfit/pipeline.hpp"

#include <functional>
#include <random>

namespace morphfit::testing {

/// Cartesian mesh on the unit box with interior node coordinates moved by a
/// uniform random offset of at most `amp` times the node spacing.
inline HighOrderMesh perturbed_mesh(int dim, Geometry g, int order, int n, double amp, unsigned seed) {
  return perturb_interior(make_cartesian(dim, {n, n, n}, order, g), amp, seed, 1.0 / (n * order));
}

/// Central-difference gradient of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  Vector y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y[i] = x[i] + h;
    const double fp = f(y);
    y[i] = x[i] - h;
    const double fm = f(y);
    y[i] = x[i];
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// Central-difference Jacobian (columns) of a vector function.
inline DenseMatrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h) {
  DenseMatrix J(x.size(), x.size());
  Vector y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y[i] = x[i] + h;
    const Vector fp = f(y);
    y[i] = x[i] - h;
    const Vector fm = f(y);
    y[i] = x[i];
    J.col(i) = (fp - fm) / (2 * h);
  }
  return J;
}

/// max|a - b| / max(max|b|, floor)
inline double rel_error(const DenseMatrix& a, const DenseMatrix& b, double floor = 1e-12) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), floor);
}

inline std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace morphfit::testing
