#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace morphfit {

/// Small fixed-capacity vector/matrix types for points and Jacobians (d <= 3).
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 3, 3>;

using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

enum class Errc {
  invalid_argument,
  invalid_order,
  unsupported,
  parse_error,
  unsupported_version,
  io_error,
  bad_element,
  invalid_mesh,
  metric_undefined,
  out_of_domain,
  not_found,
  empty_fit_set,
  no_zero_crossing,
  empty_result,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::invalid_order: return "invalid-order";
    case Errc::unsupported: return "unsupported";
    case Errc::parse_error: return "parse-error";
    case Errc::unsupported_version: return "unsupported-version";
    case Errc::io_error: return "io-error";
    case Errc::bad_element: return "bad-element";
    case Errc::invalid_mesh: return "invalid-mesh";
    case Errc::metric_undefined: return "metric-undefined";
    case Errc::out_of_domain: return "out-of-domain";
    case Errc::not_found: return "not-found";
    case Errc::empty_fit_set: return "empty-fit-set";
    case Errc::no_zero_crossing: return "no-zero-crossing";
    case Errc::empty_result: return "empty-result";
  }
  return "unknown";
}

/// Library exception; `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Warning sink. Defaults to stderr; tests and tools may redirect it.
inline std::function<void(std::string_view)>& warning_handler() {
  static std::function<void(std::string_view)> handler = [](std::string_view msg) {
    std::cerr << "morphfit warning: " << msg << '\n';
  };
  return handler;
}

inline void warn(std::string_view msg) {
  if (warning_handler()) warning_handler()(msg);
}

}  // namespace morphfit
