#pragma once

// Level-set fields (analytic CSG or discrete background) and point location
// in high-order meshes.

#include "morphfit/background.hpp"
#include "morphfit/csg.hpp"
#include "morphfit/mesh.hpp"

#include <memory>
#include <optional>
#include <variant>

namespace morphfit {

class LevelSetField {
 public:
  using Custom = std::function<LevelSetSample(const Vec&)>;

  explicit LevelSetField(CsgTree tree) : dim_(tree.dim), src_(std::move(tree)) {
    if (!std::get<CsgTree>(src_).root) throw Error(Errc::invalid_argument, "empty CSG tree");
  }

  explicit LevelSetField(std::shared_ptr<const BackgroundField> bg) : dim_(bg->dim()), src_(std::move(bg)) {
    if (std::get<1>(src_)->order() == 1)
      warn("background order 1: level-set Hessians vanish, Newton reduces to Gauss-Newton on the fit term");
  }

  explicit LevelSetField(BackgroundField bg) : LevelSetField(std::make_shared<const BackgroundField>(std::move(bg))) {}

  /// Analytic field from a closure returning value, gradient and Hessian.
  static LevelSetField from_function(int dim, Custom f) { return LevelSetField(dim, std::move(f)); }

  int dim() const { return dim_; }
  bool discrete() const { return src_.index() == 1; }
  const BackgroundField* background() const {
    return discrete() ? std::get<1>(src_).get() : nullptr;
  }

  LevelSetSample eval(const Vec& x) const {
    switch (src_.index()) {
      case 0: return eval_csg(*std::get<0>(src_).root, x);
      case 1: return std::get<1>(src_)->eval(x);
      default: return std::get<2>(src_)(x);
    }
  }

  double value(const Vec& x) const {
    switch (src_.index()) {
      case 0: return csg_value(*std::get<0>(src_).root, x);
      case 1: return std::get<1>(src_)->value(x);
      default: return std::get<2>(src_)(x).value;
    }
  }

 private:
  LevelSetField(int dim, Custom f) : dim_(dim), src_(std::move(f)) {}

  int dim_;
  std::variant<CsgTree, std::shared_ptr<const BackgroundField>, Custom> src_;
};

inline LevelSetSample eval_levelset(const LevelSetField& ls, const Vec& x) { return ls.eval(x); }

/// Element-map inversion by Newton's method from the element center.
/// Returns reference coordinates when the residual reaches `tol`.
inline std::optional<Vec> invert_element(const HighOrderMesh& mesh, int e, const Vec& x, double tol,
                                         int max_iter = 50) {
  const auto& ref = mesh.reference();
  const DenseMatrix X = mesh.element_coords(e);
  Vec xb = ref.center();
  for (int it = 0; it < max_iter; ++it) {
    const BasisEval b = ref.eval(xb, false);
    const Vec r = X * b.values - x;
    if (r.norm() <= tol) return xb;
    const Mat A = X * b.grads;
    const double det = A.determinant();
    if (!(std::abs(det) > 0.0)) return std::nullopt;
    xb -= A.inverse() * r;
    if (!xb.allFinite() || xb.cwiseAbs().maxCoeff() > 10.0) return std::nullopt;
  }
  const Vec r = X * ref.values(xb) - x;
  if (r.norm() <= tol) return xb;
  return std::nullopt;
}

/// Point location in a high-order mesh: box-tree candidates, then inversion.
class MeshLocator {
 public:
  explicit MeshLocator(const HighOrderMesh& mesh) : mesh_(&mesh), index_(element_box_index(mesh, 0.1)) {
    const auto [lo, hi] = bounding_box(mesh);
    diameter_ = (hi - lo).norm();
  }

  double diameter() const { return diameter_; }

  std::pair<int, Vec> find_point(const Vec& x) const {
    const double tol = 1e-12 * diameter_;
    for (int e : index_.containing(x)) {
      auto xb = invert_element(*mesh_, e, x, tol);
      if (xb && mesh_->reference().contains(*xb, 1e-10)) return {e, *xb};
    }
    throw Error(Errc::not_found, "no element contains the point");
  }

 private:
  const HighOrderMesh* mesh_;
  BoxIndex index_;
  double diameter_ = 0.0;
};

inline std::pair<int, Vec> find_point(const HighOrderMesh& mesh, const Vec& x) { return MeshLocator(mesh).find_point(x); }

inline std::pair<int, Vec> find_point(const BackgroundField& bg, const Vec& x) { return bg.find_point(x); }

}  // namespace morphfit
