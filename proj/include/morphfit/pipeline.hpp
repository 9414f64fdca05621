#pragma once

// Builtin shapes and the mark / relabel / split / trim / select pipeline that
// prepares a mesh for fitting.

#include "morphfit/background.hpp"
#include "morphfit/csg.hpp"
#include "morphfit/fitting.hpp"
#include "morphfit/levelset.hpp"

#include <random>

namespace morphfit {

// ---------------------------------------------------------------------------
// Builtin shapes

namespace detail {

inline Vec point(std::initializer_list<double> c) {
  Vec p(static_cast<Eigen::Index>(c.size()));
  Eigen::Index i = 0;
  for (double v : c) p[i++] = v;
  return p;
}

}  // namespace detail

/// Circle of radius 0.3 centered in the unit square.
inline CsgTree builtin_circle() { return {2, csg::sphere(detail::point({0.5, 0.5}), 0.3)}; }

/// Sphere of radius 0.3 centered in the unit cube.
inline CsgTree builtin_sphere() { return {3, csg::sphere(detail::point({0.5, 0.5, 0.5}), 0.3)}; }

/// Square of side 0.5 intersected with a circle of radius 0.3 (both centered),
/// minus two slots of width 0.1 entering from the right and bottom sides.
inline CsgTree builtin_csg2d() {
  using detail::point;
  auto body = csg::intersect(csg::box(point({0.5, 0.5}), point({0.25, 0.25})), csg::sphere(point({0.5, 0.5}), 0.3));
  auto right = csg::box(point({0.8, 0.5}), point({0.2, 0.05}));
  auto bottom = csg::box(point({0.5, 0.2}), point({0.05, 0.2}));
  return {2, csg::subtract(csg::subtract(body, right), bottom)};
}

/// Cube of side 0.5 intersected with a sphere of radius 0.3, minus three
/// axis-aligned cylinders of radius 0.15 and length 0.5 (all centered).
inline CsgTree builtin_csg3d() {
  using detail::point;
  const Vec c = point({0.5, 0.5, 0.5});
  auto body = csg::intersect(csg::box(c, point({0.25, 0.25, 0.25})), csg::sphere(c, 0.3));
  auto cyl = [&](Vec axis) { return csg::cylinder(axis, c, 0.15, 0.5); };
  auto holes = csg::unite(csg::unite(cyl(point({1, 0, 0})), cyl(point({0, 1, 0}))), cyl(point({0, 0, 1})));
  return {3, csg::subtract(body, holes)};
}

inline CsgTree builtin_shape(std::string_view name) {
  if (name == "circle") return builtin_circle();
  if (name == "sphere") return builtin_sphere();
  if (name == "csg2d") return builtin_csg2d();
  if (name == "csg3d") return builtin_csg3d();
  throw Error(Errc::invalid_argument, fmt::format("unknown builtin shape '{}'", name));
}

/// Background field of a CSG membership function refined around its zero set,
/// then replaced by the distance to that zero set.
inline LevelSetField distance_levelset(const CsgTree& tree, const Vec& lo, const Vec& hi, BackgroundOptions bg_opts,
                                       DistanceOptions dist_opts = {}) {
  const auto membership = [root = tree.root](const Vec& x) { return csg_value(*root, x); };
  const BackgroundField bg = build_background(membership, lo, hi, bg_opts);
  return LevelSetField(distance_field(bg, membership, dist_opts));
}

// ---------------------------------------------------------------------------
// Mesh perturbation

/// Moves nodes off the unit-box boundary by uniform offsets of at most
/// `amp` times the node spacing h; halves `amp` until the mesh is valid.
inline HighOrderMesh perturb_interior(HighOrderMesh mesh, double amp, unsigned seed, double h) {
  const std::vector<double> x0 = mesh.coords();
  const int d = mesh.dim();
  for (int attempt = 0; attempt < 60; ++attempt, amp *= 0.5) {
    mesh.coords() = x0;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto& x = mesh.coords();
    for (int i = 0; i < mesh.num_nodes(); ++i)
      for (int a = 0; a < d; ++a) {
        double& v = x[static_cast<std::size_t>(i) * d + a];
        const double shift = amp * h * u(rng);
        if (v > 1e-12 && v < 1.0 - 1e-12) v += shift;
      }
    if (min_detA(mesh) > 0.0) return mesh;
  }
  throw Error(Errc::invalid_mesh, "could not perturb the mesh without inverting elements");
}

// ---------------------------------------------------------------------------
// Fit preparation

enum class FitMode { interface, boundary };
enum class Marking { integral, sign_at_max };

struct PipelineOptions {
  FitMode mode = FitMode::interface;
  Marking marking = Marking::integral;
  bool split = true;                // conforming quad splits for elements with two interface faces
  bool repair = true;               // greedy relabeling when splits are unavailable
  std::optional<int> trim;          // keep only elements with this label
  std::vector<int> boundary_attrs;  // boundary mode; empty selects the faces created by trimming, else all
};

struct PreparedMesh {
  HighOrderMesh mesh;
  NodeSet fit_nodes;
  int relabel_flips = 0;
  int repair_flips = 0;
  int splits_applied = 0;
  int splits_skipped = 0;
  int violations = 0;  // elements with two or more interface faces after preparation
};

inline std::vector<int> mark(const HighOrderMesh& mesh, const LevelSetField& ls, Marking rule) {
  return rule == Marking::integral ? mark_integral(mesh, ls) : mark_sign_at_max(mesh, ls);
}

/// Marks elements, then (interface mode) relabels, splits quads or repairs
/// labels, optionally trims, and selects the nodes to fit.
inline PreparedMesh prepare_fit(HighOrderMesh mesh, const LevelSetField& ls, const PipelineOptions& opts) {
  if (ls.dim() != mesh.dim()) throw Error(Errc::invalid_argument, "level-set dimension differs from mesh dimension");
  PreparedMesh out;
  std::vector<int> eta = mark(mesh, ls, opts.marking);
  if (opts.mode == FitMode::interface) {
    RelabelResult r = relabel(mesh, eta);
    out.relabel_flips = r.flipped;
    eta = r.eta;
    if (!r.split_requests.empty() && mesh.geometry() == Geometry::quad && opts.split) {
      mesh.set_material(eta);
      SplitResult s = split_quads(mesh, r.split_requests);
      out.splits_applied = static_cast<int>(s.applied.size());
      out.splits_skipped = static_cast<int>(s.skipped.size());
      mesh = std::move(s.mesh);
      eta = mesh.material();
    } else if (!r.split_requests.empty() && mesh.geometry() != Geometry::quad && opts.repair) {
      RelabelResult g = reduce_violations(mesh, eta);
      out.repair_flips = g.flipped;
      eta = g.eta;
    }
  }
  int new_attr = 0;
  if (opts.trim) {
    for (const auto& f : mesh.boundary_faces()) new_attr = std::max(new_attr, f.attribute);
    ++new_attr;
  }
  mesh = trim(mesh, eta, opts.trim);
  eta = mesh.material();
  out.violations = static_cast<int>(interface_violations(mesh, eta).size());
  if (opts.mode == FitMode::interface) {
    out.fit_nodes = select_interface_nodes(mesh, eta);
  } else {
    std::vector<int> attrs = opts.boundary_attrs;
    if (attrs.empty() && opts.trim) attrs = {new_attr};
    out.fit_nodes = select_boundary_nodes(mesh, attrs);
  }
  out.mesh = std::move(mesh);
  return out;
}

}  // namespace morphfit
