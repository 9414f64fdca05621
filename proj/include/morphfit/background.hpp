#pragma once

// Adaptive quadtree/octree background fields holding a per-cell tensor
// polynomial, plus signed-distance construction and native text I/O.

#include "morphfit/common.hpp"
#include "morphfit/csg.hpp"
#include "morphfit/refelem.hpp"
#include "morphfit/spatial.hpp"

#include <fmt/format.h>

#include <array>
#include <charconv>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <unordered_map>
#include <vector>

namespace morphfit {

struct BackgroundCell {
  Vec lo, hi;
  int depth = 0;
  int first_child = -1;  // children are stored contiguously, 2^d of them
  std::vector<double> values;
  bool leaf() const { return first_child < 0; }
};

class BackgroundField {
 public:
  BackgroundField(int dim, int order, Vec lo, Vec hi, std::vector<int> roots)
      : dim_(dim), order_(order), lo_(std::move(lo)), hi_(std::move(hi)), roots_(std::move(roots)) {
    if (dim != 2 && dim != 3) throw Error(Errc::invalid_argument, "background dimension must be 2 or 3");
    if (order < 1) throw Error(Errc::invalid_order, "background order must be >= 1");
    if (lo_.size() != dim || hi_.size() != dim || (hi_ - lo_).minCoeff() <= 0.0)
      throw Error(Errc::invalid_argument, "invalid background bounding box");
    roots_.resize(dim, 1);
    for (int r : roots_)
      if (r < 1) throw Error(Errc::invalid_argument, "root grid counts must be >= 1");
    ref_ = reference_element(dim == 2 ? Geometry::quad : Geometry::hex, order);
    const int nz = dim == 3 ? roots_[2] : 1;
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < roots_[1]; ++j)
        for (int i = 0; i < roots_[0]; ++i) {
          const int idx[3] = {i, j, k};
          BackgroundCell c;
          c.lo = Vec(dim);
          c.hi = Vec(dim);
          for (int a = 0; a < dim; ++a) {
            const double h = (hi_[a] - lo_[a]) / roots_[a];
            c.lo[a] = lo_[a] + idx[a] * h;
            c.hi[a] = idx[a] + 1 == roots_[a] ? hi_[a] : lo_[a] + (idx[a] + 1) * h;
          }
          c.values.assign(ref_->num_nodes(), 0.0);
          cells_.push_back(std::move(c));
        }
  }

  int dim() const { return dim_; }
  int order() const { return order_; }
  const Vec& lo() const { return lo_; }
  const Vec& hi() const { return hi_; }
  const std::vector<int>& roots() const { return roots_; }
  int num_roots() const {
    int n = 1;
    for (int r : roots_) n *= r;
    return n;
  }
  const ReferenceElement& reference() const { return *ref_; }
  const std::vector<BackgroundCell>& cells() const { return cells_; }
  const BackgroundCell& cell(int c) const { return cells_.at(c); }

  std::vector<int> leaves() const {
    std::vector<int> out;
    for (int c = 0; c < static_cast<int>(cells_.size()); ++c)
      if (cells_[c].leaf()) out.push_back(c);
    return out;
  }

  int max_depth() const {
    int m = 0;
    for (const auto& c : cells_) m = std::max(m, c.depth);
    return m;
  }

  double finest_cell_diameter() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& c : cells_)
      if (c.leaf()) m = std::min(m, (c.hi - c.lo).norm());
    return m;
  }

  double domain_diameter() const { return (hi_ - lo_).norm(); }

  /// Physical position of node i of cell c.
  Vec node_position(int c, int i) const {
    const auto& cell = cells_[c];
    return cell.lo + ref_->node(i).cwiseProduct(cell.hi - cell.lo);
  }

  /// Splits a leaf into 2^d children with zero values. Returns the first child id.
  int refine(int c) {
    if (!cells_.at(c).leaf()) throw Error(Errc::invalid_argument, "cell is already refined");
    const int first = static_cast<int>(cells_.size());
    const Vec lo = cells_[c].lo, hi = cells_[c].hi, mid = 0.5 * (lo + hi);
    const int depth = cells_[c].depth + 1;
    for (int k = 0; k < (1 << dim_); ++k) {
      BackgroundCell child;
      child.lo = Vec(dim_);
      child.hi = Vec(dim_);
      for (int a = 0; a < dim_; ++a) {
        const bool upper = (k >> a) & 1;
        child.lo[a] = upper ? mid[a] : lo[a];
        child.hi[a] = upper ? hi[a] : mid[a];
      }
      child.depth = depth;
      child.values.assign(ref_->num_nodes(), 0.0);
      cells_.push_back(std::move(child));
    }
    cells_[c].first_child = first;
    cells_[c].values.clear();
    return first;
  }

  void set_values(int c, std::vector<double> v) {
    if (!cells_.at(c).leaf()) throw Error(Errc::invalid_argument, "values live on leaf cells only");
    if (static_cast<int>(v.size()) != ref_->num_nodes()) throw Error(Errc::invalid_argument, "wrong number of cell values");
    cells_[c].values = std::move(v);
  }

  bool contains(const Vec& x, double rel_tol = 1e-12) const {
    const double tol = rel_tol * domain_diameter();
    for (int a = 0; a < dim_; ++a)
      if (x[a] < lo_[a] - tol || x[a] > hi_[a] + tol) return false;
    return true;
  }

  /// Leaf containing x, or -1 outside the domain. Points on a shared cell face go to the upper cell.
  int leaf_at(const Vec& x) const {
    if (x.size() != dim_ || !contains(x)) return -1;
    int idx[3] = {0, 0, 0};
    for (int a = 0; a < dim_; ++a) {
      const double t = (x[a] - lo_[a]) / (hi_[a] - lo_[a]) * roots_[a];
      idx[a] = std::clamp(static_cast<int>(std::floor(t)), 0, roots_[a] - 1);
    }
    int c = idx[0] + roots_[0] * (idx[1] + (dim_ == 3 ? roots_[1] * idx[2] : 0));
    while (!cells_[c].leaf()) {
      const auto& cell = cells_[c];
      int k = 0;
      for (int a = 0; a < dim_; ++a)
        if (x[a] >= 0.5 * (cell.lo[a] + cell.hi[a])) k |= 1 << a;
      c = cell.first_child + k;
    }
    return c;
  }

  /// Leaf and reference coordinates of x; throws not_found outside the domain.
  std::pair<int, Vec> find_point(const Vec& x) const {
    const int c = leaf_at(x);
    if (c < 0) throw Error(Errc::not_found, "point outside background domain");
    const auto& cell = cells_[c];
    Vec xb = (x - cell.lo).cwiseQuotient(cell.hi - cell.lo);
    return {c, xb.cwiseMax(0.0).cwiseMin(1.0)};
  }

  /// Value, gradient and Hessian of the stored polynomial at x.
  LevelSetSample eval(const Vec& x, bool with_hessian = true) const {
    const int c = leaf_at(x);
    if (c < 0) throw Error(Errc::out_of_domain, "level-set evaluation outside background domain");
    const auto& cell = cells_[c];
    const Vec h = cell.hi - cell.lo;
    const Vec xb = ((x - cell.lo).cwiseQuotient(h)).cwiseMax(0.0).cwiseMin(1.0);
    const BasisEval b = ref_->eval(xb, with_hessian);
    const Eigen::Map<const Vector> v(cell.values.data(), static_cast<Eigen::Index>(cell.values.size()));
    LevelSetSample s;
    s.value = b.values.dot(v);
    s.grad = Vec(dim_);
    for (int a = 0; a < dim_; ++a) s.grad[a] = b.grads.col(a).dot(v) / h[a];
    s.hess = Mat::Zero(dim_, dim_);
    if (with_hessian)
      for (int a = 0; a < dim_; ++a)
        for (int bb = 0; bb < dim_; ++bb) s.hess(a, bb) = b.hessians.col(a * dim_ + bb).dot(v) / (h[a] * h[bb]);
    return s;
  }

  double value(const Vec& x) const { return eval(x, false).value; }

 private:
  int dim_, order_;
  Vec lo_, hi_;
  std::vector<int> roots_;
  std::shared_ptr<const ReferenceElement> ref_;
  std::vector<BackgroundCell> cells_;
};

using ScalarFunction = std::function<double(const Vec&)>;

struct BackgroundOptions {
  int order = 3;
  int max_depth = 5;
  std::vector<int> roots;  // root grid; defaults to a single cell per direction
};

namespace detail {

// Sample points used by the refinement test: nodes, centroid, face midpoints.
inline std::vector<Vec> refinement_samples(const BackgroundField& bg, int c) {
  const auto& cell = bg.cell(c);
  std::vector<Vec> pts;
  for (int i = 0; i < bg.reference().num_nodes(); ++i) pts.push_back(bg.node_position(c, i));
  const Vec mid = 0.5 * (cell.lo + cell.hi);
  pts.push_back(mid);
  for (int a = 0; a < bg.dim(); ++a) {
    Vec p = mid;
    p[a] = cell.lo[a];
    pts.push_back(p);
    p[a] = cell.hi[a];
    pts.push_back(p);
  }
  return pts;
}

inline bool changes_sign(const std::vector<double>& v) {
  bool in = false, out = false;
  for (double s : v) (s <= 0.0 ? in : out) = true;
  return in && out;
}

}  // namespace detail

/// Refines cells whose sampled source values change sign, up to max_depth,
/// and stores the source at the Gauss-Lobatto nodes of every leaf.
inline BackgroundField build_background(const ScalarFunction& source, const Vec& lo, const Vec& hi,
                                        const BackgroundOptions& opts = {}) {
  if (opts.max_depth < 0) throw Error(Errc::invalid_argument, "max_depth must be >= 0");
  BackgroundField bg(static_cast<int>(lo.size()), opts.order, lo, hi, opts.roots);
  std::deque<int> queue;
  for (int c = 0; c < bg.num_roots(); ++c) queue.push_back(c);
  while (!queue.empty()) {
    const int c = queue.front();
    queue.pop_front();
    if (bg.cell(c).depth < opts.max_depth) {
      std::vector<double> s;
      for (const Vec& p : detail::refinement_samples(bg, c)) s.push_back(source(p));
      if (detail::changes_sign(s)) {
        const int first = bg.refine(c);
        for (int k = 0; k < (1 << bg.dim()); ++k) queue.push_back(first + k);
        continue;
      }
    }
    std::vector<double> v;
    for (int i = 0; i < bg.reference().num_nodes(); ++i) v.push_back(source(bg.node_position(c, i)));
    bg.set_values(c, std::move(v));
  }
  return bg;
}

/// Same tree, values replaced by `f` sampled at the nodes (order may change).
inline BackgroundField resample(const BackgroundField& src, const ScalarFunction& f, int order = 0) {
  BackgroundField out(src.dim(), order > 0 ? order : src.order(), src.lo(), src.hi(), src.roots());
  for (int c = 0; c < static_cast<int>(src.cells().size()); ++c)
    if (!src.cell(c).leaf()) out.refine(c);
  for (int c = 0; c < static_cast<int>(out.cells().size()); ++c) {
    if (!out.cell(c).leaf()) continue;
    std::vector<double> v;
    for (int i = 0; i < out.reference().num_nodes(); ++i) v.push_back(f(out.node_position(c, i)));
    out.set_values(c, std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Zero set reconstruction and signed distance

/// Piecewise-linear zero set: segments in 2D, triangles in 3D.
class ZeroSet {
 public:
  int dim = 2;
  std::vector<Vec> points;
  std::vector<std::array<int, 3>> simplices;  // 2D uses the first two entries

  void build_index() {
    std::vector<std::pair<RPoint, int>> pts;
    for (int i = 0; i < static_cast<int>(points.size()); ++i) pts.push_back({to_rpoint(points[i]), i});
    point_tree_ = decltype(point_tree_)(pts.begin(), pts.end());
    std::vector<std::pair<Vec, Vec>> boxes;
    for (const auto& s : simplices) {
      Vec lo = points[s[0]], hi = points[s[0]];
      for (int k = 1; k < dim; ++k) {
        lo = lo.cwiseMin(points[s[k]]);
        hi = hi.cwiseMax(points[s[k]]);
      }
      boxes.push_back({lo, hi});
    }
    boxes_.build(boxes);
  }

  /// Unsigned distance from x to the reconstructed zero set.
  double distance(const Vec& x) const {
    std::vector<std::pair<RPoint, int>> hit;
    point_tree_.query(bgi::nearest(to_rpoint(x), 1), std::back_inserter(hit));
    if (hit.empty()) throw Error(Errc::no_zero_crossing, "empty zero set");
    double best = (points[hit.front().second] - x).norm();
    const Vec r = Vec::Constant(dim, best);
    for (int id : boxes_.intersecting(x - r, x + r)) best = std::min(best, simplex_distance(simplices[id], x));
    return best;
  }

 private:
  double simplex_distance(const std::array<int, 3>& s, const Vec& x) const {
    if (dim == 2) return segment_distance(points[s[0]], points[s[1]], x);
    return triangle_distance(points[s[0]], points[s[1]], points[s[2]], x);
  }

  static double segment_distance(const Vec& a, const Vec& b, const Vec& x) {
    const Vec e = b - a;
    const double l2 = e.squaredNorm();
    const double t = l2 > 0 ? std::clamp((x - a).dot(e) / l2, 0.0, 1.0) : 0.0;
    return (x - (a + t * e)).norm();
  }

  static double triangle_distance(const Vec& a, const Vec& b, const Vec& c, const Vec& x) {
    const Eigen::Vector3d e0 = b - a, e1 = c - a, n = e0.cross(e1);
    if (n.squaredNorm() > 1e-30) {
      Eigen::Matrix2d G;
      G << e0.dot(e0), e0.dot(e1), e0.dot(e1), e1.dot(e1);
      const Eigen::Vector2d rhs(e0.dot(x - a), e1.dot(x - a));
      const Eigen::Vector2d uv = G.ldlt().solve(rhs);
      if (uv[0] >= 0 && uv[1] >= 0 && uv[0] + uv[1] <= 1) return std::abs((x - a).dot(n.normalized()));
    }
    return std::min({segment_distance(a, b, x), segment_distance(b, c, x), segment_distance(c, a, x)});
  }

  bgi::rtree<std::pair<RPoint, int>, bgi::quadratic<16>> point_tree_;
  BoxIndex boxes_;
};

struct DistanceOptions {
  int order = 0;             // output polynomial order; 0 keeps the background order
  int lattice = 0;           // lattice intervals per cell edge for zero-set extraction; 0 picks 8 (2D) / 4 (3D)
  int bisection_steps = 48;  // root-finding steps per lattice edge
  int ls_points = 0;         // least-squares samples per direction; 0 means nodal interpolation
};

namespace detail {

// Locates the membership sign change on segment [a, b] by bisection.
inline Vec bisect_crossing(const ScalarFunction& f, Vec a, Vec b, bool a_inside, int steps) {
  for (int it = 0; it < steps; ++it) {
    const Vec m = 0.5 * (a + b);
    if ((f(m) <= 0.0) == a_inside)
      a = m;
    else
      b = m;
  }
  return 0.5 * (a + b);
}

inline void extract_cell_zero_set(const ScalarFunction& f, const BackgroundCell& cell, int dim, int m, int steps,
                                  ZeroSet& zs) {
  const int n = m + 1;
  const int total = dim == 2 ? n * n : n * n * n;
  std::vector<Vec> pos(total);
  std::vector<char> inside(total);
  bool any_in = false, any_out = false;
  for (int l = 0; l < total; ++l) {
    const int idx[3] = {l % n, (l / n) % n, l / (n * n)};
    Vec p(dim);
    for (int a = 0; a < dim; ++a) p[a] = cell.lo[a] + (cell.hi[a] - cell.lo[a]) * idx[a] / m;
    pos[l] = p;
    inside[l] = f(p) <= 0.0;
    (inside[l] ? any_in : any_out) = true;
  }
  if (!any_in || !any_out) return;
  std::unordered_map<long long, int> edge_point;
  auto crossing = [&](int p, int q) {
    if (p > q) std::swap(p, q);
    const long long key = static_cast<long long>(p) * total + q;
    auto it = edge_point.find(key);
    if (it != edge_point.end()) return it->second;
    const int id = static_cast<int>(zs.points.size());
    zs.points.push_back(bisect_crossing(f, pos[p], pos[q], inside[p], steps));
    edge_point.emplace(key, id);
    return id;
  };
  auto lid = [n](int i, int j, int k) { return i + n * (j + n * k); };
  if (dim == 2) {
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < m; ++i) {
        const int c[4] = {lid(i, j, 0), lid(i + 1, j, 0), lid(i + 1, j + 1, 0), lid(i, j + 1, 0)};
        std::vector<int> cut;  // crossing ids in edge order
        for (int e = 0; e < 4; ++e)
          if (inside[c[e]] != inside[c[(e + 1) % 4]]) cut.push_back(crossing(c[e], c[(e + 1) % 4]));
        if (cut.size() == 2) {
          zs.simplices.push_back({cut[0], cut[1], -1});
        } else if (cut.size() == 4) {
          const bool center_in = f(0.5 * (pos[c[0]] + pos[c[2]])) <= 0.0;
          if (center_in == static_cast<bool>(inside[c[0]])) {
            zs.simplices.push_back({cut[0], cut[1], -1});
            zs.simplices.push_back({cut[2], cut[3], -1});
          } else {
            zs.simplices.push_back({cut[3], cut[0], -1});
            zs.simplices.push_back({cut[1], cut[2], -1});
          }
        }
      }
    return;
  }
  // 3D: each lattice cube is split into six tetrahedra along its main diagonal
  static const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (int k = 0; k < m; ++k)
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < m; ++i) {
        for (const auto& pm : perms) {
          int off[3] = {0, 0, 0};
          int tv[4];
          tv[0] = lid(i, j, k);
          for (int s = 0; s < 3; ++s) {
            off[pm[s]] = 1;
            tv[s + 1] = lid(i + off[0], j + off[1], k + off[2]);
          }
          std::vector<int> in, out;
          for (int v : tv) (inside[v] ? in : out).push_back(v);
          if (in.empty() || out.empty()) continue;
          if (in.size() == 1 || out.size() == 1) {
            const int lone = in.size() == 1 ? in[0] : out[0];
            const auto& rest = in.size() == 1 ? out : in;
            zs.simplices.push_back({crossing(lone, rest[0]), crossing(lone, rest[1]), crossing(lone, rest[2])});
          } else {
            const int p0 = crossing(in[0], out[0]), p1 = crossing(in[0], out[1]), p2 = crossing(in[1], out[1]),
                      p3 = crossing(in[1], out[0]);
            zs.simplices.push_back({p0, p1, p2});
            zs.simplices.push_back({p0, p2, p3});
          }
        }
      }
}

}  // namespace detail

/// Piecewise-linear reconstruction of {membership <= 0} boundary inside the
/// finest leaves (and any leaf whose stored values change sign).
inline ZeroSet extract_zero_set(const BackgroundField& bg, const ScalarFunction& membership, const DistanceOptions& opts = {}) {
  const int m = opts.lattice > 0 ? opts.lattice : (bg.dim() == 2 ? 8 : 4);
  ZeroSet zs;
  zs.dim = bg.dim();
  const int finest = [&] {
    int d = 0;
    for (const auto& c : bg.cells())
      if (c.leaf()) d = std::max(d, c.depth);
    return d;
  }();
  for (const auto& cell : bg.cells()) {
    if (!cell.leaf()) continue;
    if (cell.depth != finest && !detail::changes_sign(cell.values)) continue;
    detail::extract_cell_zero_set(membership, cell, bg.dim(), m, opts.bisection_steps, zs);
  }
  if (zs.simplices.empty()) throw Error(Errc::no_zero_crossing, "no zero crossing found in background field");
  zs.build_index();
  return zs;
}

/// Signed distance to the zero set of `membership` (sign of membership,
/// boundary counted inside), stored on the tree of `bg`.
inline BackgroundField distance_field(const BackgroundField& bg, const ScalarFunction& membership,
                                      const DistanceOptions& opts = {}) {
  const ZeroSet zs = extract_zero_set(bg, membership, opts);
  auto signed_distance = [&](const Vec& x) {
    const double d = zs.distance(x);
    return membership(x) <= 0.0 ? -d : d;
  };
  if (opts.ls_points <= 0) return resample(bg, signed_distance, opts.order);

  BackgroundField out(bg.dim(), opts.order > 0 ? opts.order : bg.order(), bg.lo(), bg.hi(), bg.roots());
  for (int c = 0; c < static_cast<int>(bg.cells().size()); ++c)
    if (!bg.cell(c).leaf()) out.refine(c);
  const auto& ref = out.reference();
  const QuadratureRule samples = [&] {
    // Gauss-Lobatto sample grid with ls_points per direction
    const auto gl = gauss_lobatto_nodes(std::max(opts.ls_points - 1, ref.order()));
    QuadratureRule r;
    const int n = static_cast<int>(gl.size());
    const int total = out.dim() == 2 ? n * n : n * n * n;
    for (int l = 0; l < total; ++l) {
      Vec p(out.dim());
      p[0] = gl[l % n];
      p[1] = gl[(l / n) % n];
      if (out.dim() == 3) p[2] = gl[l / (n * n)];
      r.points.push_back(p);
      r.weights.push_back(1.0);
    }
    return r;
  }();
  DenseMatrix B(samples.size(), ref.num_nodes());
  for (int s = 0; s < samples.size(); ++s) B.row(s) = ref.values(samples.points[s]).transpose();
  const DenseMatrix P = B.colPivHouseholderQr().solve(DenseMatrix::Identity(samples.size(), samples.size()));
  for (int c = 0; c < static_cast<int>(out.cells().size()); ++c) {
    const auto& cell = out.cell(c);
    if (!cell.leaf()) continue;
    Vector f(samples.size());
    for (int s = 0; s < samples.size(); ++s)
      f[s] = signed_distance(cell.lo + samples.points[s].cwiseProduct(cell.hi - cell.lo));
    const Vector v = P * f;
    out.set_values(c, std::vector<double>(v.data(), v.data() + v.size()));
  }
  return out;
}

/// Distance field using the background's own stored values as membership.
inline BackgroundField distance_field(const BackgroundField& bg, const DistanceOptions& opts = {}) {
  return distance_field(bg, [&bg](const Vec& x) { return bg.value(x); }, opts);
}

// ---------------------------------------------------------------------------
// Native text format
//
//   morphfit-bgfield v1 <dim> <order> <roots...>
//   bounds <lo...> <hi...>
//   then, per root cell in order, a preorder cell tree:
//     N               internal cell, followed by its 2^d children
//     L v0 v1 ...     leaf cell with its nodal values

inline void write_background(const BackgroundField& bg, std::ostream& os) {
  os << fmt::format("morphfit-bgfield v1 {} {}", bg.dim(), bg.order());
  for (int r : bg.roots()) os << ' ' << r;
  os << "\nbounds";
  for (int a = 0; a < bg.dim(); ++a) os << fmt::format(" {}", bg.lo()[a]);
  for (int a = 0; a < bg.dim(); ++a) os << fmt::format(" {}", bg.hi()[a]);
  os << '\n';
  std::function<void(int)> emit = [&](int c) {
    const auto& cell = bg.cell(c);
    if (cell.leaf()) {
      os << 'L';
      for (double v : cell.values) os << fmt::format(" {}", v);
      os << '\n';
    } else {
      os << "N\n";
      for (int k = 0; k < (1 << bg.dim()); ++k) emit(cell.first_child + k);
    }
  };
  for (int c = 0; c < bg.num_roots(); ++c) emit(c);
}

inline void save_background(const BackgroundField& bg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(Errc::io_error, "cannot open '" + path + "' for writing");
  write_background(bg, os);
  if (!os) throw Error(Errc::io_error, "write failed for '" + path + "'");
}

inline BackgroundField read_background(std::istream& is) {
  std::vector<std::string> tokens;
  for (std::string t; is >> t;) tokens.push_back(std::move(t));
  std::size_t pos = 0;
  auto fail = [](const std::string& msg) -> void { throw Error(Errc::parse_error, "background field: " + msg); };
  auto next = [&]() -> const std::string& {
    if (pos >= tokens.size()) fail("unexpected end of input");
    return tokens[pos++];
  };
  auto number = [&]() {
    const std::string& t = next();
    double v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) fail("malformed number '" + t + "'");
    return v;
  };
  auto integer = [&]() {
    const std::string& t = next();
    int v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) fail("malformed integer '" + t + "'");
    return v;
  };
  if (next() != "morphfit-bgfield") fail("missing header");
  if (const std::string& ver = next(); ver != "v1")
    throw Error(Errc::unsupported_version, "unsupported background field version '" + ver + "'");
  const int dim = integer(), order = integer();
  if (dim != 2 && dim != 3) fail("dimension must be 2 or 3");
  std::vector<int> roots;
  for (int a = 0; a < dim; ++a) roots.push_back(integer());
  if (next() != "bounds") fail("expected 'bounds'");
  Vec lo(dim), hi(dim);
  for (int a = 0; a < dim; ++a) lo[a] = number();
  for (int a = 0; a < dim; ++a) hi[a] = number();
  BackgroundField bg(dim, order, lo, hi, roots);
  const int np = bg.reference().num_nodes();
  std::function<void(int)> parse = [&](int c) {
    const std::string& tag = next();
    if (tag == "N") {
      const int first = bg.refine(c);
      for (int k = 0; k < (1 << dim); ++k) parse(first + k);
    } else if (tag == "L") {
      std::vector<double> v(np);
      for (double& x : v) x = number();
      bg.set_values(c, std::move(v));
    } else {
      fail("expected cell tag N or L, got '" + tag + "'");
    }
  };
  for (int c = 0; c < bg.num_roots(); ++c) parse(c);
  if (pos != tokens.size()) fail("trailing data");
  return bg;
}

inline BackgroundField load_background(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::io_error, "cannot open '" + path + "'");
  return read_background(is);
}

}  // namespace morphfit
