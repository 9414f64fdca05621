#pragma once

// Analytic level-set primitives and constructive solid geometry trees.
// Sign convention: negative inside the kept region. Primitives return exact
// signed distances except `Parabola`, which is a sign-correct level function.

#include "morphfit/common.hpp"

#include <cmath>
#include <memory>
#include <sstream>
#include <variant>
#include <vector>

namespace morphfit {

/// sigma, grad sigma and Hessian of sigma at one point.
struct LevelSetSample {
  double value = 0.0;
  Vec grad;
  Mat hess;
};

struct Sphere {
  Vec center;
  double radius = 0.0;
};

struct Box {
  Vec center;
  Vec half;  // half widths
};

/// Capped cylinder with unit axis direction, total length `length`.
struct Cylinder {
  Vec axis;
  Vec center;
  double radius = 0.0;
  double length = 0.0;
};

/// {x : (x - point) . normal <= 0}; the normal points out of the region.
struct HalfSpace {
  Vec point;
  Vec normal;
};

/// 2D region below y = a x^2 + b x + c.
struct Parabola {
  double a = 0.0, b = 0.0, c = 0.0;
};

/// Convex 2D polygon (trapezium for four vertices).
struct Polygon {
  std::vector<Vec> vertices;
};

enum class CsgOp { unite, intersect, subtract };

struct CsgNode;
using CsgPtr = std::shared_ptr<const CsgNode>;

struct CsgOperation {
  CsgOp op = CsgOp::unite;
  std::vector<CsgPtr> children;
};

struct CsgNode {
  std::variant<Sphere, Box, Cylinder, HalfSpace, Parabola, Polygon, CsgOperation> item;
};

namespace csg {

inline CsgPtr make(auto&& item) { return std::make_shared<const CsgNode>(CsgNode{std::forward<decltype(item)>(item)}); }

inline CsgPtr sphere(const Vec& center, double radius) { return make(Sphere{center, radius}); }
inline CsgPtr box(const Vec& center, const Vec& half) { return make(Box{center, half}); }
inline CsgPtr cylinder(const Vec& axis, const Vec& center, double radius, double length) {
  return make(Cylinder{axis.normalized(), center, radius, length});
}
inline CsgPtr halfspace(const Vec& point, const Vec& normal) { return make(HalfSpace{point, normal.normalized()}); }
inline CsgPtr parabola(double a, double b, double c) { return make(Parabola{a, b, c}); }
inline CsgPtr polygon(std::vector<Vec> vertices) {
  double area = 0.0;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const Vec& p = vertices[i];
    const Vec& q = vertices[(i + 1) % vertices.size()];
    area += p[0] * q[1] - q[0] * p[1];
  }
  if (area < 0) std::reverse(vertices.begin(), vertices.end());
  return make(Polygon{std::move(vertices)});
}
inline CsgPtr op(CsgOp o, std::vector<CsgPtr> children) {
  if (children.empty()) throw Error(Errc::invalid_argument, "CSG operation needs operands");
  if (o == CsgOp::subtract && children.size() != 2) throw Error(Errc::invalid_argument, "subtract takes two operands");
  return make(CsgOperation{o, std::move(children)});
}
inline CsgPtr unite(CsgPtr a, CsgPtr b) { return op(CsgOp::unite, {std::move(a), std::move(b)}); }
inline CsgPtr intersect(CsgPtr a, CsgPtr b) { return op(CsgOp::intersect, {std::move(a), std::move(b)}); }
inline CsgPtr subtract(CsgPtr a, CsgPtr b) { return op(CsgOp::subtract, {std::move(a), std::move(b)}); }

}  // namespace csg

namespace detail {

inline LevelSetSample zero_sample(int d) { return {0.0, Vec::Zero(d), Mat::Zero(d, d)}; }

// distance to a point: value r, grad n, hess (I - n n^T)/r
inline LevelSetSample point_distance(const Vec& diff, double offset) {
  const int d = static_cast<int>(diff.size());
  LevelSetSample s = zero_sample(d);
  const double r = diff.norm();
  s.value = r - offset;
  if (r > 0.0) {
    s.grad = diff / r;
    s.hess = (Mat::Identity(d, d) - s.grad * s.grad.transpose()) / r;
  }
  return s;
}

inline LevelSetSample eval_primitive(const Sphere& p, const Vec& x) { return point_distance(x - p.center, p.radius); }

inline LevelSetSample eval_primitive(const Box& p, const Vec& x) {
  const int d = static_cast<int>(x.size());
  LevelSetSample s = zero_sample(d);
  Vec q(d), sg(d);
  for (int a = 0; a < d; ++a) {
    const double t = x[a] - p.center[a];
    sg[a] = t < 0 ? -1.0 : 1.0;
    q[a] = std::abs(t) - p.half[a];
  }
  if (q.maxCoeff() > 0.0) {
    Vec o = q.cwiseMax(0.0);
    const double r = o.norm();
    s.value = r;
    for (int a = 0; a < d; ++a) s.grad[a] = sg[a] * o[a] / r;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        if (o[a] > 0.0 && o[b] > 0.0) s.hess(a, b) = ((a == b ? 1.0 : 0.0) - s.grad[a] * s.grad[b]) / r;
  } else {
    int k = 0;
    s.value = q.maxCoeff(&k);
    s.grad[k] = sg[k];
  }
  return s;
}

inline LevelSetSample eval_primitive(const Cylinder& p, const Vec& x) {
  const int d = static_cast<int>(x.size());
  LevelSetSample s = zero_sample(d);
  const Vec v = x - p.center;
  const double t = v.dot(p.axis);
  const Vec w = v - t * p.axis;
  const double rho = w.norm();
  const Vec what = rho > 0 ? Vec(w / rho) : Vec(Vec::Zero(d));
  const double st = t < 0 ? -1.0 : 1.0;
  const double dr = rho - p.radius, da = std::abs(t) - 0.5 * p.length;
  const Mat I = Mat::Identity(d, d);
  const Mat aat = p.axis * p.axis.transpose();
  const Mat radial_curv = rho > 0 ? Mat((I - aat - what * what.transpose()) / rho) : Mat(Mat::Zero(d, d));
  if (dr > 0.0 && da > 0.0) {
    const double r = std::hypot(dr, da);
    s.value = r;
    const double gr = dr / r, ga = da / r;
    s.grad = gr * what + ga * st * p.axis;
    const double hrr = da * da / (r * r * r), haa = dr * dr / (r * r * r), hra = -dr * da / (r * r * r);
    s.hess = hrr * what * what.transpose() + haa * aat + hra * st * (what * p.axis.transpose() + p.axis * what.transpose()) +
             gr * radial_curv;
  } else if (dr >= da) {
    s.value = dr;
    s.grad = what;
    s.hess = radial_curv;
  } else {
    s.value = da;
    s.grad = st * p.axis;
  }
  return s;
}

inline LevelSetSample eval_primitive(const HalfSpace& p, const Vec& x) {
  const int d = static_cast<int>(x.size());
  LevelSetSample s = zero_sample(d);
  s.value = (x - p.point).dot(p.normal);
  s.grad = p.normal;
  return s;
}

inline LevelSetSample eval_primitive(const Parabola& p, const Vec& x) {
  LevelSetSample s = zero_sample(2);
  s.value = x[1] - (p.a * x[0] * x[0] + p.b * x[0] + p.c);
  s.grad << -(2.0 * p.a * x[0] + p.b), 1.0;
  s.hess(0, 0) = -2.0 * p.a;
  return s;
}

inline LevelSetSample eval_primitive(const Polygon& p, const Vec& x) {
  const std::size_t n = p.vertices.size();
  LevelSetSample s = zero_sample(2);
  double max_line = -std::numeric_limits<double>::infinity();
  Vec max_normal(2);
  bool inside = true;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec& a = p.vertices[i];
    const Vec e = p.vertices[(i + 1) % n] - a;
    Vec nrm(2);
    nrm << e[1], -e[0];
    nrm.normalize();
    const double dl = (x - a).dot(nrm);
    if (dl > 0.0) inside = false;
    if (dl > max_line) {
      max_line = dl;
      max_normal = nrm;
    }
  }
  if (inside) {
    s.value = max_line;
    s.grad = max_normal;
    return s;
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec& a = p.vertices[i];
    const Vec e = p.vertices[(i + 1) % n] - a;
    const double t = std::clamp((x - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
    const Vec diff = x - (a + t * e);
    const double dist = diff.norm();
    if (dist < best) {
      best = dist;
      if (t > 0.0 && t < 1.0) {
        s = zero_sample(2);
        s.value = dist;
        s.grad << e[1], -e[0];
        s.grad.normalize();
      } else {
        s = point_distance(diff, 0.0);
      }
    }
  }
  return s;
}

}  // namespace detail

/// Value and derivatives of a CSG tree (union = min, intersection = max,
/// A \ B = max(A, -B)). At ties the first operand wins.
inline LevelSetSample eval_csg(const CsgNode& node, const Vec& x) {
  return std::visit(
      [&](const auto& item) -> LevelSetSample {
        using T = std::decay_t<decltype(item)>;
        if constexpr (std::is_same_v<T, CsgOperation>) {
          LevelSetSample best = eval_csg(*item.children[0], x);
          for (std::size_t i = 1; i < item.children.size(); ++i) {
            LevelSetSample c = eval_csg(*item.children[i], x);
            if (item.op == CsgOp::subtract) {
              c.value = -c.value;
              c.grad = -c.grad;
              c.hess = -c.hess;
            }
            const bool take = item.op == CsgOp::unite ? c.value < best.value : c.value > best.value;
            if (take) best = std::move(c);
          }
          return best;
        } else {
          return detail::eval_primitive(item, x);
        }
      },
      node.item);
}

inline double csg_value(const CsgNode& node, const Vec& x) { return eval_csg(node, x).value; }

/// Material step function: -1 inside (boundary points count as inside), +1 outside.
inline int csg_step(const CsgNode& node, const Vec& x) { return csg_value(node, x) <= 0.0 ? -1 : 1; }

// ---------------------------------------------------------------------------
// Text form: s-expressions
//
//   file      := (csg <dim> <expr>)
//   expr      := (sphere <center...> <r>)            ; "circle" is an alias
//              | (box <center...> <halfwidths...>)
//              | (cylinder <axis...> <center...> <r> <length>)
//              | (halfspace <point...> <normal...>)
//              | (parabola <a> <b> <c>)                ; 2D, y <= a x^2 + b x + c
//              | (trapezium x1 y1 ... x4 y4) | (polygon x1 y1 ... xn yn)
//              | (union <expr> <expr>...) | (intersect <expr> <expr>...)
//              | (subtract <expr> <expr>)
//   ';' starts a comment running to end of line.

struct CsgTree {
  int dim = 2;
  CsgPtr root;
};

namespace detail {

class SexprParser {
 public:
  explicit SexprParser(std::string_view text) : s_(text) {}

  CsgTree parse_file() {
    expect('(');
    if (word() != "csg") fail("expected 'csg'");
    CsgTree tree;
    tree.dim = static_cast<int>(number());
    if (tree.dim != 2 && tree.dim != 3) fail("dimension must be 2 or 3");
    dim_ = tree.dim;
    tree.root = expr();
    expect(')');
    skip();
    if (pos_ != s_.size()) fail("trailing characters");
    return tree;
  }

 private:
  CsgPtr expr() {
    expect('(');
    const std::string head = word();
    CsgPtr out;
    if (head == "union" || head == "intersect" || head == "subtract") {
      std::vector<CsgPtr> kids;
      while (peek() == '(') kids.push_back(expr());
      if (kids.size() < 2) fail(head + " needs at least two operands");
      const CsgOp o = head == "union" ? CsgOp::unite : head == "intersect" ? CsgOp::intersect : CsgOp::subtract;
      if (o == CsgOp::subtract && kids.size() != 2) fail("subtract takes exactly two operands");
      out = csg::op(o, std::move(kids));
    } else if (head == "sphere" || head == "circle") {
      Vec c = vec();
      out = csg::sphere(c, positive());
    } else if (head == "box") {
      Vec c = vec();
      out = csg::box(c, vec());
    } else if (head == "cylinder") {
      Vec axis = vec();
      if (axis.norm() == 0.0) fail("cylinder axis must be nonzero");
      Vec c = vec();
      const double r = positive();
      out = csg::cylinder(axis, c, r, positive());
    } else if (head == "halfspace") {
      Vec p = vec();
      Vec n = vec();
      if (n.norm() == 0.0) fail("halfspace normal must be nonzero");
      out = csg::halfspace(p, n);
    } else if (head == "parabola") {
      if (dim_ != 2) fail("parabola is 2D only");
      const double a = number(), b = number(), c = number();
      out = csg::parabola(a, b, c);
    } else if (head == "trapezium" || head == "polygon") {
      if (dim_ != 2) fail(head + " is 2D only");
      std::vector<Vec> pts;
      while (peek() != ')') {
        Vec p(2);
        p[0] = number();
        p[1] = number();
        pts.push_back(p);
      }
      if (pts.size() < 3 || (head == "trapezium" && pts.size() != 4)) fail("bad vertex count for " + head);
      out = csg::polygon(std::move(pts));
    } else {
      fail("unknown primitive or operator '" + head + "'");
    }
    expect(')');
    return out;
  }

  Vec vec() {
    Vec v(dim_);
    for (int a = 0; a < dim_; ++a) v[a] = number();
    return v;
  }

  double positive() {
    const double v = number();
    if (!(v > 0.0)) fail("expected a positive number");
    return v;
  }

  void skip() {
    while (pos_ < s_.size()) {
      if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
        ++pos_;
      } else if (s_[pos_] == ';') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  char peek() {
    skip();
    return pos_ < s_.size() ? s_[pos_] : '\0';
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string word() {
    skip();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalpha(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    if (pos_ == start) fail("expected a keyword");
    return std::string(s_.substr(start, pos_ - start));
  }

  double number() {
    skip();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_])) && s_[pos_] != '(' &&
           s_[pos_] != ')' && s_[pos_] != ';')
      ++pos_;
    const std::string tok(s_.substr(start, pos_ - start));
    if (tok.empty()) fail("expected a number");
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) fail("malformed number '" + tok + "'");
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < pos_ && i < s_.size(); ++i) {
      if (s_[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw Error(Errc::parse_error, "line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + msg);
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int dim_ = 2;
};

inline void write_vec(std::ostream& os, const Vec& v) {
  for (int a = 0; a < v.size(); ++a) os << ' ' << v[a];
}

inline void write_sexpr(std::ostream& os, const CsgNode& node) {
  std::visit(
      [&](const auto& item) {
        using T = std::decay_t<decltype(item)>;
        if constexpr (std::is_same_v<T, Sphere>) {
          os << "(sphere";
          write_vec(os, item.center);
          os << ' ' << item.radius << ')';
        } else if constexpr (std::is_same_v<T, Box>) {
          os << "(box";
          write_vec(os, item.center);
          write_vec(os, item.half);
          os << ')';
        } else if constexpr (std::is_same_v<T, Cylinder>) {
          os << "(cylinder";
          write_vec(os, item.axis);
          write_vec(os, item.center);
          os << ' ' << item.radius << ' ' << item.length << ')';
        } else if constexpr (std::is_same_v<T, HalfSpace>) {
          os << "(halfspace";
          write_vec(os, item.point);
          write_vec(os, item.normal);
          os << ')';
        } else if constexpr (std::is_same_v<T, Parabola>) {
          os << "(parabola " << item.a << ' ' << item.b << ' ' << item.c << ')';
        } else if constexpr (std::is_same_v<T, Polygon>) {
          os << "(polygon";
          for (const Vec& p : item.vertices) write_vec(os, p);
          os << ')';
        } else {
          os << (item.op == CsgOp::unite ? "(union" : item.op == CsgOp::intersect ? "(intersect" : "(subtract");
          for (const auto& c : item.children) {
            os << ' ';
            write_sexpr(os, *c);
          }
          os << ')';
        }
      },
      node.item);
}

}  // namespace detail

inline CsgTree parse_csg(std::string_view text) { return detail::SexprParser(text).parse_file(); }

inline std::string to_sexpr(const CsgTree& tree) {
  std::ostringstream os;
  os.precision(17);
  os << "(csg " << tree.dim << ' ';
  detail::write_sexpr(os, *tree.root);
  os << ")\n";
  return os.str();
}

}  // namespace morphfit
