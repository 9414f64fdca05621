#pragma once

// Thin wrappers over Boost.Geometry R-trees for point deduplication and
// box candidate searches.

#include "morphfit/common.hpp"

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include <algorithm>
#include <iterator>
#include <utility>
#include <vector>

namespace morphfit {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;

using RPoint = bg::model::point<double, 3, bg::cs::cartesian>;
using RBox = bg::model::box<RPoint>;

inline RPoint to_rpoint(const Vec& x) {
  return RPoint(x[0], x.size() > 1 ? x[1] : 0.0, x.size() > 2 ? x[2] : 0.0);
}

/// Merges points closer than `tol`; returns stable ids in insertion order.
class PointDeduplicator {
 public:
  explicit PointDeduplicator(double tol) : tol_(tol) {}

  int insert(const Vec& x) {
    const RPoint p = to_rpoint(x);
    std::vector<std::pair<RPoint, int>> hit;
    tree_.query(bgi::nearest(p, 1), std::back_inserter(hit));
    if (!hit.empty() && bg::distance(hit.front().first, p) <= tol_) return hit.front().second;
    const int id = static_cast<int>(points_.size());
    points_.push_back(x);
    tree_.insert({p, id});
    return id;
  }

  const std::vector<Vec>& points() const { return points_; }

 private:
  double tol_;
  std::vector<Vec> points_;
  bgi::rtree<std::pair<RPoint, int>, bgi::quadratic<16>> tree_;
};

/// Static box index returning ids of boxes containing a query point.
class BoxIndex {
 public:
  void build(const std::vector<std::pair<Vec, Vec>>& boxes) {
    std::vector<std::pair<RBox, int>> items;
    items.reserve(boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i)
      items.push_back({RBox(to_rpoint(boxes[i].first), to_rpoint(boxes[i].second)), static_cast<int>(i)});
    tree_ = decltype(tree_)(items.begin(), items.end());
  }

  std::vector<int> containing(const Vec& x) const {
    std::vector<std::pair<RBox, int>> hits;
    tree_.query(bgi::intersects(to_rpoint(x)), std::back_inserter(hits));
    std::vector<int> ids;
    for (auto& h : hits) ids.push_back(h.second);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  std::vector<int> intersecting(const Vec& lo, const Vec& hi) const {
    std::vector<std::pair<RBox, int>> hits;
    tree_.query(bgi::intersects(RBox(to_rpoint(lo), to_rpoint(hi))), std::back_inserter(hits));
    std::vector<int> ids;
    for (auto& h : hits) ids.push_back(h.second);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

 private:
  bgi::rtree<std::pair<RBox, int>, bgi::quadratic<16>> tree_;
};

}  // namespace morphfit
