#pragma once

#include <plantscan/core/types.hpp>

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <utility>
#include <vector>

namespace plantscan {

struct Neighbor {
  std::size_t index;
  double dist2;
};

/// Balanced 3D kd-tree. Owns a copy of its points; queries are const and
/// safe to run concurrently.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    if (!points_.empty()) build(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  /// Indices of points with ||p - q|| <= r, ascending.
  std::vector<std::size_t> radius_search(const Vec3& q, double r) const {
    std::vector<std::size_t> out;
    if (nodes_.empty()) return out;
    visit_radius(0, q, r * r, [&](std::size_t i) { out.push_back(i); });
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t radius_count(const Vec3& q, double r) const {
    std::size_t count = 0;
    if (!nodes_.empty()) visit_radius(0, q, r * r, [&](std::size_t) { ++count; });
    return count;
  }

  /// The k nearest points, closest first; ties broken by index.
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k) const {
    std::vector<Neighbor> heap;
    if (nodes_.empty() || k == 0) return heap;
    heap.reserve(k + 1);
    visit_knn(0, q, k, heap);
    std::sort_heap(heap.begin(), heap.end(), closer);
    return heap;
  }

  Neighbor nearest(const Vec3& q) const {
    auto r = knn(q, 1);
    return r.empty() ? Neighbor{0, std::numeric_limits<double>::infinity()} : r.front();
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::size_t begin, end;
    int axis;  // -1 for leaves
    double split;
    std::size_t left, right;
    Vec3 lo, hi;
  };

  static bool closer(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end, -1, 0.0, 0, 0, Vec3::Zero(), Vec3::Zero()});
    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    nodes_[id].lo = lo;
    nodes_[id].hi = hi;
    if (end - begin <= kLeafSize) return id;

    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  static double box_dist2(const Node& n, const Vec3& q) {
    double d2 = 0;
    for (int a = 0; a < 3; ++a) {
      const double d = q[a] < n.lo[a] ? n.lo[a] - q[a] : (q[a] > n.hi[a] ? q[a] - n.hi[a] : 0.0);
      d2 += d * d;
    }
    return d2;
  }

  template <class F>
  void visit_radius(std::size_t id, const Vec3& q, double r2, F&& f) const {
    const Node& n = nodes_[id];
    if (box_dist2(n, q) > r2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i)
        if ((points_[order_[i]] - q).squaredNorm() <= r2) f(order_[i]);
      return;
    }
    visit_radius(n.left, q, r2, f);
    visit_radius(n.right, q, r2, f);
  }

  void visit_knn(std::size_t id, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    if (heap.size() == k && box_dist2(n, q) > heap.front().dist2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const Neighbor cand{order_[i], (points_[order_[i]] - q).squaredNorm()};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end(), closer);
        } else if (closer(cand, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), closer);
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end(), closer);
        }
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    visit_knn(go_left ? n.left : n.right, q, k, heap);
    visit_knn(go_left ? n.right : n.left, q, k, heap);
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace plantscan
