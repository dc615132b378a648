#include "dres/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>
#include <utility>

namespace dres {

namespace {
constexpr int kLeafSize = 12;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)), order_(points_.size()) {
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) build(0, static_cast<int>(points_.size()), 0);
}

int KdTree::build(int begin, int end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(begin)])];
  Vec3 hi = lo;
  for (int i = begin; i < end; ++i) {
    const auto& p = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  int axis = 0;
  for (int a = 1; a < 3; ++a) {
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  }
  if (hi[axis] == lo[axis]) return id;  // all coincident

  const int mid = begin + (end - begin) / 2;
  auto first = order_.begin() + begin;
  std::nth_element(first, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    const double pa = points_[static_cast<std::size_t>(a)][axis];
    const double pb = points_[static_cast<std::size_t>(b)][axis];
    return pa < pb || (pa == pb && a < b);
  });
  const double split = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(mid)])][axis];
  (void)depth;
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[static_cast<std::size_t>(id)].axis = axis;
  nodes_[static_cast<std::size_t>(id)].split = split;
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

double KdTree::dist2(const Vec3& a, int i) const {
  const auto& b = points_[static_cast<std::size_t>(i)];
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

std::vector<int> KdTree::knn(int query, int k) const {
  if (k <= 0 || points_.size() <= 1) return {};
  const Vec3 q = points_[static_cast<std::size_t>(query)];
  using Entry = std::pair<double, int>;  // max-heap on (dist, index)
  std::priority_queue<Entry> heap;
  auto worst = [&] {
    return static_cast<int>(heap.size()) < k ? std::numeric_limits<double>::infinity()
                                             : heap.top().first;
  };
  std::function<void(int)> visit = [&](int node_id) {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int p = order_[static_cast<std::size_t>(i)];
        if (p == query) continue;
        const Entry e{dist2(q, p), p};
        if (static_cast<int>(heap.size()) < k) {
          heap.push(e);
        } else if (e < heap.top()) {
          heap.pop();
          heap.push(e);
        }
      }
      return;
    }
    const double delta = q[static_cast<std::size_t>(node.axis)] - node.split;
    const int near = delta < 0 ? node.left : node.right;
    const int far = delta < 0 ? node.right : node.left;
    visit(near);
    if (delta * delta <= worst()) visit(far);
  };
  visit(0);
  std::vector<int> out(heap.size());
  for (auto i = static_cast<int>(heap.size()) - 1; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = heap.top().second;
    heap.pop();
  }
  return out;
}

int KdTree::nearest_if(const Vec3& q, const std::function<bool(int)>& keep) const {
  if (points_.empty()) return -1;
  double best_d = std::numeric_limits<double>::infinity();
  int best = -1;
  std::function<void(int)> visit = [&](int node_id) {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int p = order_[static_cast<std::size_t>(i)];
        if (!keep(p)) continue;
        const double d = dist2(q, p);
        if (d < best_d || (d == best_d && p < best)) {
          best_d = d;
          best = p;
        }
      }
      return;
    }
    const double delta = q[static_cast<std::size_t>(node.axis)] - node.split;
    const int near = delta < 0 ? node.left : node.right;
    const int far = delta < 0 ? node.right : node.left;
    visit(near);
    if (delta * delta <= best_d) visit(far);
  };
  visit(0);
  return best;
}

}  // namespace dres
