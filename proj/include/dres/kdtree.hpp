#pragma once

#include <array>
#include <functional>
#include <vector>

namespace dres {

/// Static 3-d tree over a point set. Queries break distance ties by point index.
class KdTree {
public:
  using Vec3 = std::array<double, 3>;

  explicit KdTree(std::vector<Vec3> points);

  /// The k nearest points to point `query` (excluding itself), ascending by (distance, index).
  std::vector<int> knn(int query, int k) const;

  /// Nearest point to `query` accepted by `keep`, or -1.
  int nearest_if(const Vec3& query, const std::function<bool(int)>& keep) const;

  const Vec3& point(int i) const { return points_[static_cast<std::size_t>(i)]; }
  int size() const noexcept { return static_cast<int>(points_.size()); }

private:
  struct Node {
    int begin = 0, end = 0;  // range in order_
    int axis = -1;           // -1 for leaves
    double split = 0;
    int left = -1, right = -1;
  };

  int build(int begin, int end, int depth);
  double dist2(const Vec3& a, int i) const;

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace dres
