#pragma once

#include <array>
#include <vector>

namespace occu {

using Point2 = std::array<double, 2>;

inline double sq_dist(const Point2& a, const Point2& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

// Exact 2-d kd-tree. Queries can be restricted to points whose index is
// below a limit, which is how ordered-predecessor neighbor sets are built.
class KdTree {
 public:
  explicit KdTree(const std::vector<Point2>& pts);

  // Indices of the k nearest points to q, nearest first; ties broken by
  // index. Only points with index < index_limit are eligible
  // (index_limit < 0 lifts the restriction). Fewer than k eligible points
  // returns them all.
  std::vector<int> nearest(const Point2& q, int k, int index_limit = -1) const;

 private:
  struct Node {
    int point = -1;     // index into pts_
    int axis = 0;       // split axis at this node
    int left = -1, right = -1;
    int min_index = 0;  // smallest point index in this subtree
  };

  int build(std::vector<int>& idx, int lo, int hi, int depth);
  void search(int node, const Point2& q, int k, int index_limit,
              std::vector<std::pair<double, int>>& heap) const;

  std::vector<Point2> pts_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

// Reference implementation used to validate the tree in tests.
std::vector<int> brute_force_nearest(const std::vector<Point2>& pts,
                                     const Point2& q, int k,
                                     int index_limit = -1);

}  // namespace occu
