#include "occu/kdtree.hpp"

#include <algorithm>
#include <cmath>

namespace occu {

namespace {

// Max-heap ordering on (squared distance, index): the current worst
// candidate sits at the front.
struct HeapCmp {
  bool operator()(const std::pair<double, int>& a,
                  const std::pair<double, int>& b) const {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  }
};

}  // namespace

KdTree::KdTree(const std::vector<Point2>& pts) : pts_(pts) {
  if (pts_.empty()) return;
  std::vector<int> idx(pts_.size());
  for (std::size_t i = 0; i < pts_.size(); ++i) idx[i] = static_cast<int>(i);
  nodes_.reserve(pts_.size());
  root_ = build(idx, 0, static_cast<int>(pts_.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 2;
  const int mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](int a, int b) {
                     if (pts_[a][axis] != pts_[b][axis])
                       return pts_[a][axis] < pts_[b][axis];
                     return a < b;
                   });
  const int node_id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{});
  nodes_[node_id].point = idx[mid];
  nodes_[node_id].axis = axis;
  const int left = build(idx, lo, mid, depth + 1);
  const int right = build(idx, mid + 1, hi, depth + 1);
  nodes_[node_id].left = left;
  nodes_[node_id].right = right;
  int min_index = nodes_[node_id].point;
  if (left >= 0) min_index = std::min(min_index, nodes_[left].min_index);
  if (right >= 0) min_index = std::min(min_index, nodes_[right].min_index);
  nodes_[node_id].min_index = min_index;
  return node_id;
}

void KdTree::search(int node, const Point2& q, int k, int index_limit,
                    std::vector<std::pair<double, int>>& heap) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  // Entire subtree filtered out by the index restriction.
  if (index_limit >= 0 && n.min_index >= index_limit) return;

  if (index_limit < 0 || n.point < index_limit) {
    const double d2 = sq_dist(pts_[n.point], q);
    const std::pair<double, int> cand{d2, n.point};
    if (static_cast<int>(heap.size()) < k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end(), HeapCmp{});
    } else if (HeapCmp{}(cand, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), HeapCmp{});
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end(), HeapCmp{});
    }
  }

  const double delta = q[n.axis] - pts_[n.point][n.axis];
  const int near = delta < 0.0 ? n.left : n.right;
  const int far = delta < 0.0 ? n.right : n.left;
  search(near, q, k, index_limit, heap);
  if (static_cast<int>(heap.size()) < k || delta * delta <= heap.front().first) {
    search(far, q, k, index_limit, heap);
  }
}

std::vector<int> KdTree::nearest(const Point2& q, int k,
                                 int index_limit) const {
  std::vector<int> out;
  if (k <= 0 || root_ < 0) return out;
  std::vector<std::pair<double, int>> heap;
  heap.reserve(static_cast<std::size_t>(k) + 1);
  search(root_, q, k, index_limit, heap);
  std::sort(heap.begin(), heap.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });
  out.reserve(heap.size());
  for (const auto& [d2, i] : heap) out.push_back(i);
  return out;
}

std::vector<int> brute_force_nearest(const std::vector<Point2>& pts,
                                     const Point2& q, int k, int index_limit) {
  std::vector<std::pair<double, int>> cand;
  const int n = static_cast<int>(pts.size());
  const int hi = index_limit < 0 ? n : std::min(index_limit, n);
  for (int i = 0; i < hi; ++i) cand.emplace_back(sq_dist(pts[i], q), i);
  std::sort(cand.begin(), cand.end());
  if (static_cast<int>(cand.size()) > k) cand.resize(k);
  std::vector<int> out;
  out.reserve(cand.size());
  for (const auto& [d2, i] : cand) out.push_back(i);
  return out;
}

}  // namespace occu
