#include "deformnet/geometry/nn_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace deformnet::geom {

namespace {
constexpr std::size_t kLeafSize = 12;

bool better(double d2, std::size_t i, double best_d2, std::size_t best) {
  return d2 < best_d2 || (d2 == best_d2 && i < best);
}
}  // namespace

NNIndex::NNIndex(Points points) : points_(std::move(points)) {
  if (points_.empty()) throw std::invalid_argument("NNIndex: cannot index an empty point set");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * points_.size() / kLeafSize + 2);
  build(0, points_.size());
}

int NNIndex::build(std::size_t begin, std::size_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  if (end - begin <= kLeafSize) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  Eigen::Vector3d lo = points_[order_[begin]], hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::size_t a, std::size_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  const double split = points_[order_[mid]][axis];
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void NNIndex::search_nearest(int id, const Eigen::Vector3d& q, double& best_d2,
                             std::size_t& best) const {
  const Node& n = nodes_[id];
  if (n.axis < 0) {
    for (std::size_t i = n.begin; i < n.end; ++i) {
      const std::size_t p = order_[i];
      const double d2 = (points_[p] - q).squaredNorm();
      if (better(d2, p, best_d2, best)) {
        best_d2 = d2;
        best = p;
      }
    }
    return;
  }
  // Left subtree holds coordinates <= split, right holds >= split.
  const double diff = q[n.axis] - n.split;
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search_nearest(near, q, best_d2, best);
  if (diff * diff <= best_d2) search_nearest(far, q, best_d2, best);
}

NNIndex::Hit NNIndex::nearest(const Eigen::Vector3d& query) const {
  double best_d2 = std::numeric_limits<double>::infinity();
  std::size_t best = std::numeric_limits<std::size_t>::max();
  search_nearest(0, query, best_d2, best);
  return {best, std::sqrt(best_d2)};
}

void NNIndex::search_k(int id, const Eigen::Vector3d& q, std::size_t k,
                       std::vector<std::pair<double, std::size_t>>& heap) const {
  const Node& n = nodes_[id];
  if (n.axis < 0) {
    for (std::size_t i = n.begin; i < n.end; ++i) {
      const std::size_t p = order_[i];
      const std::pair<double, std::size_t> cand{(points_[p] - q).squaredNorm(), p};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end());
      } else if (cand < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search_k(near, q, k, heap);
  if (heap.size() < k || diff * diff <= heap.front().first) search_k(far, q, k, heap);
}

std::vector<NNIndex::Hit> NNIndex::k_nearest(const Eigen::Vector3d& query, std::size_t k) const {
  k = std::min(k, points_.size());
  std::vector<std::pair<double, std::size_t>> heap;
  heap.reserve(k + 1);
  if (k > 0) search_k(0, query, k, heap);
  std::sort(heap.begin(), heap.end());
  std::vector<Hit> out;
  out.reserve(heap.size());
  for (const auto& [d2, i] : heap) out.push_back({i, std::sqrt(d2)});
  return out;
}

}  // namespace deformnet::geom
