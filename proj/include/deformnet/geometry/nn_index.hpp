#pragma once

#include <cstddef>
#include <vector>

#include "deformnet/geometry/types.hpp"

namespace deformnet::geom {

/// Exact Euclidean nearest-neighbor index (KD-tree, bucketed leaves).
/// Ties on distance go to the lower insertion index. Immutable after
/// construction; concurrent queries are safe.
class NNIndex {
 public:
  struct Hit {
    std::size_t index = 0;
    double distance = 0.0;
  };

  explicit NNIndex(Points points);

  std::size_t size() const { return points_.size(); }
  const Points& points() const { return points_; }
  const Eigen::Vector3d& point(std::size_t i) const { return points_[i]; }

  Hit nearest(const Eigen::Vector3d& query) const;
  /// Up to k hits ordered by (distance, index).
  std::vector<Hit> k_nearest(const Eigen::Vector3d& query, std::size_t k) const;

 private:
  struct Node {
    int axis = -1;  // -1 for a leaf
    double split = 0.0;
    std::size_t begin = 0, end = 0;  // leaf range into order_
    int left = -1, right = -1;
  };

  int build(std::size_t begin, std::size_t end);
  void search_nearest(int node, const Eigen::Vector3d& q, double& best_d2,
                      std::size_t& best) const;
  void search_k(int node, const Eigen::Vector3d& q, std::size_t k,
                std::vector<std::pair<double, std::size_t>>& heap) const;

  Points points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace deformnet::geom
