#pragma once

#include <cstddef>
#include <vector>

#include "deformnet/autodiff/rng.hpp"
#include "deformnet/geometry/types.hpp"

namespace deformnet::geom {

struct OutlierRemovalConfig {
  int ransac_iterations = 200;
  double plane_distance = 0.005;  // meters
  // A candidate plane must explain at least this fraction of the cloud to be
  // treated as the support surface. Guards against slicing a plane through
  // the object when no table is visible.
  double min_plane_fraction = 0.3;
  std::size_t k = 8;
  double std_ratio = 2.0;
};

struct Plane {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // unit, points toward the object
  double offset = 0.0;                                // n.x + offset = signed distance
  double signed_distance(const Eigen::Vector3d& p) const { return normal.dot(p) + offset; }
};

struct OutlierRemovalResult {
  PointCloud cloud;
  std::vector<std::size_t> kept;  // input rows, ascending
  bool degenerate = false;
  bool plane_found = false;
  Plane plane;
};

/// Table-plane RANSAC followed by a k-NN statistical filter. Throws on fewer
/// than three points. A collinear cloud is returned unchanged with
/// `degenerate` set.
OutlierRemovalResult ransac_remove_outliers(const PointCloud& cloud,
                                            const OutlierRemovalConfig& config, Rng& rng);

/// Keeps rows whose mean distance to their k nearest neighbors is at most
/// mean + std_ratio * stddev, both taken over all n*k neighbor distances.
/// Returns ascending row indices.
std::vector<std::size_t> statistical_inliers(const Points& points, std::size_t k,
                                             double std_ratio);

}  // namespace deformnet::geom
