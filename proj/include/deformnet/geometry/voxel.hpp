#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "deformnet/geometry/types.hpp"

namespace deformnet::geom {

struct GridSpec {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();  // corner of cell (0,0,0)
  double cell_size = 0.01;
  std::array<int, 3> dims{1, 1, 1};

  std::size_t cell_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t flat(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * dims[1] + j) * dims[2] + k;
  }
  Eigen::Vector3d cell_center(int i, int j, int k) const {
    return origin + cell_size * Eigen::Vector3d(i + 0.5, j + 0.5, k + 0.5);
  }
};

/// Cubic grid with `resolution` cells along the longest box edge, centered
/// on the box.
GridSpec grid_over_box(const Aabb& box, int resolution);

struct VoxelGrid {
  GridSpec spec;
  std::vector<double> occupancy;  // flat(i,j,k) order, values in [0,1]

  double at(int i, int j, int k) const { return occupancy[spec.flat(i, j, k)]; }
};

/// Truncated Gaussian splat: sigma = cell_size / 2, cut off at 2 sigma,
/// summed then clamped to [0,1].
VoxelGrid splat_to_voxels(const Points& points, const GridSpec& spec);

}  // namespace deformnet::geom
