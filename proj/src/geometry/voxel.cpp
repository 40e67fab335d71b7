#include "deformnet/geometry/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace deformnet::geom {

GridSpec grid_over_box(const Aabb& box, int resolution) {
  if (resolution <= 0) throw std::invalid_argument("grid_over_box: resolution must be positive");
  GridSpec spec;
  spec.cell_size = box.extent().maxCoeff() / resolution;
  if (!(spec.cell_size > 0.0)) throw std::invalid_argument("grid_over_box: empty box");
  spec.dims = {resolution, resolution, resolution};
  spec.origin = box.center() - Eigen::Vector3d::Constant(0.5 * resolution * spec.cell_size);
  return spec;
}

VoxelGrid splat_to_voxels(const Points& points, const GridSpec& spec) {
  for (int d : spec.dims) {
    if (d <= 0) throw std::invalid_argument("splat_to_voxels: grid dims must be positive");
  }
  if (!(spec.cell_size > 0.0)) throw std::invalid_argument("splat_to_voxels: cell size must be positive");
  VoxelGrid grid{spec, std::vector<double>(spec.cell_count(), 0.0)};
  const double sigma = 0.5 * spec.cell_size;
  const double cutoff2 = 4.0 * sigma * sigma;
  const double inv_two_s2 = 1.0 / (2.0 * sigma * sigma);
  for (const auto& p : points) {
    // Cell index range whose centers can lie within 2 sigma (= one cell).
    const Eigen::Vector3d g = (p - spec.origin) / spec.cell_size - Eigen::Vector3d::Constant(0.5);
    std::array<int, 3> lo{}, hi{};
    bool outside = false;
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(0, static_cast<int>(std::ceil(g[a] - 1.0)));
      hi[a] = std::min(spec.dims[a] - 1, static_cast<int>(std::floor(g[a] + 1.0)));
      if (lo[a] > hi[a]) outside = true;
    }
    if (outside) continue;
    for (int i = lo[0]; i <= hi[0]; ++i) {
      for (int j = lo[1]; j <= hi[1]; ++j) {
        for (int k = lo[2]; k <= hi[2]; ++k) {
          const double d2 = (spec.cell_center(i, j, k) - p).squaredNorm();
          if (d2 > cutoff2) continue;
          grid.occupancy[spec.flat(i, j, k)] += std::exp(-d2 * inv_two_s2);
        }
      }
    }
  }
  for (double& v : grid.occupancy) v = std::min(v, 1.0);
  return grid;
}

}  // namespace deformnet::geom
