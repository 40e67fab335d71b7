#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "deformnet/geometry/nn_index.hpp"
#include "deformnet/geometry/types.hpp"
#include "deformnet/geometry/voxel.hpp"

namespace deformnet::costs {

using geom::Points;

/// Mean Euclidean nearest-neighbor distance, summed over both directions.
/// Throws on an empty input.
double chamfer(const Points& a, const Points& b);

/// The a -> b half of `chamfer`: mean over a of the distance to the nearest b.
double one_sided_chamfer(const Points& a, const Points& b);

/// Minimum-cost perfect matching on a square cost matrix (row-major n*n).
/// Returns column assigned to each row. O(n^3).
std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n);

/// Earth mover's distance under equal weights: mean matched Euclidean
/// distance of the optimal bijection. Sets of unequal size (or larger than
/// `max_points`) are first reduced by farthest-point sampling from row 0 to
/// min(|a|, |b|, max_points).
double emd(const Points& a, const Points& b, std::size_t max_points = 512);

/// Soft IoU of the two splatted occupancy grids,
///   sum(A*B) / sum(A*A + B*B - A*B),
/// which reduces to sum(A*B) / sum(A + B - A*B) on binary grids and is exactly
/// 1 for identical soft grids. Returns 0 with a warning when both grids are
/// empty.
double soft_iou(const Points& a, const Points& b, const geom::GridSpec& grid);
double soft_iou(const geom::VoxelGrid& a, const geom::VoxelGrid& b);

/// Target region for the one-directional distance cost. Either a dense
/// sample set of the region, or a signed distance function that is exact
/// outside the region and <= 0 inside it (only max(sdf, 0) is used).
class ContinuousTarget {
 public:
  using Sdf = std::function<double(const Eigen::Vector3d&)>;

  static ContinuousTarget from_samples(Points samples);
  static ContinuousTarget from_sdf(Sdf sdf, std::string name = "sdf");
  static ContinuousTarget sphere(const Eigen::Vector3d& center, double radius);
  static ContinuousTarget box(const geom::Aabb& box);
  /// Region {x : normal . x + offset <= 0}, normal unit length.
  static ContinuousTarget half_space(const Eigen::Vector3d& normal, double offset);

  /// Distance from p to the region (0 inside).
  double distance(const Eigen::Vector3d& p) const;
  bool is_sampled() const { return index_ != nullptr; }
  const std::string& name() const { return name_; }

 private:
  std::shared_ptr<const geom::NNIndex> index_;
  Sdf sdf_;
  std::string name_;
};

/// Mean over particles of the distance to the target region.
double d2cd(const Points& particles, const ContinuousTarget& target);

enum class CostKind { kChamfer, kEmd, kSoftIou, kD2cd };

CostKind parse_cost_kind(const std::string& name);
std::string to_string(CostKind kind);

}  // namespace deformnet::costs
