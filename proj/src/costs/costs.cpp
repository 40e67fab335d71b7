#include "deformnet/costs/costs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "deformnet/geometry/sampling.hpp"

namespace deformnet::costs {

namespace {

void require_nonempty(const Points& p, const char* what) {
  if (p.empty()) throw std::invalid_argument(std::string(what) + ": empty point set");
}

}  // namespace

double one_sided_chamfer(const Points& a, const Points& b) {
  require_nonempty(a, "chamfer");
  require_nonempty(b, "chamfer");
  const geom::NNIndex index(b);
  double sum = 0.0;
  for (const auto& p : a) sum += index.nearest(p).distance;
  return sum / static_cast<double>(a.size());
}

double chamfer(const Points& a, const Points& b) {
  return one_sided_chamfer(a, b) + one_sided_chamfer(b, a);
}

std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n) {
  if (cost.size() != n * n) throw std::invalid_argument("hungarian: cost matrix is not n*n");
  // Shortest augmenting path with row/column potentials; 1-based internally,
  // column 0 is the virtual source.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

double emd(const Points& a, const Points& b, std::size_t max_points) {
  require_nonempty(a, "emd");
  require_nonempty(b, "emd");
  const std::size_t n = std::min({a.size(), b.size(), std::max<std::size_t>(max_points, 1)});
  const Points ra = a.size() == n ? a : geom::gather_rows(a, geom::farthest_point_sample(a, n, 0));
  const Points rb = b.size() == n ? b : geom::gather_rows(b, geom::farthest_point_sample(b, n, 0));
  if (ra.size() != rb.size()) throw std::logic_error("emd: size mismatch after resampling");
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = (ra[i] - rb[j]).norm();
  }
  const auto assign = hungarian(cost, n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += cost[i * n + assign[i]];
  return sum / static_cast<double>(n);
}

double soft_iou(const geom::VoxelGrid& a, const geom::VoxelGrid& b) {
  if (a.occupancy.size() != b.occupancy.size() || a.spec.dims != b.spec.dims ||
      a.spec.cell_size != b.spec.cell_size || a.spec.origin != b.spec.origin) {
    throw std::invalid_argument("soft_iou: grids do not share origin, cell size and dims");
  }
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < a.occupancy.size(); ++i) {
    const double x = a.occupancy[i], y = b.occupancy[i];
    inter += x * y;
    uni += x * x + y * y - x * y;
  }
  if (uni == 0.0) {
    spdlog::warn("soft_iou: both occupancy grids are empty, returning 0");
    return 0.0;
  }
  return inter / uni;
}

double soft_iou(const Points& a, const Points& b, const geom::GridSpec& grid) {
  return soft_iou(geom::splat_to_voxels(a, grid), geom::splat_to_voxels(b, grid));
}

ContinuousTarget ContinuousTarget::from_samples(Points samples) {
  if (samples.empty()) throw std::invalid_argument("ContinuousTarget: empty target sample set");
  ContinuousTarget t;
  t.index_ = std::make_shared<const geom::NNIndex>(std::move(samples));
  t.name_ = "samples";
  return t;
}

ContinuousTarget ContinuousTarget::from_sdf(Sdf sdf, std::string name) {
  if (!sdf) throw std::invalid_argument("ContinuousTarget: null sdf");
  ContinuousTarget t;
  t.sdf_ = std::move(sdf);
  t.name_ = std::move(name);
  return t;
}

ContinuousTarget ContinuousTarget::sphere(const Eigen::Vector3d& center, double radius) {
  return from_sdf([center, radius](const Eigen::Vector3d& p) { return (p - center).norm() - radius; },
                  "sphere");
}

ContinuousTarget ContinuousTarget::box(const geom::Aabb& box) {
  return from_sdf(
      [box](const Eigen::Vector3d& p) {
        const Eigen::Vector3d c = box.center();
        const Eigen::Vector3d h = 0.5 * box.extent();
        const Eigen::Vector3d q = (p - c).cwiseAbs() - h;
        return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
      },
      "box");
}

ContinuousTarget ContinuousTarget::half_space(const Eigen::Vector3d& normal, double offset) {
  const Eigen::Vector3d n = normal.normalized();
  return from_sdf([n, offset](const Eigen::Vector3d& p) { return n.dot(p) + offset; },
                  "half_space");
}

double ContinuousTarget::distance(const Eigen::Vector3d& p) const {
  if (index_) return index_->nearest(p).distance;
  return std::max(sdf_(p), 0.0);
}

double d2cd(const Points& particles, const ContinuousTarget& target) {
  require_nonempty(particles, "d2cd");
  double sum = 0.0;
  for (const auto& p : particles) sum += target.distance(p);
  return sum / static_cast<double>(particles.size());
}

CostKind parse_cost_kind(const std::string& name) {
  if (name == "cd" || name == "chamfer") return CostKind::kChamfer;
  if (name == "emd") return CostKind::kEmd;
  if (name == "siou" || name == "soft_iou") return CostKind::kSoftIou;
  if (name == "d2cd") return CostKind::kD2cd;
  throw std::invalid_argument("unknown cost '" + name + "' (expected cd, emd, siou or d2cd)");
}

std::string to_string(CostKind kind) {
  switch (kind) {
    case CostKind::kChamfer: return "cd";
    case CostKind::kEmd: return "emd";
    case CostKind::kSoftIou: return "siou";
    case CostKind::kD2cd: return "d2cd";
  }
  return "?";
}

}  // namespace deformnet::costs
