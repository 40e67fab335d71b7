#include "deformnet/geometry/outliers.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "deformnet/geometry/nn_index.hpp"

namespace deformnet::geom {

namespace {

Eigen::Matrix3d covariance(const Points& pts, const std::vector<std::size_t>& rows,
                           Eigen::Vector3d& mean) {
  mean.setZero();
  for (std::size_t r : rows) mean += pts[r];
  mean /= static_cast<double>(rows.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::size_t r : rows) {
    const Eigen::Vector3d d = pts[r] - mean;
    cov += d * d.transpose();
  }
  return cov / static_cast<double>(rows.size());
}

std::vector<std::size_t> plane_inliers(const Points& pts, const Plane& plane, double thr) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (std::abs(plane.signed_distance(pts[i])) <= thr) rows.push_back(i);
  }
  return rows;
}

}  // namespace

std::vector<std::size_t> statistical_inliers(const Points& points, std::size_t k,
                                             double std_ratio) {
  std::vector<std::size_t> all(points.size());
  std::iota(all.begin(), all.end(), 0);
  if (points.size() <= k) return all;
  const NNIndex index(points);
  std::vector<double> score(points.size());
  // Threshold statistics are taken over the pooled neighbor distances, not
  // over the per-point means; the means are far less spread, so thresholding
  // them against their own spread trims a few percent of any clean cloud.
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    // k + 1 because the query point finds itself first.
    const auto hits = index.k_nearest(points[i], k + 1);
    double s = 0.0;
    std::size_t used = 0;
    for (const auto& h : hits) {
      if (h.index == i) continue;
      if (used == k) break;
      s += h.distance;
      sum += h.distance;
      sum2 += h.distance * h.distance;
      ++used;
    }
    count += used;
    score[i] = s / static_cast<double>(used);
  }
  const double mean = sum / count;
  const double limit = mean + std_ratio * std::sqrt(std::max(0.0, sum2 / count - mean * mean));
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (score[i] <= limit) keep.push_back(i);
  }
  return keep;
}

OutlierRemovalResult ransac_remove_outliers(const PointCloud& cloud,
                                            const OutlierRemovalConfig& config, Rng& rng) {
  const Points& pts = cloud.positions;
  const std::size_t n = pts.size();
  if (n < 3) {
    throw std::invalid_argument("ransac_remove_outliers: need at least 3 points, got " +
                                std::to_string(n));
  }
  OutlierRemovalResult result;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);

  Eigen::Vector3d mean;
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> whole(covariance(pts, all, mean));
  const Eigen::Vector3d ev = whole.eigenvalues();  // ascending
  if (ev[1] <= 1e-12 * std::max(ev[2], 1e-300)) {
    spdlog::warn("ransac_remove_outliers: degenerate (collinear) cloud of {} points", n);
    result.cloud = cloud;
    result.kept = all;
    result.degenerate = true;
    return result;
  }

  Plane best;
  std::size_t best_count = 0;
  for (int it = 0; it < config.ransac_iterations; ++it) {
    const std::size_t a = rng.below(n);
    const std::size_t b = rng.below(n);
    const std::size_t c = rng.below(n);
    if (a == b || b == c || a == c) continue;
    const Eigen::Vector3d normal = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    const double len = normal.norm();
    if (len < 1e-12) continue;
    Plane cand;
    cand.normal = normal / len;
    cand.offset = -cand.normal.dot(pts[a]);
    std::size_t count = 0;
    for (const auto& p : pts) count += std::abs(cand.signed_distance(p)) <= config.plane_distance;
    if (count > best_count) {
      best_count = count;
      best = cand;
    }
  }

  std::vector<std::size_t> rows = all;
  if (best_count >= 3 && best_count >= config.min_plane_fraction * n) {
    // Least-squares refit on the consensus set.
    const auto inliers = plane_inliers(pts, best, config.plane_distance);
    Eigen::Vector3d centroid;
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> fit(covariance(pts, inliers, centroid));
    Plane refined;
    refined.normal = fit.eigenvectors().col(0).normalized();
    refined.offset = -refined.normal.dot(centroid);
    // Orient toward the majority of off-plane points: the object sits on top.
    long above = 0, below = 0;
    for (const auto& p : pts) {
      const double s = refined.signed_distance(p);
      if (s > config.plane_distance) ++above;
      if (s < -config.plane_distance) ++below;
    }
    if (below > above) {
      refined.normal = -refined.normal;
      refined.offset = -refined.offset;
    }
    result.plane_found = true;
    result.plane = refined;
    rows.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (refined.signed_distance(pts[i]) > config.plane_distance) rows.push_back(i);
    }
  }

  Points remaining;
  remaining.reserve(rows.size());
  for (std::size_t r : rows) remaining.push_back(pts[r]);
  const auto keep = statistical_inliers(remaining, config.k, config.std_ratio);
  for (std::size_t r : keep) result.kept.push_back(rows[r]);
  result.cloud = cloud.select(result.kept);
  return result;
}

}  // namespace deformnet::geom
