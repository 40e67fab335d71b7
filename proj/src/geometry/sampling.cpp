#include "deformnet/geometry/sampling.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace deformnet::geom {

std::vector<std::size_t> farthest_point_sample(const Points& points, std::size_t count,
                                               std::size_t start) {
  const std::size_t n = points.size();
  count = std::min(count, n);
  std::vector<std::size_t> chosen;
  if (count == 0) return chosen;
  if (start >= n) throw std::out_of_range("farthest_point_sample: start row out of range");
  chosen.reserve(count);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t current = start;
  while (true) {
    chosen.push_back(current);
    if (chosen.size() == count) break;
    std::size_t next = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (points[i] - points[current]).squaredNorm());
      if (d2[i] > best) {
        best = d2[i];
        next = i;
      }
    }
    current = next;
  }
  return chosen;
}

std::vector<std::size_t> farthest_point_sample(const Points& points, std::size_t count, Rng& rng) {
  if (points.empty()) return {};
  return farthest_point_sample(points, count, static_cast<std::size_t>(rng.below(points.size())));
}

Points gather_rows(const Points& points, const std::vector<std::size_t>& rows) {
  Points out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(points.at(r));
  return out;
}

}  // namespace deformnet::geom
