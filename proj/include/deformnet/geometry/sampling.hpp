#pragma once

#include <cstddef>
#include <vector>

#include "deformnet/autodiff/rng.hpp"
#include "deformnet/geometry/types.hpp"

namespace deformnet::geom {

/// Greedy farthest-point sampling. Starts at `start`, then repeatedly takes
/// the point farthest from the chosen set (ties: lowest index). Returns
/// min(count, n) row indices in selection order.
std::vector<std::size_t> farthest_point_sample(const Points& points, std::size_t count,
                                               std::size_t start = 0);

/// Same, with the start row drawn from `rng`.
std::vector<std::size_t> farthest_point_sample(const Points& points, std::size_t count, Rng& rng);

Points gather_rows(const Points& points, const std::vector<std::size_t>& rows);

}  // namespace deformnet::geom
