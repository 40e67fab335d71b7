#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Geometry>

#include "doctest.h"
#include "deformnet/autodiff/rng.hpp"
#include "deformnet/costs/costs.hpp"

using namespace deformnet;
using namespace deformnet::costs;

namespace {

Points random_points(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Points pts(n);
  for (auto& p : pts) p = {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return pts;
}

double brute_one_sided(const Points& a, const Points& b) {
  double sum = 0.0;
  for (const auto& x : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& y : b) best = std::min(best, (x - y).norm());
    sum += best;
  }
  return sum / a.size();
}

double brute_emd(const Points& a, const Points& b) {
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[perm[i]]).norm();
    best = std::min(best, sum / a.size());
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  const Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

Points transform(const Points& pts, const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
  Points out;
  for (const auto& p : pts) out.push_back(r * p + t);
  return out;
}

geom::GridSpec test_grid() {
  geom::GridSpec g;
  g.origin = {-0.1, -0.1, -0.1};
  g.cell_size = 0.2 / 32;
  g.dims = {32, 32, 32};
  return g;
}

}  // namespace

TEST_CASE("chamfer examples") {
  Rng rng(1);
  const Points a = random_points(20, rng);
  CHECK(chamfer(a, a) == 0.0);
  CHECK(chamfer({{0, 0, 0}}, {{1, 0, 0}}) == 2.0);
  CHECK_THROWS_AS(chamfer({}, a), std::invalid_argument);
  CHECK_THROWS_AS(chamfer(a, {}), std::invalid_argument);
}

TEST_CASE("chamfer and d2cd match the brute-force double loop exactly") {
  Rng rng(2);
  for (int instance = 0; instance < 100; ++instance) {
    const Points a = random_points(1 + rng.below(64), rng);
    const Points b = random_points(1 + rng.below(64), rng);
    const double want = brute_one_sided(a, b) + brute_one_sided(b, a);
    REQUIRE(chamfer(a, b) == want);
    REQUIRE(chamfer(a, b) == chamfer(b, a));
    REQUIRE(d2cd(a, ContinuousTarget::from_samples(b)) == brute_one_sided(a, b));
  }
  const Points particles = random_points(100, rng);
  const Points target = random_points(500, rng);
  CHECK(d2cd(particles, ContinuousTarget::from_samples(target)) == brute_one_sided(particles, target));
}

TEST_CASE("hungarian finds the optimal assignment") {
  const std::vector<double> cost = {4, 1, 3, 2, 0, 5, 3, 2, 2};
  const auto a = hungarian(cost, 3);
  double total = 0;
  for (std::size_t i = 0; i < 3; ++i) total += cost[i * 3 + a[i]];
  CHECK(total == 5.0);
  CHECK(hungarian({}, 0).empty());
  CHECK_THROWS_AS(hungarian({1, 2, 3}, 2), std::invalid_argument);
}

TEST_CASE("emd examples and factorial brute force") {
  CHECK(emd({{0, 0, 0}, {1, 0, 0}}, {{2, 0, 0}, {3, 0, 0}}) == 2.0);
  Rng rng(3);
  const Points a = random_points(30, rng);
  CHECK(emd(a, a) == 0.0);
  for (int instance = 0; instance < 50; ++instance) {
    const std::size_t n = 1 + rng.below(6);
    const Points x = random_points(n, rng);
    const Points y = random_points(n, rng);
    REQUIRE(emd(x, y) == doctest::Approx(brute_emd(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("emd dominates both one-sided chamfer terms and resamples unequal sets") {
  Rng rng(4);
  for (int instance = 0; instance < 50; ++instance) {
    const std::size_t n = 2 + rng.below(40);
    const Points x = random_points(n, rng);
    const Points y = random_points(n, rng);
    const double e = emd(x, y);
    CHECK(e >= brute_one_sided(x, y) - 1e-12);
    CHECK(e >= brute_one_sided(y, x) - 1e-12);
  }
  const Points big = random_points(40, rng);
  const Points small = random_points(10, rng);
  const double e = emd(big, small);
  CHECK(std::isfinite(e));
  CHECK(e == emd(big, small));
}

TEST_CASE("costs are invariant under a common rigid transform") {
  Rng rng(5);
  for (int instance = 0; instance < 20; ++instance) {
    const Points a = random_points(30, rng);
    const Points b = random_points(30, rng);
    const Eigen::Matrix3d r = random_rotation(rng);
    const Eigen::Vector3d t(rng.normal(), rng.normal(), rng.normal());
    const Points ta = transform(a, r, t), tb = transform(b, r, t);
    CHECK(std::abs(chamfer(a, b) - chamfer(ta, tb)) < 1e-9);
    CHECK(std::abs(emd(a, b) - emd(ta, tb)) < 1e-9);
    CHECK(std::abs(d2cd(a, ContinuousTarget::from_samples(b)) -
                   d2cd(ta, ContinuousTarget::from_samples(tb))) < 1e-9);
  }
}

TEST_CASE("soft iou identity, symmetry, disjointness, monotone translation") {
  const auto grid = test_grid();
  Rng rng(6);
  for (int instance = 0; instance < 20; ++instance) {
    const Points a = random_points(200, rng, -0.03, 0.03);
    const Points b = random_points(150, rng, -0.04, 0.02);
    CHECK(soft_iou(a, a, grid) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(soft_iou(a, b, grid) == soft_iou(b, a, grid));
    const double v = soft_iou(a, b, grid);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    Points far = a;
    for (auto& p : far) p.x() += 0.075;  // supports separated by more than either extent
    CHECK(soft_iou(a, far, grid) == 0.0);
  }
  const Points blob = random_points(300, rng, -0.02, 0.02);
  double previous = 2.0;
  for (int cells : {0, 1, 2, 4}) {
    Points moved = blob;
    for (auto& p : moved) p.y() += cells * grid.cell_size;
    const double v = soft_iou(blob, moved, grid);
    CHECK(v < previous);
    previous = v;
  }
  CHECK(soft_iou(Points{}, Points{}, grid) == 0.0);
}

TEST_CASE("d2cd with analytic targets") {
  const auto half = ContinuousTarget::half_space({0, 0, 1}, 0.0);  // z <= 0
  CHECK(d2cd({{0.3, -0.2, 0.05}}, half) == doctest::Approx(0.05));
  CHECK(d2cd({{0.3, -0.2, -0.05}, {0, 0, 0}}, half) == 0.0);
  const auto sphere = ContinuousTarget::sphere({0, 0, 0}, 0.1);
  CHECK(d2cd({{0.05, 0, 0}, {0, 0.3, 0}}, sphere) == doctest::Approx(0.1));
  const auto box = ContinuousTarget::box({{0, 0, 0}, {1, 1, 1}});
  CHECK(d2cd({{0.5, 0.5, 0.5}}, box) == 0.0);
  CHECK(d2cd({{2, 2, 0.5}}, box) == doctest::Approx(std::sqrt(2.0)));
  CHECK_THROWS_AS(ContinuousTarget::from_samples({}), std::invalid_argument);
  CHECK_THROWS_AS(d2cd({}, sphere), std::invalid_argument);
}

TEST_CASE("cost kind names round trip") {
  for (auto k : {CostKind::kChamfer, CostKind::kEmd, CostKind::kSoftIou, CostKind::kD2cd}) {
    CHECK(parse_cost_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_cost_kind("l2"), std::invalid_argument);
}

TEST_CASE("soft iou equals the inclusion-exclusion ratio on binary grids") {
  Rng rng(7);
  geom::GridSpec spec;
  spec.dims = {6, 6, 6};
  for (int instance = 0; instance < 20; ++instance) {
    geom::VoxelGrid a{spec, std::vector<double>(spec.cell_count())};
    geom::VoxelGrid b = a;
    double inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.occupancy.size(); ++i) {
      a.occupancy[i] = rng.uniform() < 0.3;
      b.occupancy[i] = rng.uniform() < 0.3;
      inter += a.occupancy[i] * b.occupancy[i];
      uni += a.occupancy[i] + b.occupancy[i] - a.occupancy[i] * b.occupancy[i];
    }
    CHECK(soft_iou(a, b) == doctest::Approx(inter / uni).epsilon(1e-15));
  }
}
