#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "deformnet/geometry/camera.hpp"
#include "deformnet/geometry/fusion.hpp"
#include "deformnet/geometry/nn_index.hpp"
#include "deformnet/geometry/outliers.hpp"
#include "deformnet/geometry/sampling.hpp"
#include "deformnet/geometry/voxel.hpp"

using namespace deformnet;
using namespace deformnet::geom;

namespace {

Points random_points(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Points pts(n);
  for (auto& p : pts) p = {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return pts;
}

// O(n) scan with the documented tie-break.
NNIndex::Hit brute_nearest(const Points& pts, const Eigen::Vector3d& q) {
  NNIndex::Hit best{0, std::numeric_limits<double>::infinity()};
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d2 = (pts[i] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = {i, std::sqrt(d2)};
    }
  }
  return best;
}

// Analytic ray/sphere depth render, independent of the fusion code path.
RgbdImage render_sphere(const Camera& cam, const Eigen::Vector3d& center, double radius) {
  RgbdImage img(cam.width, cam.height);
  const Eigen::Matrix3d r = cam.camera_to_world.topLeftCorner<3, 3>();
  const Eigen::Vector3d o = cam.camera_to_world.topRightCorner<3, 1>();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Eigen::Vector3d dir_cam((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
      const Eigen::Vector3d dir = r * dir_cam;  // z-component in camera frame is 1
      const Eigen::Vector3d oc = o - center;
      const double a = dir.squaredNorm();
      const double b = 2.0 * dir.dot(oc);
      const double c = oc.squaredNorm() - radius * radius;
      const double disc = b * b - 4 * a * c;
      if (disc < 0) continue;
      const double t = (-b - std::sqrt(disc)) / (2 * a);
      if (t <= 0) continue;
      img.depth(x, y) = static_cast<float>(t);  // t scales a ray with unit camera z
      img.set_rgb(x, y, {0.5, 0.25, 1.0});
    }
  }
  return img;
}

Aabb big_box() { return {Eigen::Vector3d::Constant(-10), Eigen::Vector3d::Constant(10)}; }

PointCloud cloud_of(const Points& pts) {
  PointCloud c;
  for (const auto& p : pts) c.push_back(p, Eigen::Vector3d::Constant(0.5));
  return c;
}

}  // namespace

TEST_CASE("camera convention: looks down +z, image y down") {
  const Camera cam = look_at({0, 0, 1}, {0, 0, 0}, {0, 1, 0}, 100, 100, 64, 48, 0.1, 4.0);
  cam.validate();
  CHECK(cam.rotation().col(2).isApprox(Eigen::Vector3d(0, 0, -1)));
  // World up projects toward smaller v (image y grows downward).
  const Eigen::Vector3d up = cam.project({0, 0.1, 0});
  CHECK(up.y() < cam.cy);
  CHECK(up.z() == doctest::Approx(1.0));
  const Eigen::Vector3d center = cam.project({0, 0, 0});
  CHECK(center.x() == doctest::Approx(31.5));
  CHECK(center.y() == doctest::Approx(23.5));
}

TEST_CASE("camera validation") {
  Camera cam;
  cam.validate();
  Camera bad = cam;
  bad.near = 0.5;
  bad.far = 0.4;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("near"), std::invalid_argument);
  bad = cam;
  bad.camera_to_world(0, 0) = 2.0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("orthonormal"), std::invalid_argument);
  bad = cam;
  bad.camera_to_world(0, 0) = -1.0;  // reflection
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("determinant"), std::invalid_argument);
}

TEST_CASE("principal point with identity extrinsics back-projects onto the optical axis") {
  Camera cam;
  cam.fx = cam.fy = 50;
  cam.width = cam.height = 9;
  cam.cx = cam.cy = 4;
  RgbdImage img(9, 9);
  img.depth(4, 4) = 0.25f;
  const auto cloud = fuse_depth_views({img}, {cam}, big_box());
  REQUIRE(cloud.size() == 1);
  CHECK(cloud.positions[0].isApprox(Eigen::Vector3d(0, 0, 0.25)));
}

TEST_CASE("fusion errors and empty cases") {
  const auto cams = ring_rig({});
  CHECK_THROWS_AS(fuse_depth_views({}, {}, big_box()), std::invalid_argument);
  std::vector<RgbdImage> frames(cams.size(), RgbdImage(64, 64));
  CHECK(fuse_depth_views(frames, cams, big_box()).empty());
  frames[1] = RgbdImage(32, 64);
  CHECK_THROWS_WITH_AS(fuse_depth_views(frames, cams, big_box()), doctest::Contains("frame 1"),
                       std::invalid_argument);
  RgbdImage nan(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) nan.depth(x, y) = std::numeric_limits<float>::quiet_NaN();
  }
  CHECK(fuse_depth_views({nan}, {cams[0]}, big_box()).empty());
}

TEST_CASE("fused sphere points lie on the sphere and reproject to their pixel") {
  const auto cams = ring_rig({});
  const Eigen::Vector3d center(0.0, 0.0, 0.02);
  const double radius = 0.03;
  for (const auto& cam : cams) {
    cam.validate();
    const RgbdImage img = render_sphere(cam, center, radius);
    std::size_t valid = 0;
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        if (img.depth(x, y) <= 0) continue;
        ++valid;
        const Eigen::Vector3d p = cam.back_project(x, y, img.depth(x, y));
        CHECK(std::abs((p - center).norm() - radius) < 1e-6);  // float depth storage
        const Eigen::Vector3d uv = cam.project(p);
        CHECK(std::abs(uv.x() - x) < 0.5);
        CHECK(std::abs(uv.y() - y) < 0.5);
      }
    }
    CHECK(valid > 100);
  }
}

TEST_CASE("two-camera fusion is a superset of single-camera fusion") {
  const auto cams = ring_rig({});
  const Eigen::Vector3d center(0.0, 0.0, 0.02);
  const Aabb crop{{-0.1, -0.1, 0.0}, {0.1, 0.1, 0.1}};
  const RgbdImage a = render_sphere(cams[0], center, 0.03);
  const RgbdImage b = render_sphere(cams[2], center, 0.03);
  const auto one = fuse_depth_views({a}, {cams[0]}, crop);
  const auto two = fuse_depth_views({a, b}, {cams[0], cams[2]}, crop);
  REQUIRE(one.size() > 0);
  CHECK(two.size() > one.size());
  const NNIndex index(two.positions);
  const double cell = 0.1 / 32;
  for (const auto& p : one.positions) CHECK(index.nearest(p).distance < cell);
  // Crop box drops everything below z = 0.
  for (const auto& p : two.positions) CHECK(p.z() >= 0.0);
  two.validate();
}

TEST_CASE("nn index matches brute force exactly") {
  Rng rng(11);
  for (int instance = 0; instance < 100; ++instance) {
    const Points pts = random_points(200, rng);
    const NNIndex index(pts);
    for (int q = 0; q < 50; ++q) {
      const Eigen::Vector3d query(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2),
                                  rng.uniform(-1.2, 1.2));
      const auto got = index.nearest(query);
      const auto want = brute_nearest(pts, query);
      REQUIRE(got.index == want.index);
      REQUIRE(got.distance == want.distance);
    }
  }
}

TEST_CASE("nn index identity, ties, k-nearest and empty") {
  Rng rng(3);
  const Points pts = random_points(57, rng);
  const NNIndex index(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto hit = index.nearest(pts[i]);
    CHECK(hit.index == i);
    CHECK(hit.distance == 0.0);
  }

  // Equidistant pairs: lower insertion order wins regardless of layout.
  Points tie = {{1, 0, 0}, {5, 5, 5}, {-1, 0, 0}};
  for (int i = 0; i < 40; ++i) tie.push_back({3.0 + i, 2.0, 0});
  CHECK(NNIndex(tie).nearest({0, 0, 0}).index == 0);
  Points tie2 = {{5, 5, 5}, {-1, 0, 0}, {1, 0, 0}};
  for (int i = 0; i < 40; ++i) tie2.push_back({3.0 + i, 2.0, 0});
  CHECK(NNIndex(tie2).nearest({0, 0, 0}).index == 1);
  Points dup(30, Eigen::Vector3d(0.5, 0.5, 0.5));
  CHECK(NNIndex(dup).nearest({0, 0, 0}).index == 0);

  const Eigen::Vector3d q(0.1, -0.2, 0.3);
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < pts.size(); ++i) order.push_back({(pts[i] - q).squaredNorm(), i});
  std::sort(order.begin(), order.end());
  const auto knn = index.k_nearest(q, 9);
  REQUIRE(knn.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) CHECK(knn[i].index == order[i].second);
  CHECK(index.k_nearest(q, 1000).size() == pts.size());

  CHECK_THROWS_AS(NNIndex(Points{}), std::invalid_argument);
}

TEST_CASE("ransac removes the table plane and keeps the blob") {
  Rng rng(5);
  Points pts;
  for (int i = 0; i < 1000; ++i) pts.push_back({rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0.0});
  const std::size_t blob_start = pts.size();
  while (pts.size() < blob_start + 50) {
    const Eigen::Vector3d p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (p.norm() <= 1.0) pts.push_back(0.02 * p + Eigen::Vector3d(0.0, 0.0, 0.03));
  }
  Rng r(17);
  const auto result = ransac_remove_outliers(cloud_of(pts), {}, r);
  CHECK(result.plane_found);
  CHECK(result.plane.normal.z() > 0.99);
  std::size_t blob_kept = 0;
  for (std::size_t row : result.kept) {
    CHECK(row >= blob_start);
    blob_kept += row >= blob_start;
  }
  CHECK(blob_kept >= 48);  // >= 95% of 50

  Rng r2(17);
  CHECK(ransac_remove_outliers(cloud_of(pts), {}, r2).kept == result.kept);
}

TEST_CASE("ransac keeps nearly all of an outlier-free blob and is idempotent") {
  Rng rng(8);
  Points pts;
  while (pts.size() < 2000) {
    const Eigen::Vector3d p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (p.norm() <= 1.0) pts.push_back(0.04 * p + Eigen::Vector3d(0, 0, 0.05));
  }
  Rng r(1);
  const auto first = ransac_remove_outliers(cloud_of(pts), {}, r);
  CHECK_FALSE(first.plane_found);
  CHECK(first.cloud.size() >= 0.99 * pts.size());
  const auto second = ransac_remove_outliers(first.cloud, {}, r);
  CHECK(second.cloud.size() >= 0.99 * first.cloud.size());
}

TEST_CASE("ransac degenerate and vacuous inputs") {
  Points line;
  for (int i = 0; i < 20; ++i) line.push_back({0.01 * i, 0.02 * i, 0.0});
  Rng r(2);
  const auto result = ransac_remove_outliers(cloud_of(line), {}, r);
  CHECK(result.degenerate);
  CHECK(result.cloud.size() == line.size());

  CHECK_THROWS_AS(ransac_remove_outliers(cloud_of(Points(2, Eigen::Vector3d::Zero())), {}, r),
                  std::invalid_argument);

  Points flat;
  for (int i = 0; i < 300; ++i) flat.push_back({r.uniform(-1, 1), r.uniform(-1, 1), 0.0});
  const auto gone = ransac_remove_outliers(cloud_of(flat), {}, r);
  CHECK(gone.plane_found);
  CHECK(gone.cloud.empty());
}

TEST_CASE("statistical filter drops an isolated point") {
  Rng rng(4);
  Points pts = random_points(300, rng, -0.05, 0.05);
  pts.push_back({1.0, 1.0, 1.0});
  const auto keep = statistical_inliers(pts, 8, 2.0);
  CHECK(std::find(keep.begin(), keep.end(), pts.size() - 1) == keep.end());
}

TEST_CASE("voxel splat: peak, shift equivariance, empty, clamp") {
  GridSpec spec;
  spec.origin = {0, 0, 0};
  spec.cell_size = 0.1;
  spec.dims = {8, 8, 8};
  const auto single = splat_to_voxels({spec.cell_center(3, 4, 5)}, spec);
  const double peak = single.at(3, 4, 5);
  CHECK(peak == doctest::Approx(1.0));
  CHECK(*std::max_element(single.occupancy.begin(), single.occupancy.end()) == peak);
  CHECK(single.at(4, 4, 5) == doctest::Approx(std::exp(-2.0)));
  CHECK(single.at(4, 5, 5) == 0.0);  // sqrt(2) cells is beyond the 2-sigma cutoff

  Rng rng(9);
  Points pts = random_points(30, rng, 0.25, 0.45);
  Points shifted = pts;
  for (auto& p : shifted) p.x() += spec.cell_size;
  const auto a = splat_to_voxels(pts, spec);
  const auto b = splat_to_voxels(shifted, spec);
  for (int i = 1; i < 7; ++i) {
    for (int j = 0; j < 8; ++j) {
      for (int k = 0; k < 8; ++k) CHECK(b.at(i + 1, j, k) == doctest::Approx(a.at(i, j, k)).epsilon(1e-9));
    }
  }
  for (double v : a.occupancy) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  const auto empty = splat_to_voxels({}, spec);
  CHECK(std::all_of(empty.occupancy.begin(), empty.occupancy.end(), [](double v) { return v == 0.0; }));
  GridSpec bad = spec;
  bad.dims[1] = 0;
  CHECK_THROWS_AS(splat_to_voxels({}, bad), std::invalid_argument);
}

TEST_CASE("grid over box is centered and cubic") {
  const Aabb box{{-0.1, -0.1, 0.0}, {0.1, 0.1, 0.1}};
  const GridSpec spec = grid_over_box(box, 32);
  CHECK(spec.cell_size == doctest::Approx(0.2 / 32));
  const Eigen::Vector3d mid = spec.origin + Eigen::Vector3d::Constant(16 * spec.cell_size);
  CHECK(mid.isApprox(box.center()));
}

TEST_CASE("farthest point sampling") {
  const Points line = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}};
  CHECK(farthest_point_sample(line, 3, 0) == std::vector<std::size_t>{0, 4, 2});
  CHECK(farthest_point_sample(line, 2, 2) == std::vector<std::size_t>{2, 0});  // tie -> lowest
  CHECK(farthest_point_sample(line, 10, 1).size() == 5);
  CHECK(farthest_point_sample(Points{}, 3, 0).empty());

  // Greedy property against a direct recomputation.
  Rng rng(21);
  const Points pts = random_points(120, rng);
  const auto rows = farthest_point_sample(pts, 20, rng);
  for (std::size_t s = 1; s < rows.size(); ++s) {
    double best = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double dmin = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < s; ++t) dmin = std::min(dmin, (pts[i] - pts[rows[t]]).norm());
      best = std::max(best, dmin);
    }
    double got = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < s; ++t) got = std::min(got, (pts[rows[s]] - pts[rows[t]]).norm());
    CHECK(got == doctest::Approx(best));
  }
}
