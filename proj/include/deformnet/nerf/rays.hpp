#pragma once

#include <cstddef>
#include <vector>

#include "deformnet/autodiff/rng.hpp"
#include "deformnet/autodiff/tensor.hpp"
#include "deformnet/geometry/camera.hpp"
#include "deformnet/geometry/types.hpp"

namespace deformnet::nerf {

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();  // unit length
  double near = 0.0;  // distance along direction, meters
  double far = 1.0;

  Eigen::Vector3d at(double t) const { return origin + t * direction; }
};

struct Pixel {
  int x = 0;
  int y = 0;
};

/// Ray through the pixel center. `near`/`far` are converted from camera z
/// to distance along the (unit) ray, so sample depths are true distances.
Ray generate_ray(const geom::Camera& camera, double u, double v);
std::vector<Ray> generate_rays(const geom::Camera& camera, const std::vector<Pixel>& pixels);

/// Intersects [near, far] with the box slab interval. Returns false (ray
/// untouched) when the ray misses the box.
bool clip_to_box(Ray& ray, const geom::Aabb& box);

/// Per-ray ascending sample distances, n per ray, plus quadrature widths
/// delta_i = t_{i+1} - t_i and delta_last = far - t_last.
struct RaySampleBatch {
  std::size_t rays = 0;
  std::size_t samples = 0;
  std::vector<double> depths;  // [rays * samples]
  std::vector<double> deltas;  // [rays * samples]
};

/// One sample per equal-width bin over [near, far]; uniform jitter inside each
/// bin from `rng`, or bin midpoints when rng is null. Throws when n < 2.
RaySampleBatch stratified_sample(const std::vector<Ray>& rays, std::size_t n, Rng* rng);

struct CompositeResult {
  ad::Tensor rgb;             // [R, 3]
  ad::Tensor weights;         // [R, S]  T_i * (1 - exp(-sigma_i delta_i))
  ad::Tensor transmittance;   // [R, 1]  left over after the last sample
};

/// Volume rendering quadrature. sigma and deltas are [R, S], rgb is [R, S, 3];
/// deltas must be in the same length unit sigma is measured against.
/// Leftover transmittance multiplies `background`.
CompositeResult composite(const ad::Tensor& sigma, const ad::Tensor& rgb, const ad::Tensor& deltas,
                          const Eigen::Vector3d& background);

/// Mean squared error over all entries; throws on shape mismatch.
ad::Tensor reconstruction_loss(const ad::Tensor& rendered, const ad::Tensor& truth);

}  // namespace deformnet::nerf
