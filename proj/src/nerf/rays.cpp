#include "deformnet/nerf/rays.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "deformnet/autodiff/ops.hpp"

namespace deformnet::nerf {

Ray generate_ray(const geom::Camera& camera, double u, double v) {
  Ray ray;
  ray.origin = camera.position();
  ray.direction = camera.ray_direction(u, v);
  // Camera-z of a unit step along the ray.
  const double z_per_t = ray.direction.dot(camera.rotation().col(2));
  ray.near = camera.near / z_per_t;
  ray.far = camera.far / z_per_t;
  return ray;
}

std::vector<Ray> generate_rays(const geom::Camera& camera, const std::vector<Pixel>& pixels) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& p : pixels) {
    if (p.x < 0 || p.y < 0 || p.x >= camera.width || p.y >= camera.height) {
      throw std::out_of_range("generate_rays: pixel outside the image");
    }
    rays.push_back(generate_ray(camera, p.x, p.y));
  }
  return rays;
}

bool clip_to_box(Ray& ray, const geom::Aabb& box) {
  double t0 = ray.near, t1 = ray.far;
  for (int a = 0; a < 3; ++a) {
    const double d = ray.direction[a];
    const double o = ray.origin[a];
    if (d == 0.0) {
      if (o < box.lo[a] || o > box.hi[a]) return false;
      continue;
    }
    double ta = (box.lo[a] - o) / d, tb = (box.hi[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return false;
  ray.near = t0;
  ray.far = t1;
  return true;
}

RaySampleBatch stratified_sample(const std::vector<Ray>& rays, std::size_t n, Rng* rng) {
  if (n < 2) throw std::invalid_argument("stratified_sample: need at least 2 samples per ray");
  RaySampleBatch batch;
  batch.rays = rays.size();
  batch.samples = n;
  batch.depths.resize(rays.size() * n);
  batch.deltas.resize(rays.size() * n);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const Ray& ray = rays[r];
    if (!(ray.near < ray.far)) throw std::invalid_argument("stratified_sample: ray with near >= far");
    const double width = (ray.far - ray.near) / static_cast<double>(n);
    double* t = batch.depths.data() + r * n;
    for (std::size_t i = 0; i < n; ++i) {
      const double jitter = rng ? rng->uniform() : 0.5;
      t[i] = ray.near + (static_cast<double>(i) + jitter) * width;
    }
    double* d = batch.deltas.data() + r * n;
    for (std::size_t i = 0; i + 1 < n; ++i) d[i] = t[i + 1] - t[i];
    d[n - 1] = ray.far - t[n - 1];
  }
  return batch;
}

CompositeResult composite(const ad::Tensor& sigma, const ad::Tensor& rgb, const ad::Tensor& deltas,
                          const Eigen::Vector3d& background) {
  if (sigma.rank() != 2 || sigma.shape() != deltas.shape() || rgb.rank() != 3 ||
      rgb.dim(0) != sigma.dim(0) || rgb.dim(1) != sigma.dim(1) || rgb.dim(2) != 3) {
    throw ad::ShapeError("composite: expected sigma/deltas [R,S] and rgb [R,S,3], got " +
                         ad::shape_to_string(sigma.shape()) + ", " +
                         ad::shape_to_string(deltas.shape()) + ", " +
                         ad::shape_to_string(rgb.shape()));
  }
  const std::size_t r = sigma.dim(0), s = sigma.dim(1);
  const ad::Tensor tau = sigma * deltas;
  const ad::Tensor optical = ad::cumsum(tau, 1);
  // Exclusive prefix sum: T_i = exp(-sum_{j<i} tau_j).
  const ad::Tensor trans = ad::exp(ad::neg(optical - tau));
  const ad::Tensor alpha = ad::neg(ad::exp(ad::neg(tau))) + 1.0;
  const ad::Tensor weights = trans * alpha;
  const ad::Tensor color = ad::sum(ad::reshape(weights, {r, s, 1}) * rgb, 1);
  const ad::Tensor leftover = ad::exp(ad::neg(ad::slice(optical, 1, s - 1, s)));
  const ad::Tensor bg = ad::Tensor::from({1, 3}, {background.x(), background.y(), background.z()});
  return {color + leftover * bg, weights, leftover};
}

ad::Tensor reconstruction_loss(const ad::Tensor& rendered, const ad::Tensor& truth) {
  if (rendered.shape() != truth.shape()) {
    throw ad::ShapeError("reconstruction_loss: " + ad::shape_to_string(rendered.shape()) + " vs " +
                         ad::shape_to_string(truth.shape()));
  }
  return ad::mean(ad::square(rendered - truth));
}

}  // namespace deformnet::nerf
