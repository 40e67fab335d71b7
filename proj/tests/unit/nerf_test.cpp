#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "deformnet/autodiff/ops.hpp"
#include "deformnet/encoder/encoder.hpp"
#include "deformnet/nerf/decoder.hpp"
#include "support/gradcheck.hpp"

using namespace deformnet;
using namespace deformnet::nerf;

namespace {

std::vector<double> values_of(const ad::Tensor& t) { return {t.values().begin(), t.values().end()}; }

ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(ad::shape_numel(shape));
  for (double& x : v) x = rng.uniform(-scale, scale);
  return ad::Tensor::from(std::move(shape), std::move(v));
}

DecoderConfig tiny_decoder() {
  DecoderConfig cfg;
  cfg.pe_position_bands = 2;
  cfg.pe_direction_bands = 1;
  cfg.density_widths = {8, 8};
  cfg.feature_dim = 6;
  cfg.color_width = 5;
  cfg.deformation_dim = 3;
  cfg.appearance_dim = 3;
  cfg.samples_per_ray = 8;
  cfg.initial_density_bias = 1.0;
  return cfg;
}

// Constant-medium quadrature relative error for n midpoint samples.
double constant_medium_error(std::size_t n, double sigma, double length, double color) {
  Ray ray;
  ray.near = 0.0;
  ray.far = length;
  const auto batch = stratified_sample({ray}, n, nullptr);
  const auto s = ad::Tensor::full({1, n}, sigma);
  const auto c = ad::Tensor::full({1, n, 3}, color);
  const auto d = ad::Tensor::from({1, n}, batch.deltas);
  const double got = composite(s, c, d, Eigen::Vector3d::Zero()).rgb.at({0, 0});
  const double want = color * (1.0 - std::exp(-sigma * length));
  return std::abs(got - want) / want;
}

std::vector<Ray> camera_rays(const geom::Camera& cam, std::size_t count, Rng& rng) {
  std::vector<Pixel> px;
  for (std::size_t i = 0; i < count; ++i) {
    px.push_back({static_cast<int>(rng.below(cam.width)), static_cast<int>(rng.below(cam.height))});
  }
  return generate_rays(cam, px);
}

}  // namespace

TEST_CASE("ray generation") {
  geom::Camera cam;
  cam.fx = cam.fy = 40;
  cam.width = cam.height = 9;
  cam.cx = cam.cy = 4;
  const Ray axis = generate_ray(cam, 4, 4);
  CHECK(axis.direction.isApprox(Eigen::Vector3d::UnitZ()));
  CHECK(axis.near == doctest::Approx(cam.near));
  const Ray a = generate_ray(cam, 0, 0), b = generate_ray(cam, 8, 8);
  CHECK(a.direction.x() == doctest::Approx(-b.direction.x()));
  CHECK(a.direction.y() == doctest::Approx(-b.direction.y()));
  CHECK(a.direction.z() == doctest::Approx(b.direction.z()));

  const auto rig = geom::ring_rig({});
  Rng rng(1);
  for (const auto& c : rig) {
    for (const Ray& r : camera_rays(c, 50, rng)) {
      CHECK(std::abs(r.direction.norm() - 1.0) < 1e-9);
      const Eigen::Vector3d p = r.at(rng.uniform(r.near, r.far));
      const Eigen::Vector3d uv = c.project(p);
      const Eigen::Vector3d back = c.project(r.at(r.near));
      CHECK(std::abs(uv.x() - back.x()) < 1e-6);
      CHECK(std::abs(uv.y() - back.y()) < 1e-6);
      CHECK(std::abs(uv.x() - std::round(uv.x())) < 0.5);
      CHECK(c.world_to_camera(r.at(r.near)).z() == doctest::Approx(c.near));
    }
  }
  CHECK_THROWS_AS(generate_rays(cam, {{9, 0}}), std::out_of_range);
}

TEST_CASE("clip to box") {
  Ray r;
  r.origin = {-1, 0, 0};
  r.direction = {1, 0, 0};
  r.near = 0;
  r.far = 10;
  const geom::Aabb box{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
  REQUIRE(clip_to_box(r, box));
  CHECK(r.near == doctest::Approx(0.5));
  CHECK(r.far == doctest::Approx(1.5));
  Ray miss = r;
  miss.origin = {-1, 2, 0};
  CHECK_FALSE(clip_to_box(miss, box));
}

TEST_CASE("stratified sampling") {
  Ray ray;
  ray.near = 0.0;
  ray.far = 1.0;
  const auto mid = stratified_sample({ray}, 4, nullptr);
  CHECK(mid.depths == std::vector<double>{0.125, 0.375, 0.625, 0.875});
  CHECK(mid.deltas == std::vector<double>{0.25, 0.25, 0.25, 0.125});
  CHECK_THROWS_AS(stratified_sample({ray}, 1, nullptr), std::invalid_argument);

  ray.near = 0.2;
  ray.far = 0.5;
  Rng rng(3);
  const std::size_t trials = 4000, n = 8;
  double sum = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto b = stratified_sample({ray}, n, &rng);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(b.depths[i] >= ray.near);
      CHECK(b.depths[i] < ray.far);
      CHECK(b.deltas[i] > 0.0);
      if (i > 0) CHECK(b.depths[i] > b.depths[i - 1]);
      sum += b.depths[i];
    }
  }
  // Each draw is uniform within its bin, variance width^2/12.
  const double width = (ray.far - ray.near) / n;
  const double stddev = std::sqrt(width * width / 12.0 / (trials * n));
  CHECK(std::abs(sum / (trials * n) - 0.35) < 3 * stddev);

  Rng a(5), b(5);
  CHECK(stratified_sample({ray}, 16, &a).depths == stratified_sample({ray}, 16, &b).depths);
}

TEST_CASE("quadrature on a constant medium converges to the analytic color") {
  const double e16 = constant_medium_error(16, 5.0, 0.3, 0.7);
  const double e64 = constant_medium_error(64, 5.0, 0.3, 0.7);
  const double e256 = constant_medium_error(256, 5.0, 0.3, 0.7);
  CHECK(e256 < 1e-3);
  CHECK(e64 < e16);
  CHECK(e256 < e64);
}

TEST_CASE("quadrature edge cases") {
  const auto zero = composite(ad::Tensor::zeros({2, 5}), ad::Tensor::full({2, 5, 3}, 0.6),
                              ad::Tensor::full({2, 5}, 0.1), Eigen::Vector3d::Zero());
  CHECK(values_of(zero.rgb) == std::vector<double>(6, 0.0));
  CHECK(values_of(zero.transmittance) == std::vector<double>{1.0, 1.0});

  std::vector<double> sigma(5, 1.0), colors;
  sigma[0] = 1e4;
  for (int i = 0; i < 5; ++i) colors.insert(colors.end(), {0.1 * i + 0.2, 0.5, 0.9 - 0.1 * i});
  const auto opaque = composite(ad::Tensor::from({1, 5}, sigma), ad::Tensor::from({1, 5, 3}, colors),
                                ad::Tensor::full({1, 5}, 0.1), {1, 1, 1});
  CHECK(std::abs(opaque.rgb.at({0, 0}) - 0.2) < 1e-6);
  CHECK(std::abs(opaque.rgb.at({0, 1}) - 0.5) < 1e-6);
  CHECK(std::abs(opaque.rgb.at({0, 2}) - 0.9) < 1e-6);

  const auto bg = composite(ad::Tensor::zeros({1, 3}), ad::Tensor::zeros({1, 3, 3}),
                            ad::Tensor::full({1, 3}, 1.0), {0.25, 0.5, 1.0});
  CHECK(values_of(bg.rgb) == std::vector<double>{0.25, 0.5, 1.0});
  CHECK_THROWS_AS(composite(ad::Tensor::zeros({1, 3}), ad::Tensor::zeros({1, 4, 3}),
                            ad::Tensor::zeros({1, 3}), {0, 0, 0}),
                  ad::ShapeError);
}

TEST_CASE("reconstruction loss") {
  Rng rng(7);
  const auto a = random_tensor({4, 3}, rng);
  CHECK(reconstruction_loss(a, a).item() == 0.0);
  CHECK(reconstruction_loss(ad::Tensor::zeros({5, 3}), ad::Tensor::full({5, 3}, 1.0)).item() == 1.0);
  auto r = random_tensor({4, 3}, rng);
  r.set_requires_grad(true);
  const auto t = random_tensor({4, 3}, rng);
  reconstruction_loss(r, t).backward();
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(r.grad()[i] == doctest::Approx(2.0 * (r.values()[i] - t.values()[i]) / 12.0));
  }
  CHECK_THROWS_AS(reconstruction_loss(a, ad::Tensor::zeros({3, 3})), ad::ShapeError);
}

TEST_CASE("positional encoding layout") {
  const auto pe = positional_encoding({0.5, -0.25, 0.0}, 3, 2);
  REQUIRE(pe.size() == 15);
  CHECK(pe[0] == 0.5);
  CHECK(pe[3] == doctest::Approx(std::sin(std::numbers::pi * 0.5)));
  CHECK(pe[6] == doctest::Approx(std::cos(std::numbers::pi * 0.5)));
  CHECK(pe[10] == doctest::Approx(std::sin(2 * std::numbers::pi * -0.25)));
}

TEST_CASE("decoder renders black for a zero-density field and is deterministic") {
  Rng rng(8);
  ad::ParameterSet params;
  DecoderConfig cfg = tiny_decoder();
  NerfDecoder decoder(cfg, params, rng);
  const auto cams = geom::ring_rig({});
  const auto e_d = random_tensor({1, 3}, rng), e_a = random_tensor({1, 3}, rng);
  Rng s1(1), s2(1);
  const auto img1 = decoder.render_image(cams[0], e_d, e_a, &s1);
  const auto img2 = decoder.render_image(cams[0], e_d, e_a, &s2);
  CHECK(img1.data() == img2.data());
  for (std::size_t i = 0; i < img1.data().size(); ++i) {
    if (i % 4 == 3) continue;
    CHECK(img1.data()[i] >= 0.0f);
    CHECK(img1.data()[i] <= 1.0f);
  }
  decoder.set_density_bias(-60.0);
  const auto black = decoder.render_image(cams[0], e_d, e_a);
  for (std::size_t i = 0; i < black.data().size(); ++i) CHECK(black.data()[i] < 1e-12f);
}

TEST_CASE("density ignores the appearance latent") {
  Rng rng(9);
  ad::ParameterSet params;
  const NerfDecoder decoder(tiny_decoder(), params, rng);
  const auto e_d = random_tensor({2, 3}, rng);
  const auto e_a = random_tensor({2, 3}, rng);
  const auto e_a_swapped = ad::gather(e_a, {1, 0});
  const auto cams = geom::ring_rig({});
  const auto rays = camera_rays(cams[1], 40, rng);
  std::vector<std::size_t> frame(rays.size());
  for (std::size_t i = 0; i < frame.size(); ++i) frame[i] = i % 2;
  Rng s1(4), s2(4);
  const auto a = decoder.render_rays(rays, e_d, e_a, frame, &s1);
  const auto b = decoder.render_rays(rays, e_d, e_a_swapped, frame, &s2);
  CHECK(values_of(a.opacity) == values_of(b.opacity));
  CHECK(values_of(a.depth) == values_of(b.depth));
  CHECK(values_of(a.rgb) != values_of(b.rgb));
}

TEST_CASE("decoder gradients match finite differences") {
  Rng rng(10);
  ad::ParameterSet params;
  const NerfDecoder decoder(tiny_decoder(), params, rng);
  auto e_d = random_tensor({2, 3}, rng);
  auto e_a = random_tensor({2, 3}, rng);
  e_d.set_requires_grad(true);
  e_a.set_requires_grad(true);
  const auto cams = geom::ring_rig({});
  const auto rays = camera_rays(cams[0], 8, rng);
  const std::vector<std::size_t> frame{0, 1, 0, 1, 1, 0, 0, 1};
  const auto truth = random_tensor({8, 3}, rng);
  std::vector<ad::Tensor> leaves{e_d, e_a};
  for (const auto& [name, t] : params.entries()) leaves.push_back(t);
  const auto result = testing::grad_check(
      [&] {
        Rng jitter(3);
        return reconstruction_loss(decoder.render_rays(rays, e_d, e_a, frame, &jitter).rgb, truth);
      },
      leaves);
  INFO(result.worst);
  CHECK(result.max_rel_error < 1e-4);
}

TEST_CASE("end-to-end autoencoder gradients match finite differences") {
  Rng rng(11);
  ad::ParameterSet params;
  enc::EncoderConfig ecfg;
  ecfg.point_widths = {8, 8};
  ecfg.post_widths = {8};
  ecfg.deformation_dim = 3;
  ecfg.appearance_dim = 3;
  const enc::PointNetEncoder encoder(ecfg, params, rng);
  const NerfDecoder decoder(tiny_decoder(), params, rng);
  geom::PointCloud cloud;
  for (int i = 0; i < 12; ++i) {
    cloud.push_back({rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(0, 0.04)},
                    {rng.uniform(), rng.uniform(), rng.uniform()});
  }
  const auto rays = camera_rays(geom::ring_rig({})[2], 8, rng);
  const auto truth = random_tensor({8, 3}, rng);
  std::vector<ad::Tensor> leaves;
  for (const auto& [name, t] : params.entries()) leaves.push_back(t);
  const auto result = testing::grad_check(
      [&] {
        const auto e = encoder.encode(cloud);
        const auto [e_d, e_a] = enc::split(e, 3);
        Rng jitter(3);
        return reconstruction_loss(
            decoder.render_rays(rays, e_d, e_a, std::vector<std::size_t>(8, 0), &jitter).rgb, truth);
      },
      leaves);
  INFO(result.worst);
  CHECK(result.max_rel_error < 1e-3);
}
