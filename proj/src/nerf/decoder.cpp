#include "deformnet/nerf/decoder.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "deformnet/autodiff/ops.hpp"

namespace deformnet::nerf {

namespace {

ad::Tensor glorot(ad::ParameterSet& params, const std::string& name, std::size_t in,
                  std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& x : w) x = rng.uniform(-limit, limit);
  return params.add(name, ad::Tensor::from({in, out}, std::move(w)));
}

}  // namespace

std::vector<double> positional_encoding(const std::vector<double>& rows, std::size_t width,
                                        std::size_t bands) {
  if (width == 0 || rows.size() % width != 0) {
    throw std::invalid_argument("positional_encoding: row data is not a multiple of the width");
  }
  const std::size_t n = rows.size() / width;
  const std::size_t out_width = encoded_width(width, bands);
  std::vector<double> out(n * out_width);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = rows.data() + i * width;
    double* o = out.data() + i * out_width;
    for (std::size_t c = 0; c < width; ++c) o[c] = x[c];
    for (std::size_t k = 0; k < bands; ++k) {
      const double freq = std::ldexp(std::numbers::pi, static_cast<int>(k));
      for (std::size_t c = 0; c < width; ++c) {
        o[width + (2 * k) * width + c] = std::sin(freq * x[c]);
        o[width + (2 * k + 1) * width + c] = std::cos(freq * x[c]);
      }
    }
  }
  return out;
}

NerfDecoder::NerfDecoder(const DecoderConfig& config, ad::ParameterSet& params, Rng& rng)
    : config_(config) {
  if (config.density_widths.empty()) throw std::invalid_argument("decoder: no density widths");
  const std::size_t width = config.density_widths.front();
  density_in_ = ad::Linear::create(params, "decoder/density/in", 
                                   encoded_width(3, config.pe_position_bands), width, rng);
  density_latent_ = glorot(params, "decoder/density/latent", config.deformation_dim, width, rng);
  std::vector<std::size_t> trunk(config.density_widths.begin(), config.density_widths.end());
  trunk.push_back(1 + config.feature_dim);
  density_trunk_ = ad::Mlp::create(params, "decoder/density/trunk", trunk, rng);
  color_in_ = ad::Linear::create(params, "decoder/color/in", config.feature_dim,
                                 config.color_width, rng);
  color_latent_ = glorot(params, "decoder/color/latent", config.appearance_dim,
                         config.color_width, rng);
  color_direction_ = glorot(params, "decoder/color/direction",
                            encoded_width(3, config.pe_direction_bands), config.color_width, rng);
  color_out_ = ad::Linear::create(params, "decoder/color/out", config.color_width, 3, rng);
  set_density_bias(config.initial_density_bias);
}

void NerfDecoder::set_density_bias(double value) {
  density_trunk_.layers.back().bias.mutable_values()[0] = value;
}

std::vector<double> NerfDecoder::normalize(const geom::Points& points) const {
  const Eigen::Vector3d lo = config_.crop.lo;
  const Eigen::Vector3d scale = 2.0 * config_.crop.extent().cwiseInverse();
  std::vector<double> out;
  out.reserve(points.size() * 3);
  for (const auto& p : points) {
    const Eigen::Vector3d q = (p - lo).cwiseProduct(scale) - Eigen::Vector3d::Ones();
    out.insert(out.end(), {q.x(), q.y(), q.z()});
  }
  return out;
}

NerfDecoder::Field NerfDecoder::density_field(const std::vector<double>& normalized,
                                              const ad::Tensor& e_d,
                                              const std::vector<std::size_t>& frame) const {
  const std::size_t n = normalized.size() / 3;
  if (frame.size() != n) throw std::invalid_argument("decoder: one frame index per point required");
  if (e_d.rank() != 2 || e_d.dim(1) != config_.deformation_dim) {
    throw ad::ShapeError("decoder: e_d must be [B, " + std::to_string(config_.deformation_dim) +
                         "], got " + ad::shape_to_string(e_d.shape()));
  }
  const std::size_t pe_width = encoded_width(3, config_.pe_position_bands);
  const ad::Tensor pe = ad::Tensor::from(
      {n, pe_width}, positional_encoding(normalized, 3, config_.pe_position_bands));
  const ad::Tensor latent = ad::gather(ad::matmul(e_d, density_latent_), frame);
  const ad::Tensor out = density_trunk_(ad::relu(density_in_(pe) + latent));
  const ad::Tensor logit = ad::slice(out, 1, 0, 1);
  return {ad::softplus(logit), ad::slice(out, 1, 1, out.dim(1))};
}

ad::Tensor NerfDecoder::density(const geom::Points& points, const ad::Tensor& e_d,
                                const std::vector<std::size_t>& frame) const {
  return density_field(normalize(points), e_d, frame).sigma;
}

RenderOutput NerfDecoder::render_rays(const std::vector<Ray>& rays, const ad::Tensor& e_d,
                                      const ad::Tensor& e_a, const std::vector<std::size_t>& frame,
                                      Rng* rng) const {
  if (frame.size() != rays.size()) throw std::invalid_argument("render_rays: one frame index per ray required");
  if (e_a.rank() != 2 || e_a.dim(1) != config_.appearance_dim || e_a.dim(0) != e_d.dim(0)) {
    throw ad::ShapeError("render_rays: e_a must be [B, " + std::to_string(config_.appearance_dim) +
                         "] matching e_d, got " + ad::shape_to_string(e_a.shape()));
  }
  std::vector<Ray> hit;
  std::vector<std::size_t> hit_frame;
  std::vector<std::size_t> row(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r) {
    Ray clipped = rays[r];
    if (clip_to_box(clipped, config_.crop)) {
      row[r] = hit.size();
      hit.push_back(clipped);
      hit_frame.push_back(frame[r]);
    } else {
      row[r] = SIZE_MAX;
    }
  }
  const Eigen::Vector3d& bg = config_.background;
  if (hit.empty()) {
    std::vector<double> rgb;
    for (std::size_t r = 0; r < rays.size(); ++r) rgb.insert(rgb.end(), {bg.x(), bg.y(), bg.z()});
    return {ad::Tensor::from({rays.size(), 3}, std::move(rgb)), ad::Tensor::zeros({rays.size(), 1}),
            ad::Tensor::zeros({rays.size(), 1})};
  }

  const std::size_t s = config_.samples_per_ray;
  const RaySampleBatch batch = stratified_sample(hit, s, rng);
  const std::size_t nr = hit.size(), n = nr * s;
  geom::Points points(n);
  std::vector<std::size_t> sample_frame(n), sample_ray(n);
  for (std::size_t r = 0; r < nr; ++r) {
    for (std::size_t i = 0; i < s; ++i) {
      points[r * s + i] = hit[r].at(batch.depths[r * s + i]);
      sample_frame[r * s + i] = hit_frame[r];
      sample_ray[r * s + i] = r;
    }
  }
  const Field field = density_field(normalize(points), e_d, sample_frame);

  std::vector<double> dirs;
  dirs.reserve(nr * 3);
  for (const auto& ray : hit) dirs.insert(dirs.end(), {ray.direction.x(), ray.direction.y(), ray.direction.z()});
  const std::size_t pe_d = encoded_width(3, config_.pe_direction_bands);
  const ad::Tensor dir_pe =
      ad::Tensor::from({nr, pe_d}, positional_encoding(dirs, 3, config_.pe_direction_bands));
  const ad::Tensor per_ray = ad::matmul(dir_pe, color_direction_);
  const ad::Tensor h = ad::relu(color_in_(field.feature) +
                                ad::gather(ad::matmul(e_a, color_latent_), sample_frame) +
                                ad::gather(per_ray, sample_ray));
  const ad::Tensor rgb = ad::reshape(ad::sigmoid(color_out_(h)), {nr, s, 3});

  std::vector<double> deltas(batch.deltas);
  for (double& d : deltas) d /= config_.distance_unit;
  const ad::Tensor sigma = ad::reshape(field.sigma, {nr, s});
  const CompositeResult comp = composite(sigma, rgb, ad::Tensor::from({nr, s}, std::move(deltas)), bg);
  const ad::Tensor depth = ad::sum(comp.weights * ad::Tensor::from({nr, s}, batch.depths), 1, true);
  const ad::Tensor opacity = ad::neg(comp.transmittance) + 1.0;

  if (nr == rays.size()) return {comp.rgb, depth, opacity};
  // Scatter back: rays that missed the box read an extra constant row.
  std::vector<std::size_t> index(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r) index[r] = row[r] == SIZE_MAX ? nr : row[r];
  const ad::Tensor bg_row = ad::Tensor::from({1, 3}, {bg.x(), bg.y(), bg.z()});
  const ad::Tensor zero_row = ad::Tensor::zeros({1, 1});
  return {ad::gather(ad::concat({comp.rgb, bg_row}, 0), index),
          ad::gather(ad::concat({depth, zero_row}, 0), index),
          ad::gather(ad::concat({opacity, zero_row}, 0), index)};
}

geom::RgbdImage NerfDecoder::render_image(const geom::Camera& camera, const ad::Tensor& e_d,
                                          const ad::Tensor& e_a, Rng* rng,
                                          std::size_t chunk) const {
  camera.validate();
  ad::NoGradGuard guard;
  geom::RgbdImage image(camera.width, camera.height);
  std::vector<Pixel> pixels;
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) pixels.push_back({x, y});
  }
  const Eigen::Vector3d axis = camera.rotation().col(2);
  for (std::size_t begin = 0; begin < pixels.size(); begin += chunk) {
    const std::size_t end = std::min(pixels.size(), begin + chunk);
    const std::vector<Pixel> part(pixels.begin() + begin, pixels.begin() + end);
    const auto rays = generate_rays(camera, part);
    const auto out = render_rays(rays, e_d, e_a, std::vector<std::size_t>(rays.size(), 0), rng);
    for (std::size_t i = 0; i < part.size(); ++i) {
      image.set_rgb(part[i].x, part[i].y,
                    {out.rgb.at({i, 0}), out.rgb.at({i, 1}), out.rgb.at({i, 2})});
      const double opacity = out.opacity.at({i, 0});
      image.depth(part[i].x, part[i].y) =
          opacity < 0.5 ? 0.0f
                        : static_cast<float>(out.depth.at({i, 0}) / opacity *
                                             rays[i].direction.dot(axis));
    }
  }
  return image;
}

}  // namespace deformnet::nerf
