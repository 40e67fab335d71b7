#pragma once

#include <cstddef>
#include <vector>

#include "deformnet/autodiff/mlp.hpp"
#include "deformnet/autodiff/params.hpp"
#include "deformnet/geometry/camera.hpp"
#include "deformnet/geometry/types.hpp"
#include "deformnet/nerf/rays.hpp"

namespace deformnet::nerf {

struct DecoderConfig {
  std::size_t pe_position_bands = 6;
  std::size_t pe_direction_bands = 4;
  std::vector<std::size_t> density_widths{256, 256, 256, 256};
  std::size_t feature_dim = 256;
  std::size_t color_width = 128;
  std::size_t deformation_dim = 128;
  std::size_t appearance_dim = 128;
  std::size_t samples_per_ray = 64;
  // Rays are clipped to this box; positions are normalized from it to [-1,1].
  geom::Aabb crop{{-0.1, -0.1, 0.0}, {0.1, 0.1, 0.1}};
  // Length unit of the density: sigma is per `distance_unit` meters.
  double distance_unit = 0.01;
  double initial_density_bias = 0.0;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
};

/// Fixed sinusoidal features [x, sin(2^k pi x), cos(2^k pi x)] for k < bands.
std::vector<double> positional_encoding(const std::vector<double>& rows, std::size_t width,
                                        std::size_t bands);
inline std::size_t encoded_width(std::size_t width, std::size_t bands) {
  return width * (1 + 2 * bands);
}

struct RenderOutput {
  ad::Tensor rgb;          // [R, 3]
  ad::Tensor depth;        // [R, 1] expected distance along the ray, meters
  ad::Tensor opacity;      // [R, 1] 1 - leftover transmittance
};

/// Latent-conditioned radiance field. Density depends on (x, e_d) only;
/// color on the density feature, e_a and the view direction.
class NerfDecoder {
 public:
  NerfDecoder(const DecoderConfig& config, ad::ParameterSet& params, Rng& rng);

  const DecoderConfig& config() const { return config_; }

  /// Density at world points. `frame[i]` picks the row of e_d for point i.
  /// Returns [N, 1].
  ad::Tensor density(const geom::Points& points, const ad::Tensor& e_d,
                     const std::vector<std::size_t>& frame) const;

  /// Renders rays; `frame[r]` picks the latent row for ray r. Rays that miss
  /// the crop box get the background color. Sample jitter from `rng`,
  /// midpoints when null.
  RenderOutput render_rays(const std::vector<Ray>& rays, const ad::Tensor& e_d,
                           const ad::Tensor& e_a, const std::vector<std::size_t>& frame,
                           Rng* rng) const;

  /// Full image for a single latent (e_d [1,E_d], e_a [1,E_a]), no gradient.
  /// RGB plus expected camera-space depth (0 where opacity < 0.5).
  geom::RgbdImage render_image(const geom::Camera& camera, const ad::Tensor& e_d,
                               const ad::Tensor& e_a, Rng* rng = nullptr,
                               std::size_t chunk = 2048) const;

  /// Overwrites the density-logit bias (column 0 of the last density layer).
  void set_density_bias(double value);

 private:
  struct Field {
    ad::Tensor sigma;    // [N, 1]
    ad::Tensor feature;  // [N, F]
  };
  Field density_field(const std::vector<double>& normalized, const ad::Tensor& e_d,
                      const std::vector<std::size_t>& frame) const;
  std::vector<double> normalize(const geom::Points& points) const;

  DecoderConfig config_;
  ad::Linear density_in_;      // pe(x) -> width
  ad::Tensor density_latent_;  // e_d -> width, no bias
  ad::Mlp density_trunk_;      // width -> ... -> 1 + F
  ad::Linear color_in_;        // F -> color width
  ad::Tensor color_latent_;    // e_a -> color width
  ad::Tensor color_direction_; // pe(d) -> color width
  ad::Linear color_out_;       // color width -> 3
};

}  // namespace deformnet::nerf
