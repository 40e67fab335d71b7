#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "deformnet/autodiff/mlp.hpp"
#include "deformnet/autodiff/tensor.hpp"
#include "deformnet/geometry/types.hpp"

namespace deformnet::enc {

struct EncoderConfig {
  std::vector<std::size_t> point_widths{64, 128, 256};  // shared per-point MLP
  std::vector<std::size_t> post_widths{256};            // hidden widths after pooling
  std::size_t deformation_dim = 128;
  std::size_t appearance_dim = 128;
  std::size_t max_points = 1024;
  // Positions are mapped from this box to [-1, 1]^3 before encoding.
  geom::Aabb crop{{-0.1, -0.1, 0.0}, {0.1, 0.1, 0.1}};

  std::size_t embedding_dim() const { return deformation_dim + appearance_dim; }
};

/// Plain-vector embedding; deformation part is the first E_d entries of
/// `full()`.
struct LatentEmbedding {
  std::vector<double> deformation;
  std::vector<double> appearance;

  std::vector<double> full() const;
};

LatentEmbedding split(const std::vector<double>& full, std::size_t deformation_dim,
                      std::size_t appearance_dim);

/// Tensor form: e of shape [B, E_d + E_a] -> ([B, E_d], [B, E_a]).
std::pair<ad::Tensor, ad::Tensor> split(const ad::Tensor& e, std::size_t deformation_dim);

/// PointNet set encoder: shared MLP over (normalized position, color) rows,
/// max-pool over points, then an MLP to the embedding.
class PointNetEncoder {
 public:
  PointNetEncoder(const EncoderConfig& config, ad::ParameterSet& params, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  /// Clouds larger than max_points are reduced by farthest-point sampling
  /// whose start row is drawn from `rng` (row 0 when rng is null).
  ad::Tensor encode(const geom::PointCloud& cloud, Rng* rng = nullptr) const;

  /// [B, E] for B clouds. Clouds are padded to a common size by repeating
  /// their first point, which the max-pool ignores.
  ad::Tensor encode_batch(const std::vector<geom::PointCloud>& clouds, Rng* rng = nullptr) const;

  /// The reduced, normalized 6-column input rows that `encode` would use.
  std::vector<double> prepare(const geom::PointCloud& cloud, Rng* rng) const;

 private:
  EncoderConfig config_;
  ad::Mlp point_mlp_;
  ad::Mlp post_mlp_;
};

}  // namespace deformnet::enc
