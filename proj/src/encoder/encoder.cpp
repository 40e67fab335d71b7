#include "deformnet/encoder/encoder.hpp"

#include <stdexcept>
#include <string>

#include "deformnet/autodiff/ops.hpp"
#include "deformnet/geometry/sampling.hpp"

namespace deformnet::enc {

std::vector<double> LatentEmbedding::full() const {
  std::vector<double> out = deformation;
  out.insert(out.end(), appearance.begin(), appearance.end());
  return out;
}

LatentEmbedding split(const std::vector<double>& full, std::size_t deformation_dim,
                      std::size_t appearance_dim) {
  if (full.size() != deformation_dim + appearance_dim) {
    throw std::invalid_argument("split: embedding has " + std::to_string(full.size()) +
                                " entries, expected " +
                                std::to_string(deformation_dim + appearance_dim));
  }
  LatentEmbedding e;
  e.deformation.assign(full.begin(), full.begin() + deformation_dim);
  e.appearance.assign(full.begin() + deformation_dim, full.end());
  return e;
}

std::pair<ad::Tensor, ad::Tensor> split(const ad::Tensor& e, std::size_t deformation_dim) {
  if (e.rank() != 2 || e.dim(1) <= deformation_dim) {
    throw std::invalid_argument("split: expected [B, E] with E > " + std::to_string(deformation_dim) +
                                ", got " + ad::shape_to_string(e.shape()));
  }
  return {ad::slice(e, 1, 0, deformation_dim), ad::slice(e, 1, deformation_dim, e.dim(1))};
}

PointNetEncoder::PointNetEncoder(const EncoderConfig& config, ad::ParameterSet& params, Rng& rng)
    : config_(config) {
  if (config.point_widths.empty()) throw std::invalid_argument("encoder: no point widths");
  if (config.max_points == 0) throw std::invalid_argument("encoder: max_points must be positive");
  std::vector<std::size_t> point{6};
  point.insert(point.end(), config.point_widths.begin(), config.point_widths.end());
  point_mlp_ = ad::Mlp::create(params, "encoder/point", point, rng);
  std::vector<std::size_t> post{config.point_widths.back()};
  post.insert(post.end(), config.post_widths.begin(), config.post_widths.end());
  post.push_back(config.embedding_dim());
  post_mlp_ = ad::Mlp::create(params, "encoder/post", post, rng);
}

std::vector<double> PointNetEncoder::prepare(const geom::PointCloud& cloud, Rng* rng) const {
  if (cloud.empty()) throw std::invalid_argument("encode: empty point cloud");
  if (cloud.colors.size() != cloud.positions.size()) {
    throw std::invalid_argument("encode: positions and colors differ in length");
  }
  std::vector<std::size_t> rows;
  if (cloud.size() > config_.max_points) {
    rows = rng ? geom::farthest_point_sample(cloud.positions, config_.max_points, *rng)
               : geom::farthest_point_sample(cloud.positions, config_.max_points, 0);
  } else {
    rows.resize(cloud.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  }
  const Eigen::Vector3d lo = config_.crop.lo;
  const Eigen::Vector3d scale = 2.0 * config_.crop.extent().cwiseInverse();
  std::vector<double> out;
  out.reserve(rows.size() * 6);
  for (std::size_t r : rows) {
    const Eigen::Vector3d p = (cloud.positions[r] - lo).cwiseProduct(scale) - Eigen::Vector3d::Ones();
    const Eigen::Vector3d& c = cloud.colors[r];
    out.insert(out.end(), {p.x(), p.y(), p.z(), c.x(), c.y(), c.z()});
  }
  return out;
}

ad::Tensor PointNetEncoder::encode(const geom::PointCloud& cloud, Rng* rng) const {
  return encode_batch({cloud}, rng);
}

ad::Tensor PointNetEncoder::encode_batch(const std::vector<geom::PointCloud>& clouds,
                                         Rng* rng) const {
  if (clouds.empty()) throw std::invalid_argument("encode_batch: no clouds");
  std::vector<std::vector<double>> rows;
  std::size_t n = 0;
  for (const auto& c : clouds) {
    rows.push_back(prepare(c, rng));
    n = std::max(n, rows.back().size() / 6);
  }
  std::vector<double> input;
  input.reserve(clouds.size() * n * 6);
  for (const auto& r : rows) {
    input.insert(input.end(), r.begin(), r.end());
    for (std::size_t pad = r.size() / 6; pad < n; ++pad) input.insert(input.end(), r.begin(), r.begin() + 6);
  }
  const std::size_t b = clouds.size();
  const ad::Tensor x = ad::Tensor::from({b * n, 6}, std::move(input));
  const ad::Tensor features = ad::relu(point_mlp_(x));
  const ad::Tensor pooled =
      ad::max(ad::reshape(features, {b, n, features.dim(1)}), 1);
  return post_mlp_(pooled);
}

}  // namespace deformnet::enc
