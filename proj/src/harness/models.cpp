#include "deformnet/harness/models.hpp"

#include <stdexcept>

#include "deformnet/geometry/fusion.hpp"

namespace deformnet::harness {

geom::PointCloud perceive(const std::vector<geom::RgbdImage>& frames,
                          const std::vector<geom::Camera>& cameras, const geom::Aabb& crop,
                          const PerceptionConfig& config) {
  geom::PointCloud cloud = geom::fuse_depth_views(frames, cameras, crop);
  if (config.remove_plane && cloud.size() >= 3) {
    Rng rng(0x5eed);
    cloud = geom::ransac_remove_outliers(cloud, config.outliers, rng).cloud;
  } else if (config.statistical_filter && cloud.size() > config.outliers.k) {
    cloud = cloud.select(
        geom::statistical_inliers(cloud.positions, config.outliers.k, config.outliers.std_ratio));
  }
  return cloud;
}

RepresentationModel::RepresentationModel(const enc::EncoderConfig& encoder,
                                         const nerf::DecoderConfig& decoder, std::uint64_t seed) {
  if (encoder.deformation_dim != decoder.deformation_dim ||
      encoder.appearance_dim != decoder.appearance_dim) {
    throw std::invalid_argument("encoder and decoder disagree on latent sizes");
  }
  Rng rng(Rng::derive(seed, 1));
  encoder_ = std::make_unique<enc::PointNetEncoder>(encoder, params_, rng);
  decoder_ = std::make_unique<nerf::NerfDecoder>(decoder, params_, rng);
}

ad::Tensor RepresentationModel::embed(const geom::PointCloud& cloud) const {
  ad::NoGradGuard guard;
  return encoder_->encode(cloud);
}

std::uint64_t RepresentationModel::encoder_fingerprint() const {
  ad::ParameterSet subset;
  for (const auto& [name, t] : params_.entries()) {
    if (name.rfind("encoder/", 0) == 0) subset.add(name, t);
  }
  return subset.fingerprint();
}

DynamicsModel::DynamicsModel(const rssm::RssmConfig& config, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, 2));
  rssm_ = std::make_unique<rssm::Rssm>(config, params_, rng);
}

void save_model(const std::filesystem::path& path, const ad::ParameterSet& params,
                const ad::Adam* optimizer, std::uint64_t step) {
  std::vector<ad::NamedTensor> out = params.snapshot();
  if (optimizer) {
    for (auto& entry : optimizer->state()) out.push_back(std::move(entry));
  }
  out.emplace_back("meta/step", ad::Tensor::scalar(static_cast<double>(step)));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  ad::save_checkpoint(tmp, out);
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_model(const std::filesystem::path& path, ad::ParameterSet& params) {
  LoadedCheckpoint result;
  std::vector<ad::NamedTensor> weights;
  for (auto& [name, t] : ad::load_checkpoint(path)) {
    if (name == "meta/step") {
      result.step = static_cast<std::uint64_t>(t.item());
    } else if (name.rfind("optim/", 0) == 0) {
      result.optimizer.emplace_back(name, t);
    } else {
      weights.emplace_back(name, t);
    }
  }
  params.load(weights, true);
  return result;
}

}  // namespace deformnet::harness
