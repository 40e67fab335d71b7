#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "deformnet/autodiff/params.hpp"
#include "deformnet/encoder/encoder.hpp"
#include "deformnet/geometry/camera.hpp"
#include "deformnet/geometry/outliers.hpp"
#include "deformnet/geometry/types.hpp"
#include "deformnet/nerf/decoder.hpp"
#include "deformnet/rssm/rssm.hpp"

namespace deformnet::harness {

struct PerceptionConfig {
  bool remove_plane = false;  // the toy renderer draws no table
  bool statistical_filter = true;
  geom::OutlierRemovalConfig outliers;
};

/// RGB-D views -> cropped, filtered world point cloud.
geom::PointCloud perceive(const std::vector<geom::RgbdImage>& frames,
                          const std::vector<geom::Camera>& cameras, const geom::Aabb& crop,
                          const PerceptionConfig& config);

/// Encoder and decoder sharing one parameter set.
class RepresentationModel {
 public:
  RepresentationModel(const enc::EncoderConfig& encoder, const nerf::DecoderConfig& decoder,
                      std::uint64_t seed);

  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  const enc::PointNetEncoder& encoder() const { return *encoder_; }
  const nerf::NerfDecoder& decoder() const { return *decoder_; }
  std::size_t deformation_dim() const { return encoder_->config().deformation_dim; }

  /// [1, E] without gradient.
  ad::Tensor embed(const geom::PointCloud& cloud) const;
  /// Parameter subset owned by the encoder ("encoder/...").
  std::uint64_t encoder_fingerprint() const;

 private:
  ad::ParameterSet params_;
  std::unique_ptr<enc::PointNetEncoder> encoder_;
  std::unique_ptr<nerf::NerfDecoder> decoder_;
};

class DynamicsModel {
 public:
  DynamicsModel(const rssm::RssmConfig& config, std::uint64_t seed);

  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  const rssm::Rssm& rssm() const { return *rssm_; }

 private:
  ad::ParameterSet params_;
  std::unique_ptr<rssm::Rssm> rssm_;
};

/// Checkpoint = parameters, optional optimizer state and the training step.
/// Written to a temporary file and renamed, so an interrupted write never
/// replaces the last good checkpoint.
void save_model(const std::filesystem::path& path, const ad::ParameterSet& params,
                const ad::Adam* optimizer = nullptr, std::uint64_t step = 0);

struct LoadedCheckpoint {
  std::uint64_t step = 0;
  std::vector<ad::NamedTensor> optimizer;  // empty when none was saved
};

LoadedCheckpoint load_model(const std::filesystem::path& path, ad::ParameterSet& params);

}  // namespace deformnet::harness
