#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "deformnet/harness/models.hpp"

namespace deformnet::harness {

/// One time step of an episode: the fused cloud the encoder sees and the
/// per-camera frames the decoder is supervised with.
struct Observation {
  geom::PointCloud cloud;
  std::vector<geom::RgbdImage> frames;
};

struct FrameRef {
  std::size_t observation = 0;
  std::size_t camera = 0;
};

struct ReprTrainingConfig {
  std::size_t steps = 1500;
  std::size_t frames_per_batch = 4;
  std::size_t rays_per_frame = 128;
  double foreground_fraction = 0.2;  // share of rays aimed at object pixels
  double learning_rate = 6e-3;
  double final_learning_rate = 3e-4;  // cosine decay target
  double clip_grad_norm = 1.0;
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 250;
};

struct CurvePoint {
  std::uint64_t step = 0;
  double loss = 0.0;
};

struct TrainingHooks {
  std::filesystem::path checkpoint;  // empty: no checkpoints
  std::filesystem::path curve_csv;   // empty: no curve file
  std::function<void(const CurvePoint&)> on_log;
};

/// Optimizes the colour reconstruction loss over random ray batches. Resumes
/// from `hooks.checkpoint` when it exists and holds an optimizer state. Batch
/// randomness depends only on (seed, step), so a resumed run continues
/// exactly. Throws on a non-finite loss; the last checkpoint is kept.
std::vector<CurvePoint> train_representation(RepresentationModel& model,
                                             const std::vector<Observation>& observations,
                                             const std::vector<FrameRef>& frames,
                                             const std::vector<geom::Camera>& cameras,
                                             const ReprTrainingConfig& config, std::uint64_t seed,
                                             const TrainingHooks& hooks = {});

/// Mean squared error over every pixel and channel of the listed frames,
/// rendered with midpoint quadrature; returned as PSNR in dB (peak 1).
double render_psnr(const RepresentationModel& model, const std::vector<Observation>& observations,
                   const std::vector<FrameRef>& frames, const std::vector<geom::Camera>& cameras);

}  // namespace deformnet::harness
