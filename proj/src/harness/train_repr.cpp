#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "deformnet/harness/training.hpp"
#include "deformnet/nerf/rays.hpp"

namespace deformnet::harness {

namespace {

double cosine_rate(const ReprTrainingConfig& c, std::uint64_t step) {
  if (c.steps <= 1) return c.learning_rate;
  const double t = static_cast<double>(step) / static_cast<double>(c.steps - 1);
  return c.final_learning_rate +
         0.5 * (c.learning_rate - c.final_learning_rate) * (1.0 + std::cos(std::numbers::pi * t));
}

struct PixelPools {
  std::vector<std::vector<nerf::Pixel>> foreground;  // per frame ref
};

PixelPools build_pools(const std::vector<Observation>& obs, const std::vector<FrameRef>& frames) {
  PixelPools pools;
  for (const auto& f : frames) {
    const auto& img = obs.at(f.observation).frames.at(f.camera);
    std::vector<nerf::Pixel> fg;
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        if (img.depth(x, y) > 0.0f) fg.push_back({x, y});
      }
    }
    pools.foreground.push_back(std::move(fg));
  }
  return pools;
}

}  // namespace

std::vector<CurvePoint> train_representation(RepresentationModel& model,
                                             const std::vector<Observation>& observations,
                                             const std::vector<FrameRef>& frames,
                                             const std::vector<geom::Camera>& cameras,
                                             const ReprTrainingConfig& config, std::uint64_t seed,
                                             const TrainingHooks& hooks) {
  if (observations.empty() || frames.empty()) throw std::invalid_argument("train_representation: no training frames");
  for (const auto& f : frames) {
    if (f.observation >= observations.size() || f.camera >= cameras.size() ||
        f.camera >= observations[f.observation].frames.size()) {
      throw std::invalid_argument("train_representation: frame reference out of range");
    }
  }
  ad::AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  adam_cfg.clip_grad_norm = config.clip_grad_norm;
  ad::Adam adam(model.params(), adam_cfg);
  std::uint64_t start = 0;
  if (!hooks.checkpoint.empty() && std::filesystem::exists(hooks.checkpoint)) {
    auto loaded = load_model(hooks.checkpoint, model.params());
    if (!loaded.optimizer.empty()) adam.load_state(loaded.optimizer);
    start = loaded.step;
    spdlog::info("resuming representation training at step {}", start);
  }

  const auto pools = build_pools(observations, frames);
  const std::size_t ed = model.deformation_dim();
  std::vector<CurvePoint> curve;
  std::ofstream csv;
  if (!hooks.curve_csv.empty()) {
    csv.open(hooks.curve_csv, start > 0 ? std::ios::app : std::ios::trunc);
    if (start == 0) csv << "step,loss\n";
  }

  for (std::uint64_t step = start; step < config.steps; ++step) {
    Rng rng = Rng::derive(seed, step);
    // Frames for this batch and the distinct observations behind them.
    std::vector<std::size_t> picks;
    std::map<std::size_t, std::size_t> slot;
    std::vector<geom::PointCloud> clouds;
    for (std::size_t b = 0; b < config.frames_per_batch; ++b) {
      const std::size_t f = rng.below(frames.size());
      picks.push_back(f);
      const std::size_t o = frames[f].observation;
      if (slot.emplace(o, clouds.size()).second) clouds.push_back(observations[o].cloud);
    }
    std::vector<nerf::Ray> rays;
    std::vector<std::size_t> latent_row;
    std::vector<double> target;
    for (std::size_t f : picks) {
      const auto& ref = frames[f];
      const auto& img = observations[ref.observation].frames[ref.camera];
      const auto& cam = cameras[ref.camera];
      const auto& fg = pools.foreground[f];
      for (std::size_t r = 0; r < config.rays_per_frame; ++r) {
        nerf::Pixel px;
        if (!fg.empty() && rng.uniform(0.0, 1.0) < config.foreground_fraction) {
          px = fg[rng.below(fg.size())];
        } else {
          px = {static_cast<int>(rng.below(img.width())), static_cast<int>(rng.below(img.height()))};
        }
        rays.push_back(nerf::generate_ray(cam, px.x, px.y));
        latent_row.push_back(slot[ref.observation]);
        const auto c = img.rgb(px.x, px.y);
        target.insert(target.end(), {c.x(), c.y(), c.z()});
      }
    }
    const ad::Tensor e = model.encoder().encode_batch(clouds);
    const auto [e_d, e_a] = enc::split(e, ed);
    const auto out = model.decoder().render_rays(rays, e_d, e_a, latent_row, &rng);
    const ad::Tensor truth = ad::Tensor::from({rays.size(), 3}, std::move(target));
    ad::Tensor loss = nerf::reconstruction_loss(out.rgb, truth);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw std::runtime_error("representation training diverged at step " + std::to_string(step) +
                               " (non-finite loss); last checkpoint kept");
    }
    adam.zero_grad();
    loss.backward();
    adam.set_learning_rate(cosine_rate(config, step));
    adam.step();

    const bool last = step + 1 == config.steps;
    if (config.log_every > 0 && (step % config.log_every == 0 || last)) {
      CurvePoint p{step, value};
      curve.push_back(p);
      if (csv.is_open()) csv << step << ',' << value << '\n';
      if (hooks.on_log) hooks.on_log(p);
    }
    if (!hooks.checkpoint.empty() &&
        ((config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) || last)) {
      save_model(hooks.checkpoint, model.params(), &adam, step + 1);
    }
  }
  return curve;
}

double render_psnr(const RepresentationModel& model, const std::vector<Observation>& observations,
                   const std::vector<FrameRef>& frames, const std::vector<geom::Camera>& cameras) {
  double sq = 0.0;
  std::size_t count = 0;
  std::map<std::size_t, ad::Tensor> latents;
  for (const auto& ref : frames) {
    auto it = latents.find(ref.observation);
    if (it == latents.end()) {
      it = latents.emplace(ref.observation, model.embed(observations[ref.observation].cloud)).first;
    }
    const auto [e_d, e_a] = enc::split(it->second, model.deformation_dim());
    const auto img = model.decoder().render_image(cameras[ref.camera], e_d, e_a);
    const auto& truth = observations[ref.observation].frames[ref.camera];
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        sq += (img.rgb(x, y) - truth.rgb(x, y)).squaredNorm();
        count += 3;
      }
    }
  }
  const double mse = sq / static_cast<double>(count);
  return mse > 0.0 ? -10.0 * std::log10(mse) : std::numeric_limits<double>::infinity();
}

}  // namespace deformnet::harness
