#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "deformnet/geometry/sampling.hpp"
#include "deformnet/harness/pipeline.hpp"
#include "deformnet/harness/runtime.hpp"

namespace deformnet::harness {

void ensure_writable(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe, std::ios::trunc);
    out << "ok";
    if (!out) throw std::runtime_error("directory is not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

geom::PointCloud prepare_cloud(const std::vector<geom::RgbdImage>& frames,
                               const std::vector<geom::Camera>& cameras, const RunConfig& config) {
  geom::PointCloud cloud = perceive(frames, cameras, config.env.workspace, config.perception);
  if (cloud.size() > config.encoder.max_points) {
    cloud = cloud.select(geom::farthest_point_sample(cloud.positions, config.encoder.max_points));
  }
  return cloud;
}

costs::CostKind training_cost(const RunConfig& config, const env::GoalSpec& goal) {
  return config.dyn_training.cost.empty() ? goal.default_cost()
                                          : costs::parse_cost_kind(config.dyn_training.cost);
}

Json episode_metadata(const RunConfig& config, std::size_t steps) {
  Json m;
  m["width"] = config.env.rig.width;
  m["height"] = config.env.rig.height_px;
  m["cameras"] = static_cast<std::size_t>(config.env.rig.count);
  m["action_dim"] = config.env.action_dim();
  m["particle_count"] = config.env.particle_count;
  m["steps"] = steps;
  m["mode"] = env::to_string(config.env.mode);
  return m;
}

Manifest collect(const RunConfig& config, const std::filesystem::path& dir, std::size_t episodes,
                 std::uint64_t seed, std::size_t threads) {
  config.validate();
  ensure_writable(dir);
  std::map<std::string, env::GoalSpec> goals;
  for (const auto& name : config.collect.goals) goals.emplace(name, env::make_goal(name, config.env));
  const auto bounds = config.env.action_bounds();

  Manifest manifest;
  manifest.config = to_json(config);
  manifest.episodes.resize(episodes);
  parallel_for(episodes, threads, [&](std::size_t i) {
    Rng rng = Rng::derive(seed, i);
    const std::string& goal_name = config.collect.goals[i % config.collect.goals.size()];
    const auto& goal = goals.at(goal_name);
    const auto kind = training_cost(config, goal);
    env::ToyEnv env(config.env);
    env.reset(seed);

    Episode ep;
    ep.metadata = episode_metadata(config, config.collect.horizon);
    ep.metadata["goal"] = goal_name;
    ep.metadata["cost"] = costs::to_string(kind);
    ep.metadata["seed"] = seed;
    ep.metadata["index"] = i;
    ep.metadata["provenance"] = "random";
    ep.frames.push_back(env.observe());
    ep.particles.push_back(env.state().particles);
    ep.costs.push_back(env::goal_cost(env.state().particles, goal, kind, config.env));
    for (std::size_t t = 0; t < config.collect.horizon; ++t) {
      std::vector<double> action(bounds.dims());
      for (std::size_t d = 0; d < action.size(); ++d) action[d] = rng.uniform(bounds.lo[d], bounds.hi[d]);
      env.step(action);
      ep.actions.push_back(action);
      ep.frames.push_back(env.observe());
      ep.particles.push_back(env.state().particles);
      ep.costs.push_back(env::goal_cost(env.state().particles, goal, kind, config.env));
    }
    const std::string file = fmt::format("episode_{:05d}.dfne", i);
    write_episode(dir / file, ep);
    manifest.episodes[i] = {file, sha256_file(dir / file), ep.steps(), goal_name, "random"};
    spdlog::debug("collected {} ({} -> {:.5f})", file, goal_name, ep.costs.back());
  });
  write_manifest(dir, manifest);
  spdlog::info("collected {} episodes into {}", episodes, dir.string());
  return manifest;
}

Dataset load_dataset(const std::filesystem::path& dir, const RunConfig& config) {
  Dataset data;
  data.manifest = read_manifest(dir);
  if (data.manifest.episodes.empty()) throw std::runtime_error("dataset " + dir.string() + " is empty");
  const auto cams = config.env.cameras();
  for (const auto& entry : data.manifest.episodes) {
    const auto path = dir / entry.file;
    if (sha256_file(path) != entry.sha256) throw std::runtime_error(path.string() + ": checksum mismatch");
    Episode ep = read_episode(path);
    if (ep.steps() != entry.steps) throw std::runtime_error(path.string() + ": step count differs from the manifest");
    if (ep.metadata.at("cameras").get<std::size_t>() != cams.size() ||
        ep.metadata.at("width").get<int>() != config.env.rig.width ||
        ep.metadata.at("height").get<int>() != config.env.rig.height_px ||
        ep.metadata.at("action_dim").get<std::size_t>() != config.env.action_dim()) {
      throw std::runtime_error(path.string() + ": cameras or action space differ from the configuration");
    }
    data.episodes.push_back(std::move(ep));
  }
  return data;
}

ObservationSet build_observations(const Dataset& data, const RunConfig& config, bool keep_frames) {
  const auto cams = config.env.cameras();
  ObservationSet set;
  for (const auto& ep : data.episodes) {
    std::vector<std::size_t> idx;
    for (const auto& frames : ep.frames) {
      idx.push_back(set.observations.size());
      Observation obs{prepare_cloud(frames, cams, config), {}};
      if (keep_frames) obs.frames = frames;
      set.observations.push_back(std::move(obs));
    }
    set.index.push_back(std::move(idx));
  }
  return set;
}

std::vector<FrameRef> all_frames(const ObservationSet& set) {
  std::vector<FrameRef> refs;
  for (std::size_t o = 0; o < set.observations.size(); ++o) {
    for (std::size_t c = 0; c < set.observations[o].frames.size(); ++c) refs.push_back({o, c});
  }
  return refs;
}

ReprRunResult run_train_repr(const RunConfig& config, const RunPaths& paths, std::uint64_t seed,
                             std::size_t psnr_frames) {
  const Dataset data = load_dataset(paths.dataset(), config);
  const ObservationSet set = build_observations(data, config, true);
  const auto frames = all_frames(set);
  const auto cams = config.env.cameras();
  RepresentationModel model(config.encoder, config.decoder, seed);
  TrainingHooks hooks;
  hooks.checkpoint = paths.repr_checkpoint();
  hooks.curve_csv = paths.repr_curve();
  hooks.on_log = [](const CurvePoint& p) { spdlog::info("repr step {} loss {:.6f}", p.step, p.loss); };
  ReprRunResult result;
  result.curve = train_representation(model, set.observations, frames, cams, config.repr_training,
                                      seed, hooks);
  std::vector<FrameRef> probe;
  const std::size_t stride = std::max<std::size_t>(1, frames.size() / std::max<std::size_t>(1, psnr_frames));
  for (std::size_t i = 0; i < frames.size() && probe.size() < psnr_frames; i += stride) probe.push_back(frames[i]);
  result.psnr = render_psnr(model, set.observations, probe, cams);
  spdlog::info("representation PSNR over {} training frames: {:.2f} dB", probe.size(), result.psnr);
  return result;
}

}  // namespace deformnet::harness
