#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "deformnet/encoder/encoder.hpp"
#include "deformnet/env/toy_env.hpp"
#include "deformnet/harness/models.hpp"
#include "deformnet/harness/training.hpp"
#include "deformnet/nerf/decoder.hpp"
#include "deformnet/planner/planner.hpp"
#include "deformnet/rssm/rssm.hpp"

namespace deformnet::harness {

struct CollectConfig {
  std::size_t episodes = 100;
  std::size_t horizon = 10;
  // Goals attached to episodes round-robin; they only label the cost column.
  std::vector<std::string> goals{"dent", "split"};
};

struct DynTrainingConfig {
  std::size_t steps = 2000;
  std::size_t batch = 16;            // sequences per step
  std::size_t sequence_length = 11;  // clipped to the shortest episode
  double learning_rate = 1e-3;
  double clip_grad_norm = 100.0;
  double reward_scale = 100.0;  // reward = -scale * goal cost
  // Embeddings are recomputed from the representation checkpoint every this
  // many epochs (one epoch = one pass over the sequences). 0 disables.
  std::size_t refresh_every = 50;
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 500;
  std::string cost;  // empty: the goal's default cost
};

struct EvalConfig {
  std::size_t trials = 10;
  std::size_t max_steps = 6;
  // Stop once the predicted reward exceeds this. JSON null means never.
  double reward_threshold = std::numeric_limits<double>::infinity();
  std::size_t horizon = 3;
  std::vector<std::string> goals{"dent", "split"};
  std::vector<std::string> policies{"planner", "random"};
  bool write_frames = true;
};

struct AugmentConfig {
  std::size_t episodes = 10;
};

struct RunConfig {
  std::uint64_t seed = 0;
  env::EnvConfig env;
  PerceptionConfig perception;
  enc::EncoderConfig encoder;
  nerf::DecoderConfig decoder;
  rssm::RssmConfig rssm;
  plan::PlannerConfig planner;
  CollectConfig collect;
  ReprTrainingConfig repr_training;
  DynTrainingConfig dyn_training;
  AugmentConfig augment;
  EvalConfig eval;

  /// Throws std::invalid_argument on values that cannot work together, such
  /// as encoder and decoder latent sizes that differ.
  void validate() const;
};

/// Small networks sized for a single CPU core. Latent sizes, action bounds
/// and crop boxes are already consistent with the environment.
RunConfig default_config();

nlohmann::json to_json(const RunConfig& config);

/// Missing keys keep their defaults; unknown keys throw with their JSON path.
RunConfig config_from_json(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace deformnet::harness
