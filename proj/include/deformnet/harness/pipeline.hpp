#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "deformnet/harness/config.hpp"
#include "deformnet/harness/episode.hpp"
#include "deformnet/harness/models.hpp"
#include "deformnet/harness/training.hpp"
#include "deformnet/planner/planner.hpp"

namespace deformnet::harness {

/// Standard layout of a run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path repr_checkpoint() const { return root / "repr.ckpt"; }
  std::filesystem::path repr_curve() const { return root / "repr_curve.csv"; }
  std::filesystem::path dyn_checkpoint() const { return root / "dyn.ckpt"; }
  std::filesystem::path dyn_curve() const { return root / "dyn_curve.csv"; }
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path config() const { return root / "config.json"; }
};

/// Throws std::runtime_error unless `dir` exists (it is created) and a file
/// can be written in it.
void ensure_writable(const std::filesystem::path& dir);

/// Perception followed by farthest-point reduction to the encoder's point
/// budget, so the encoder never has to subsample.
geom::PointCloud prepare_cloud(const std::vector<geom::RgbdImage>& frames,
                               const std::vector<geom::Camera>& cameras, const RunConfig& config);

/// Cost used for a goal: the configured override or the goal's default.
costs::CostKind training_cost(const RunConfig& config, const env::GoalSpec& goal);

/// Metadata every episode file carries (shape fields for schema checks).
Json episode_metadata(const RunConfig& config, std::size_t steps);

/// Random-action episodes. Episode i draws from Rng::derive(seed, i) and is
/// labelled with goal i mod |goals|. Writes the episodes and the manifest.
/// Episodes are independent, so `threads` workers give identical files.
Manifest collect(const RunConfig& config, const std::filesystem::path& dir, std::size_t episodes,
                 std::uint64_t seed, std::size_t threads = 1);

/// Episodes from the manifest after checksum and schema validation, plus a
/// compatibility check against the configured cameras and action space.
struct Dataset {
  Manifest manifest;
  std::vector<Episode> episodes;
};
Dataset load_dataset(const std::filesystem::path& dir, const RunConfig& config);

/// Per-step observations of every episode, in episode order.
struct ObservationSet {
  std::vector<Observation> observations;
  std::vector<std::vector<std::size_t>> index;  // [episode][step] -> observation
};
ObservationSet build_observations(const Dataset& data, const RunConfig& config,
                                  bool keep_frames);

/// Every camera of every observation.
std::vector<FrameRef> all_frames(const ObservationSet& set);

struct ReprRunResult {
  std::vector<CurvePoint> curve;
  double psnr = 0.0;  // over up to `psnr_frames` training frames
};
ReprRunResult run_train_repr(const RunConfig& config, const RunPaths& paths, std::uint64_t seed,
                             std::size_t psnr_frames = 16);

struct DynCurvePoint {
  std::uint64_t step = 0;
  double loss = 0.0;
  double embedding = 0.0;
  double reward = 0.0;
  double kl = 0.0;
};

/// Goal observations and their embeddings under a representation model.
struct GoalBank {
  std::vector<env::GoalSpec> goals;
  std::vector<ad::Tensor> embeddings;  // [1, E] each

  std::size_t find(const std::string& name) const;
};
GoalBank make_goal_bank(const std::vector<std::string>& names, const RepresentationModel& repr,
                        const RunConfig& config);

/// Trains the RSSM on frozen embeddings. Embeddings are recomputed from the
/// representation checkpoint every `refresh_every` epochs when the file has
/// changed. Throws if the encoder weights differ after training.
std::vector<DynCurvePoint> train_dynamics(const RunConfig& config, const Dataset& data,
                                          const std::filesystem::path& repr_checkpoint,
                                          DynamicsModel& dynamics, std::uint64_t seed,
                                          const TrainingHooks& hooks = {});

/// Embeddings and incoming actions of one episode, [1, E] and [1, A] per
/// step; actions[0] is zero.
struct EmbeddedEpisode {
  std::vector<ad::Tensor> embeddings;
  std::vector<ad::Tensor> actions;
};

struct DynDiagnostics {
  double one_step_mse = 0.0;        // prior one-step prediction, mean over dims and steps t >= 1
  double embedding_variance = 0.0;  // per-dimension variance, averaged over dims
  double kl = 0.0;                  // KL(posterior || prior) summed over categoricals, mean over steps
};

/// Filters each episode with mode posteriors; at every step t >= 1 the prior
/// from step t - 1 and the action predicts e_t.
DynDiagnostics evaluate_dynamics(const rssm::Rssm& model, const std::vector<EmbeddedEpisode>& episodes);

std::vector<EmbeddedEpisode> embed_episodes(const Dataset& data, const ObservationSet& set,
                                            const RepresentationModel& repr);

std::vector<DynCurvePoint> run_train_dyn(const RunConfig& config, const RunPaths& paths,
                                         std::uint64_t seed);

/// Trained models loaded from a run directory.
struct Models {
  std::unique_ptr<RepresentationModel> repr;
  std::unique_ptr<DynamicsModel> dynamics;
};
Models load_models(const RunConfig& config, const RunPaths& paths);

/// Closed-loop agent driving the toy environment with the learned models.
class LearnedAgent : public plan::MpcAgent {
 public:
  LearnedAgent(const RunConfig& config, const Models& models, env::GoalSpec goal,
               ad::Tensor goal_embedding, std::size_t horizon);

  std::unique_ptr<plan::TrajectoryModel> observe_and_model() override;
  double current_predicted_reward() override;
  double execute(const std::vector<double>& action) override;
  double current_cost() override;

  env::ToyEnv& environment() { return env_; }
  /// Frames, particles and costs of every visited state, for recording.
  const std::vector<std::vector<geom::RgbdImage>>& visited_frames() const { return frames_; }
  const std::vector<geom::Points>& visited_particles() const { return particles_; }
  const std::vector<double>& visited_costs() const { return costs_; }

 private:
  void record_state();

  const RunConfig& config_;
  const Models& models_;
  env::ToyEnv env_;
  env::GoalSpec goal_;
  ad::Tensor goal_embedding_;
  std::size_t horizon_;
  costs::CostKind cost_;
  std::vector<ad::Tensor> embeddings_;
  std::vector<ad::Tensor> actions_;
  ad::Tensor pending_action_;
  rssm::RssmState state_;
  std::vector<std::vector<geom::RgbdImage>> frames_;
  std::vector<geom::Points> particles_;
  std::vector<double> costs_;
};

struct TrialRecord {
  std::string goal;
  std::string policy;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> actions;
  std::vector<double> costs;  // training cost after each step, costs[0] initial
  double final_cd = 0.0;
  double final_emd = 0.0;
  double final_siou = 0.0;  // IoU, 1 at the goal
  double final_d2cd = 0.0;  // NaN unless the goal is a region
  Episode episode;          // filled when recording is requested
};

/// Metrics of a final particle set against a goal.
void final_metrics(const geom::Points& particles, const env::GoalSpec& goal,
                   const env::EnvConfig& env, TrialRecord& record);

/// One closed-loop episode of `steps` MPC steps from the rest blob. The
/// planner draws from `rng`.
TrialRecord run_planner_trial(const RunConfig& config, const Models& models, const GoalBank& bank,
                              const std::string& goal, std::size_t steps, Rng& rng,
                              bool record_episode);
/// Uniform random actions for `steps` steps, no early stop.
TrialRecord run_random_trial(const RunConfig& config, const GoalBank& bank, const std::string& goal,
                             std::size_t steps, Rng& rng);

struct EvalSummaryRow {
  std::string goal;
  std::string policy;
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

struct EvalResult {
  std::vector<TrialRecord> trials;
  std::vector<EvalSummaryRow> summary;
};

/// Runs every (goal, policy, trial) and writes metrics.csv, summary.csv,
/// summary.txt, per-trial logs and final frames into `out`.
/// Trials run on up to `threads` workers; every trial has its own RNG stream
/// so the outputs do not depend on the thread count.
EvalResult evaluate(const RunConfig& config, const RunPaths& paths, const std::filesystem::path& out,
                    std::uint64_t seed, std::size_t threads = 1);

/// Planner-driven episodes appended to the dataset with provenance
/// "planned". A failing episode is logged and skipped.
Manifest augment(const RunConfig& config, const RunPaths& paths, std::size_t episodes,
                 std::uint64_t seed);

}  // namespace deformnet::harness
