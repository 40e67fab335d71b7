#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "deformnet/autodiff/rng.hpp"

namespace deformnet::plan {

/// An action sequence of horizon H over A dims, stored time-major (H * A).
using Sequence = std::vector<double>;

struct ActionBounds {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t dims() const { return lo.size(); }
  void validate() const;
  /// Componentwise clamp of a time-major sequence.
  void clip(Sequence& seq) const;
  bool contains(const Sequence& seq) const;
};

/// Scores action sequences. Returns are to be maximized.
class TrajectoryModel {
 public:
  virtual ~TrajectoryModel() = default;
  virtual std::size_t horizon() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual std::vector<double> evaluate(const std::vector<Sequence>& sequences) = 0;
  virtual bool differentiable() const { return false; }
  /// Returns and d(return)/d(sequence) for each sequence.
  virtual std::vector<double> evaluate_with_gradient(const std::vector<Sequence>& sequences,
                                                     std::vector<Sequence>& gradients);
};

struct PlannerConfig {
  std::size_t population = 64;
  std::size_t elites = 10;
  std::size_t iterations = 10;
  double noise_beta = 2.0;
  double population_decay = 1.25;
  double elite_keep = 0.3;
  bool shift_init = true;
  std::size_t gradient_steps = 3;
  double gradient_step_size = 0.05;
  std::size_t refine_count = 0;  // 0 means `elites`
  std::size_t max_halvings = 5;
  double initial_std = 0.5;      // fraction of the half range of each bound
  double min_std = 1e-6;

  void validate() const;
};

struct IterationStats {
  std::size_t iteration = 0;
  std::size_t population = 0;
  double best_return = 0.0;  // best-ever after this iteration
  double mean_return = 0.0;  // over the evaluated population
  double std_norm = 0.0;     // L2 norm of the refit stddev
};

struct PlanResult {
  Sequence best;
  double best_return = -std::numeric_limits<double>::infinity();
  std::vector<IterationStats> iterations;
};

/// Power-law noise with spectrum ~ 1/f^beta along time, unit variance in
/// expectation. Returns count sequences of H * dims values (time-major),
/// independent across dims.
std::vector<Sequence> sample_colored_noise(double beta, std::size_t horizon, std::size_t dims,
                                           std::size_t count, Rng& rng);

/// One colored-noise series of length `horizon`.
std::vector<double> powerlaw_series(double beta, std::size_t horizon, Rng& rng);

/// mean + std * noise, clipped to bounds.
std::vector<Sequence> sample_sequences(const Sequence& mean, const Sequence& std, double beta,
                                       std::size_t count, const ActionBounds& bounds, Rng& rng);

struct RefineResult {
  std::vector<Sequence> sequences;
  std::vector<double> returns;
  std::size_t skipped = 0;  // candidates dropped for non-finite gradients
};

/// Projected gradient ascent with backtracking: every accepted step must not
/// lower the candidate's return; a rejected step is halved up to
/// `max_halvings` times before the candidate stops moving.
RefineResult gradient_refine(const std::vector<Sequence>& candidates, TrajectoryModel& model,
                             const ActionBounds& bounds, std::size_t steps, double step_size,
                             std::size_t max_halvings = 5);

class IcemPlanner {
 public:
  explicit IcemPlanner(PlannerConfig config);

  const PlannerConfig& config() const { return config_; }

  PlanResult plan(TrajectoryModel& model, const ActionBounds& bounds, Rng& rng);

  /// Forgets the previous solution used for shift initialization.
  void reset();

 private:
  PlannerConfig config_;
  std::optional<Sequence> previous_mean_;
  std::vector<Sequence> previous_elites_;
};

/// Closed-loop control glue. Implementations own the environment and the
/// model state; the loop only sequences calls.
class MpcAgent {
 public:
  virtual ~MpcAgent() = default;
  /// Observe the current state (updating any filtered belief) and return a
  /// model that scores action sequences from here.
  virtual std::unique_ptr<TrajectoryModel> observe_and_model() = 0;
  /// Predicted reward of the current state, compared against the threshold.
  virtual double current_predicted_reward() = 0;
  /// Apply one action in the environment; returns the true cost afterwards.
  virtual double execute(const std::vector<double>& action) = 0;
  /// True cost of the current state.
  virtual double current_cost() = 0;
};

struct MpcConfig {
  std::size_t max_steps = 10;
  double threshold = std::numeric_limits<double>::infinity();
};

struct MpcStepLog {
  std::size_t step = 0;
  std::vector<double> action;
  double planned_return = 0.0;
  double predicted_reward = 0.0;  // of the state the plan started from
  double cost_after = 0.0;
};

struct MpcResult {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<MpcStepLog> steps;
  bool stopped_by_threshold = false;
};

MpcResult mpc_loop(MpcAgent& agent, IcemPlanner& planner, const ActionBounds& bounds,
                   const MpcConfig& config, Rng& rng,
                   const std::function<void(const MpcStepLog&)>& on_step = {});

}  // namespace deformnet::plan
