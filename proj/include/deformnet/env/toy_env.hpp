#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "deformnet/costs/costs.hpp"
#include "deformnet/geometry/camera.hpp"
#include "deformnet/geometry/types.hpp"
#include "deformnet/planner/planner.hpp"

namespace deformnet::env {

using geom::Points;

enum class ActionMode {
  kPush,   // {x0, y0, x1, y1}
  kPinch,  // {x, y, z, r_z, d_g}
};

ActionMode parse_action_mode(const std::string& name);
std::string to_string(ActionMode mode);

struct EnvConfig {
  std::size_t particle_count = 256;  // multiple of 4 (the rest blob is mirror symmetric)
  geom::Aabb workspace{Eigen::Vector3d(-0.1, -0.1, 0.0), Eigen::Vector3d(0.1, 0.1, 0.1)};
  double blob_radius = 0.04;
  double blob_height = 0.02;
  std::uint64_t blob_seed = 7;  // layout of the rest blob, not episode randomness

  ActionMode mode = ActionMode::kPush;
  double pusher_radius = 0.025;
  double pusher_height = 0.0;  // bottom of the pusher; particles below it are not touched
  double along_sweep = 0.1;    // fraction of the remaining sweep a body contact is carried
  double finger_width = 0.04;
  double finger_height = 0.06;
  double max_finger_gap = 0.06;

  double plasticity = 1.0;  // rho
  double cohesion = 0.3;    // kappa
  std::size_t cohesion_k = 6;

  geom::RingRigConfig rig;
  double splat_radius = 0.005;  // world meters
  Eigen::Vector3d light_direction = Eigen::Vector3d(0.3, -0.4, 0.8660254037844386);  // toward the light
  Eigen::Vector3d albedo = Eigen::Vector3d(0.85, 0.55, 0.35);
  double ambient = 0.25;

  void validate() const;
  std::size_t action_dim() const { return mode == ActionMode::kPush ? 4 : 5; }
  plan::ActionBounds action_bounds() const;
  std::vector<geom::Camera> cameras() const { return geom::ring_rig(rig); }
};

struct BlobState {
  Points particles;
  std::size_t step = 0;
};

/// Deterministic rest blob: a flat puck on the table, symmetric under
/// x -> -x and y -> -y. Particles 4i..4i+3 are (x,y), (-x,y), (x,-y), (-x,-y).
BlobState initial_state(const EnvConfig& config);

/// Index permutation taking a rest-blob particle to its mirror image under x -> -x.
std::vector<std::size_t> mirror_x_permutation(std::size_t count);

/// Axis-aligned bounding-box volume.
double volume_proxy(const Points& particles);

/// One deterministic step. Out-of-bounds actions are rejected.
BlobState env_step(const BlobState& state, const std::vector<double>& action,
                   const EnvConfig& config);

/// Z-buffered disc splats with diffuse shading. Background pixels have depth
/// 0 and black color.
std::vector<geom::RgbdImage> render_observation(const Points& particles,
                                                const std::vector<geom::Camera>& cameras,
                                                const EnvConfig& config);

struct GoalSpec {
  std::string name;
  std::optional<Points> particles;               // set-cost goals
  std::optional<costs::ContinuousTarget> region; // D2CD goals
  Points display;  // what the goal images show (particles or region samples)
  std::vector<geom::RgbdImage> images;

  void validate() const;
  /// Default training cost for this goal.
  costs::CostKind default_cost() const {
    return region ? costs::CostKind::kD2cd : costs::CostKind::kChamfer;
  }
};

std::vector<std::string> goal_names();

/// "dent", "split" or "L-shape". Unknown names throw with the list of goals.
GoalSpec make_goal(const std::string& name, const EnvConfig& config);
GoalSpec goal_from_particles(std::string name, Points particles, const EnvConfig& config);

/// Push actions that take the rest blob close to the named goal.
std::vector<std::vector<double>> scripted_actions(const std::string& goal, const EnvConfig& config);

/// Cost of a particle set to a goal under `kind`. Soft IoU is reported as
/// 1 - IoU so that every kind is minimized.
double goal_cost(const Points& particles, const GoalSpec& goal, costs::CostKind kind,
                 const EnvConfig& config);

/// Harness contract: reset/step/observe around the pure functions above.
class ToyEnv {
 public:
  explicit ToyEnv(EnvConfig config);

  const EnvConfig& config() const { return config_; }
  const BlobState& state() const { return state_; }
  const std::vector<geom::Camera>& cameras() const { return cameras_; }

  /// The rest state is deterministic; the seed is accepted for interface symmetry.
  const BlobState& reset(std::uint64_t seed = 0);
  const BlobState& step(const std::vector<double>& action);
  std::vector<geom::RgbdImage> observe() const;
  void set_state(BlobState state) { state_ = std::move(state); }

 private:
  EnvConfig config_;
  std::vector<geom::Camera> cameras_;
  BlobState state_;
};

}  // namespace deformnet::env
