#include "deformnet/env/toy_env.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "deformnet/autodiff/rng.hpp"
#include "deformnet/geometry/nn_index.hpp"
#include "deformnet/geometry/voxel.hpp"

namespace deformnet::env {

namespace {

using Eigen::Vector2d;
using Eigen::Vector3d;

double box_distance(const Vector3d& p, const geom::Aabb& box) {
  const Vector3d q = (box.lo - p).cwiseMax(p - box.hi).cwiseMax(Vector3d::Zero());
  return q.norm();
}

void clamp_all(Points& pts, const geom::Aabb& box) {
  for (auto& p : pts) p = box.clamp(p);
}

// xy displacement of a push contact; zero when the particle is not touched.
Vector2d push_displacement(const Vector3d& q3, const Vector2d& p0, const Vector2d& p1,
                           const EnvConfig& cfg) {
  if (q3.z() < cfg.pusher_height) return Vector2d::Zero();
  const Vector2d q = q3.head<2>();
  const Vector2d seg = p1 - p0;
  const double len = seg.norm();
  const Vector2d u = len > 1e-12 ? Vector2d(seg / len) : Vector2d(1.0, 0.0);
  const Vector2d n(-u.y(), u.x());
  const double s = (q - p0).dot(u);
  const double sc = std::clamp(s, 0.0, len);
  const Vector2d closest = p0 + sc * u;
  const Vector2d w = q - closest;
  const double r = cfg.pusher_radius;
  if (w.squaredNorm() >= r * r) return Vector2d::Zero();
  Vector2d target;
  if (s >= 0.0 && s <= len) {
    const double l = w.dot(n);
    const double side = l < 0.0 ? -1.0 : 1.0;
    target = p0 + (s + cfg.along_sweep * (len - s)) * u + side * r * n;
  } else {
    const double wn = w.norm();
    target = closest + (wn > 0.0 ? Vector2d(w / wn) : n) * r;
  }
  return cfg.plasticity * (target - q);
}

Vector3d pinch_displacement(const Vector3d& q, const std::vector<double>& a, const EnvConfig& cfg) {
  const Vector3d c(a[0], a[1], a[2]);
  const Vector3d n(std::cos(a[3]), std::sin(a[3]), 0.0);
  const Vector3d t(-n.y(), n.x(), 0.0);
  const double half_gap = 0.5 * a[4];
  const Vector3d d = q - c;
  if (std::abs(d.dot(t)) > 0.5 * cfg.finger_width) return Vector3d::Zero();
  if (std::abs(d.z()) > 0.5 * cfg.finger_height) return Vector3d::Zero();
  const double s = d.dot(n);
  if (std::abs(s) >= half_gap) return Vector3d::Zero();
  const double side = s < 0.0 ? -1.0 : 1.0;
  return cfg.plasticity * (side * half_gap - s) * n;
}

}  // namespace

ActionMode parse_action_mode(const std::string& name) {
  if (name == "push") return ActionMode::kPush;
  if (name == "pinch") return ActionMode::kPinch;
  throw std::invalid_argument("unknown action mode '" + name + "' (expected push or pinch)");
}

std::string to_string(ActionMode mode) { return mode == ActionMode::kPush ? "push" : "pinch"; }

void EnvConfig::validate() const {
  if (particle_count == 0 || particle_count % 4 != 0) {
    throw std::invalid_argument("env: particle count must be a positive multiple of 4");
  }
  if (!((workspace.hi - workspace.lo).array() > 0.0).all()) throw std::invalid_argument("env: empty workspace");
  if (!(blob_radius > 0.0) || !(blob_height > 0.0)) throw std::invalid_argument("env: blob size must be positive");
  if (plasticity < 0.0 || plasticity > 1.0) throw std::invalid_argument("env: plasticity must be in [0,1]");
  if (cohesion < 0.0 || cohesion > 1.0) throw std::invalid_argument("env: cohesion must be in [0,1]");
  if (!(pusher_radius > 0.0)) throw std::invalid_argument("env: pusher radius must be positive");
  if (along_sweep < 0.0 || along_sweep > 1.0) throw std::invalid_argument("env: along_sweep must be in [0,1]");
  if (rig.count < 1) throw std::invalid_argument("env: need at least one camera");
  if (!(splat_radius > 0.0)) throw std::invalid_argument("env: splat radius must be positive");
  if (std::abs(light_direction.norm() - 1.0) > 1e-6) throw std::invalid_argument("env: light direction must be unit length");
}

plan::ActionBounds EnvConfig::action_bounds() const {
  const Vector3d& lo = workspace.lo;
  const Vector3d& hi = workspace.hi;
  if (mode == ActionMode::kPush) return {{lo.x(), lo.y(), lo.x(), lo.y()}, {hi.x(), hi.y(), hi.x(), hi.y()}};
  return {{lo.x(), lo.y(), lo.z(), -std::numbers::pi, 0.0},
          {hi.x(), hi.y(), hi.z(), std::numbers::pi, max_finger_gap}};
}

BlobState initial_state(const EnvConfig& config) {
  config.validate();
  // Best-candidate sampling of one quadrant of the puck; candidates are
  // scored against every placed point and its three mirror images.
  Rng rng(config.blob_seed);
  const std::size_t quarter = config.particle_count / 4;
  const double r = config.blob_radius, h = config.blob_height;
  Points placed;
  auto images = [](const Vector3d& p) {
    return std::array<Vector3d, 4>{p, Vector3d(-p.x(), p.y(), p.z()), Vector3d(p.x(), -p.y(), p.z()),
                                   Vector3d(-p.x(), -p.y(), p.z())};
  };
  for (std::size_t i = 0; i < quarter; ++i) {
    Vector3d best;
    double best_score = -1.0;
    for (int c = 0; c < 32; ++c) {
      const double rad = r * std::sqrt(rng.uniform(0.0, 1.0));
      const double ang = rng.uniform(0.0, 0.5 * std::numbers::pi);
      const Vector3d cand(rad * std::cos(ang), rad * std::sin(ang), rng.uniform(0.0, h));
      // Distance to its own mirror images keeps points off the symmetry planes.
      double score = std::min(2.0 * cand.x(), 2.0 * cand.y());
      for (const auto& p : placed) {
        for (const auto& m : images(p)) score = std::min(score, (m - cand).norm());
      }
      if (score > best_score) {
        best_score = score;
        best = cand;
      }
    }
    placed.push_back(best);
  }
  BlobState state;
  for (const auto& p : placed) {
    for (const auto& m : images(p)) state.particles.push_back(config.workspace.clamp(m));
  }
  return state;
}

std::vector<std::size_t> mirror_x_permutation(std::size_t count) {
  std::vector<std::size_t> perm(count);
  for (std::size_t i = 0; i < count; ++i) perm[i] = i ^ 1u;
  return perm;
}

double volume_proxy(const Points& particles) {
  if (particles.empty()) return 0.0;
  Vector3d lo = particles[0], hi = particles[0];
  for (const auto& p : particles) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).prod();
}

BlobState env_step(const BlobState& state, const std::vector<double>& action, const EnvConfig& config) {
  if (action.size() != config.action_dim()) {
    throw std::invalid_argument("env_step: expected " + std::to_string(config.action_dim()) +
                                " action values, got " + std::to_string(action.size()));
  }
  const auto bounds = config.action_bounds();
  if (!bounds.contains(action)) throw std::invalid_argument("env_step: action outside bounds");
  const Points& x = state.particles;
  const std::size_t n = x.size();

  std::vector<Vector3d> delta(n, Vector3d::Zero());
  bool touched = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (config.mode == ActionMode::kPush) {
      const Vector2d d = push_displacement(x[i], {action[0], action[1]}, {action[2], action[3]}, config);
      delta[i] = Vector3d(d.x(), d.y(), 0.0);
    } else {
      delta[i] = pinch_displacement(x[i], action, config);
    }
    touched = touched || !delta[i].isZero(0.0);
  }
  BlobState next{x, state.step + 1};
  if (!touched) return next;

  // Cohesion: each displacement relaxes toward the mean displacement of its
  // rest-position neighbors, dragging untouched neighbors along.
  if (config.cohesion > 0.0 && n > 1) {
    const geom::NNIndex index(x);
    const std::size_t k = std::min(config.cohesion_k, n - 1);
    std::vector<Vector3d> relaxed(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vector3d mean = Vector3d::Zero();
      std::size_t used = 0;
      for (const auto& hit : index.k_nearest(x[i], k + 1)) {
        if (hit.index == i) continue;
        if (used == k) break;
        mean += delta[hit.index];
        ++used;
      }
      if (used > 0) mean /= static_cast<double>(used);
      relaxed[i] = (1.0 - config.cohesion) * delta[i] + config.cohesion * mean;
    }
    delta = std::move(relaxed);
  }

  // Scale back the step until the volume proxy changes by less than half.
  const double v0 = volume_proxy(x);
  double scale = 1.0;
  for (int attempt = 0; attempt < 40; ++attempt) {
    for (std::size_t i = 0; i < n; ++i) next.particles[i] = x[i] + scale * delta[i];
    clamp_all(next.particles, config.workspace);
    if (v0 <= 0.0) break;
    const double ratio = volume_proxy(next.particles) / v0;
    if (ratio > 0.5 && ratio < 1.5) break;
    scale *= 0.5;
  }
  return next;
}

namespace {

// Outward direction of the material around each particle: away from the
// centroid of its neighbours, then averaged over the same neighbourhood.
std::vector<Vector3d> surface_normals(const Points& particles) {
  const std::size_t n = particles.size();
  if (n == 0) return {};
  constexpr std::size_t kNeighbours = 16;
  const geom::NNIndex index(particles);
  std::vector<std::vector<geom::NNIndex::Hit>> hoods(n);
  std::vector<Vector3d> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    hoods[i] = index.k_nearest(particles[i], std::min(kNeighbours + 1, n));
    Vector3d mean = Vector3d::Zero();
    for (const auto& h : hoods[i]) mean += particles[h.index];
    mean /= static_cast<double>(hoods[i].size());
    const Vector3d d = particles[i] - mean;
    raw[i] = d.norm() > 1e-12 ? Vector3d(d.normalized()) : Vector3d::UnitZ();
  }
  std::vector<Vector3d> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector3d sum = Vector3d::Zero();
    for (const auto& h : hoods[i]) sum += raw[h.index];
    out[i] = sum.norm() > 1e-12 ? Vector3d(sum.normalized()) : Vector3d::UnitZ();
  }
  return out;
}

}  // namespace

std::vector<geom::RgbdImage> render_observation(const Points& particles,
                                                const std::vector<geom::Camera>& cameras,
                                                const EnvConfig& config) {
  const std::vector<Vector3d> normals = surface_normals(particles);
  std::vector<geom::RgbdImage> frames;
  for (const auto& cam : cameras) {
    cam.validate();
    geom::RgbdImage img(cam.width, cam.height);
    std::vector<double> zbuf(img.pixel_count(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < particles.size(); ++i) {
      const Vector3d c = cam.world_to_camera(particles[i]);
      const double diffuse = std::max(0.0, normals[i].dot(config.light_direction));
      const Vector3d color =
          (config.albedo * (config.ambient + (1.0 - config.ambient) * diffuse)).cwiseMin(Vector3d::Ones());
      if (c.z() < cam.near || c.z() > cam.far) continue;
      const double u = cam.fx * c.x() / c.z() + cam.cx;
      const double v = cam.fy * c.y() / c.z() + cam.cy;
      const double ru = cam.fx * config.splat_radius / c.z();
      const double rv = cam.fy * config.splat_radius / c.z();
      const int x0 = std::max(0, static_cast<int>(std::ceil(u - ru)));
      const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(u + ru)));
      const int y0 = std::max(0, static_cast<int>(std::ceil(v - rv)));
      const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(v + rv)));
      for (int py = y0; py <= y1; ++py) {
        for (int px = x0; px <= x1; ++px) {
          const double du = (px - u) / ru, dv = (py - v) / rv;
          const double rho2 = du * du + dv * dv;
          if (rho2 > 1.0) continue;
          const std::size_t k = static_cast<std::size_t>(py) * cam.width + px;
          if (!(c.z() < zbuf[k])) continue;
          zbuf[k] = c.z();
          img.set_rgb(px, py, color);
          img.depth(px, py) = static_cast<float>(c.z());
        }
      }
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

void GoalSpec::validate() const {
  if (particles.has_value() == region.has_value()) {
    throw std::invalid_argument("goal '" + name + "': exactly one of particles or region must be set");
  }
  if (particles && particles->empty()) throw std::invalid_argument("goal '" + name + "': no particles");
}

std::vector<std::string> goal_names() { return {"dent", "split", "L-shape"}; }

GoalSpec goal_from_particles(std::string name, Points particles, const EnvConfig& config) {
  GoalSpec g;
  g.name = std::move(name);
  g.display = particles;
  g.particles = std::move(particles);
  g.images = render_observation(g.display, config.cameras(), config);
  g.validate();
  return g;
}

GoalSpec make_goal(const std::string& name, const EnvConfig& config) {
  const Points rest = initial_state(config).particles;
  const double r = config.blob_radius;
  if (name == "dent") {
    // Material inside a sphere centered on the +x rim at mid height is
    // pressed out horizontally to the sphere surface; particle count is kept.
    const Vector3d center(r, 0.0, 0.5 * config.blob_height);
    const double cavity = 0.625 * r;
    Points moved = rest;
    for (auto& p : moved) {
      const double dz = p.z() - center.z();
      if ((p - center).norm() >= cavity) continue;
      const double ring = std::sqrt(cavity * cavity - dz * dz);
      Vector2d d = p.head<2>() - center.head<2>();
      d = d.norm() > 0.0 ? Vector2d(d.normalized()) : Vector2d(-1.0, 0.0);
      p.head<2>() = center.head<2>() + ring * d;
      p = config.workspace.clamp(p);
    }
    return goal_from_particles(name, std::move(moved), config);
  }
  if (name == "split") {
    // A band across the middle is cleared by pressing its material out to
    // the band edges, leaving two halves.
    const double half_band = 0.625 * r;
    Points moved = rest;
    for (auto& p : moved) {
      if (std::abs(p.x()) < half_band) p.x() = p.x() < 0.0 ? -half_band : half_band;
    }
    return goal_from_particles(name, std::move(moved), config);
  }
  if (name == "L-shape") {
    const double h = config.blob_height;
    const geom::Aabb bar{Vector3d(-1.25 * r, -1.25 * r, 0.0), Vector3d(1.25 * r, -0.25 * r, h)};
    const geom::Aabb post{Vector3d(-1.25 * r, -1.25 * r, 0.0), Vector3d(-0.25 * r, 1.25 * r, h)};
    GoalSpec g;
    g.name = name;
    g.region = costs::ContinuousTarget::from_sdf(
        [bar, post](const Vector3d& p) { return std::min(box_distance(p, bar), box_distance(p, post)); },
        "L-shape");
    // Display samples: a regular lattice over the region.
    const double step = 0.006;
    for (double x = bar.lo.x() + 0.5 * step; x < bar.hi.x(); x += step) {
      for (double y = bar.lo.y() + 0.5 * step; y < post.hi.y(); y += step) {
        for (double z = 0.5 * step; z < h; z += step) {
          const Vector3d p(x, y, z);
          if (bar.contains(p) || post.contains(p)) g.display.push_back(p);
        }
      }
    }
    g.images = render_observation(g.display, config.cameras(), config);
    g.validate();
    return g;
  }
  std::string list;
  for (const auto& n : goal_names()) list += (list.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown goal '" + name + "'; available: " + list);
}

std::vector<std::vector<double>> scripted_actions(const std::string& goal, const EnvConfig& config) {
  if (config.mode != ActionMode::kPush) throw std::invalid_argument("scripted actions exist for push mode only");
  const double r = config.blob_radius;
  if (goal == "dent") return {{0.1, 0.0, r, 0.0}};
  if (goal == "split") return {{0.0, -0.1, 0.0, 0.1}, {0.0, 0.1, 0.0, -0.1}};
  if (goal == "L-shape") return {{0.1, 0.1, 0.3 * r, 0.3 * r}, {0.1, 0.3 * r, 0.3 * r, 0.3 * r}};
  throw std::invalid_argument("no scripted actions for goal '" + goal + "'");
}

double goal_cost(const Points& particles, const GoalSpec& goal, costs::CostKind kind,
                 const EnvConfig& config) {
  const Points& target = goal.particles ? *goal.particles : goal.display;
  switch (kind) {
    case costs::CostKind::kChamfer:
      return costs::chamfer(particles, target);
    case costs::CostKind::kEmd:
      return costs::emd(particles, target);
    case costs::CostKind::kSoftIou: {
      const auto grid = geom::grid_over_box(config.workspace, 32);
      return 1.0 - costs::soft_iou(particles, target, grid);
    }
    case costs::CostKind::kD2cd:
      if (goal.region) return costs::d2cd(particles, *goal.region);
      return costs::d2cd(particles, costs::ContinuousTarget::from_samples(target));
  }
  throw std::logic_error("goal_cost: unhandled cost kind");
}

ToyEnv::ToyEnv(EnvConfig config) : config_(std::move(config)) {
  config_.validate();
  cameras_ = config_.cameras();
  state_ = initial_state(config_);
}

const BlobState& ToyEnv::reset(std::uint64_t) {
  state_ = initial_state(config_);
  return state_;
}

const BlobState& ToyEnv::step(const std::vector<double>& action) {
  state_ = env_step(state_, action, config_);
  return state_;
}

std::vector<geom::RgbdImage> ToyEnv::observe() const {
  return render_observation(state_.particles, cameras_, config_);
}

}  // namespace deformnet::env
