#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "deformnet/autodiff/ops.hpp"
#include "deformnet/autodiff/tensor.hpp"

namespace deformnet::ad {

using NamedTensor = std::pair<std::string, Tensor>;

/// Ordered, named collection of learnable leaves. Insertion order is the
/// serialization order.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor value);

  bool contains(const std::string& name) const;
  Tensor get(const std::string& name) const;
  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t value_count() const;

  void zero_grad();
  void set_requires_grad(bool flag);

  // Copies values for every entry by name; shapes must match.
  void load(const std::vector<NamedTensor>& source, bool require_all = true);
  std::vector<NamedTensor> snapshot() const;  // deep copy, no grads

  // 64-bit FNV-1a over names, shapes and raw value bytes.
  std::uint64_t fingerprint() const;

 private:
  std::vector<NamedTensor> entries_;
};

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)

  // Glorot-uniform weights, zero bias.
  static Linear create(ParameterSet& params, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_grad_norm = 0.0;  // global L2 clip, 0 disables
};

/// Adam over a fixed parameter list. Moment buffers live here and persist
/// across step() calls.
class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig config);

  // Throws std::runtime_error naming every parameter that has no gradient.
  void step();
  void zero_grad();

  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

  // Optimizer state as named tensors ("optim/m/<p>", "optim/v/<p>",
  // "optim/step") for checkpointing.
  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& state);

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig config_;
  std::uint64_t step_ = 0;
};

// Checkpoint file: "DFNW", u32 version, u64 entry count, then per entry
// u32 name length, name bytes, u32 rank, u64 dims, little-endian f64 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::vector<NamedTensor> with_prefix(const std::vector<NamedTensor>& tensors,
                                     const std::string& prefix);

}  // namespace deformnet::ad
