#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace deformnet {

/// xoshiro256** with splitmix64 seeding. All randomness in the project is
/// threaded through explicit instances of this generator; nothing reads a
/// global RNG. Distribution helpers are implemented here rather than via
/// <random> distributions so that streams are identical across standard
/// library implementations.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream keyed by (seed, stream). Used to give every training
  /// step, episode, or trial its own reproducible generator.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  double uniform();                         // [0, 1)
  double uniform(double lo, double hi);     // [lo, hi)
  double normal();                          // standard normal (Box-Muller)
  double normal(double mean, double stddev);
  std::uint64_t below(std::uint64_t bound);  // [0, bound), unbiased

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace deformnet
