#pragma once

#include <string>
#include <vector>

#include "deformnet/autodiff/params.hpp"

namespace deformnet::ad {

enum class Activation { kNone, kRelu, kTanh };

/// Stack of Linear layers with the activation between layers and none after
/// the last. Layer l is registered as "<prefix>/l<l>/weight" and ".../bias".
struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::kRelu;

  /// widths = {in, hidden..., out}; needs at least two entries.
  static Mlp create(ParameterSet& params, const std::string& prefix,
                    const std::vector<std::size_t>& widths, Rng& rng,
                    Activation activation = Activation::kRelu);

  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return layers.front().in_features(); }
  std::size_t out_features() const { return layers.back().out_features(); }
};

Tensor activate(const Tensor& x, Activation activation);

}  // namespace deformnet::ad
