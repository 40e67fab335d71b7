#include "deformnet/autodiff/mlp.hpp"

#include <stdexcept>

#include "deformnet/autodiff/ops.hpp"

namespace deformnet::ad {

Tensor activate(const Tensor& x, Activation activation) {
  switch (activation) {
    case Activation::kRelu: return relu(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kNone: return x;
  }
  return x;
}

Mlp Mlp::create(ParameterSet& params, const std::string& prefix,
                const std::vector<std::size_t>& widths, Rng& rng, Activation activation) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp '" + prefix + "': need in and out widths");
  Mlp mlp;
  mlp.activation = activation;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    mlp.layers.push_back(Linear::create(params, prefix + "/l" + std::to_string(l), widths[l],
                                        widths[l + 1], rng));
  }
  return mlp;
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = layers[l](h);
    if (l + 1 < layers.size()) h = activate(h, activation);
  }
  return h;
}

}  // namespace deformnet::ad
