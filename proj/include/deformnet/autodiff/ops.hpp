#pragma once

#include <cstddef>
#include <vector>

#include "deformnet/autodiff/rng.hpp"
#include "deformnet/autodiff/tensor.hpp"

namespace deformnet::ad {

// Binary elementwise ops broadcast by the trailing-dimension rule.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }

// (m,k) x (k,n) -> (m,n)
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
// max(x, c) with the gradient routed to x where x > c.
Tensor clamp_min(const Tensor& x, double c);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
// Gradient goes to the first maximal element along the axis.
Tensor max(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor cumsum(const Tensor& x, std::size_t axis);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
// Selects rows (entries along axis 0); repeated indices accumulate gradient.
Tensor gather(const Tensor& x, const std::vector<std::size_t>& indices);

// Along the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

/// One-hot sample from each row of `logits` (shape: categoricals x classes).
/// The forward value is the hard sample; the backward pass uses the gradient
/// of softmax(logits).
Tensor straight_through_sample(const Tensor& logits, Rng& rng);

/// One-hot of each row's argmax (first on ties). Constant: no gradient.
Tensor argmax_one_hot(const Tensor& logits);

}  // namespace deformnet::ad
