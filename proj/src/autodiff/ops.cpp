#include "deformnet/autodiff/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace deformnet::ad {

using detail::attach;
using detail::make_tensor;
using detail::needs_grad;

namespace {

// ---------------------------------------------------------------------------
// Broadcasting

enum class BroadcastKind { kSame, kAScalar, kBScalar, kASuffix, kBSuffix, kGeneral };

struct BroadcastPlan {
  Shape out;
  BroadcastKind kind = BroadcastKind::kGeneral;
  std::size_t na = 0;
  std::size_t nb = 0;
  std::vector<std::size_t> a_strides;  // per output axis, 0 where broadcast
  std::vector<std::size_t> b_strides;
};

Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + i, s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - small.size());
}

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - in.size();
  for (std::size_t k = in.size(); k-- > 0;) {
    strides[offset + k] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  plan.na = shape_numel(a);
  plan.nb = shape_numel(b);
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k + a.size() >= rank ? a[k + a.size() - rank] : 1;
    const std::size_t db = k + b.size() >= rank ? b[k + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast shapes " + shape_to_string(a) +
                       " and " + shape_to_string(b));
    }
    plan.out[k] = std::max(da, db);
  }
  const Shape sa = strip_leading_ones(a);
  const Shape sb = strip_leading_ones(b);
  const Shape so = strip_leading_ones(plan.out);
  if (a == b) {
    plan.kind = BroadcastKind::kSame;
  } else if (sa == so && sb.empty()) {
    plan.kind = BroadcastKind::kBScalar;
  } else if (sb == so && sa.empty()) {
    plan.kind = BroadcastKind::kAScalar;
  } else if (sa == so && is_suffix(sb, so)) {
    plan.kind = BroadcastKind::kBSuffix;
  } else if (sb == so && is_suffix(sa, so)) {
    plan.kind = BroadcastKind::kASuffix;
  } else {
    plan.kind = BroadcastKind::kGeneral;
  }
  plan.a_strides = broadcast_strides(a, plan.out);
  plan.b_strides = broadcast_strides(b, plan.out);
  return plan;
}

// Calls f(i, ia, ib) for every output element i.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t n = shape_numel(p.out);
  switch (p.kind) {
    case BroadcastKind::kSame:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    case BroadcastKind::kBScalar:
      for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
      return;
    case BroadcastKind::kAScalar:
      for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0}, i);
      return;
    case BroadcastKind::kBSuffix:
      for (std::size_t i = 0; i < n;) {
        for (std::size_t j = 0; j < p.nb; ++j, ++i) f(i, i, j);
      }
      return;
    case BroadcastKind::kASuffix:
      for (std::size_t i = 0; i < n;) {
        for (std::size_t j = 0; j < p.na; ++j, ++i) f(i, j, i);
      }
      return;
    case BroadcastKind::kGeneral: {
      const std::size_t rank = p.out.size();
      std::vector<std::size_t> idx(rank, 0);
      std::size_t ia = 0;
      std::size_t ib = 0;
      for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t ax = rank; ax-- > 0;) {
          ++idx[ax];
          ia += p.a_strides[ax];
          ib += p.b_strides[ax];
          if (idx[ax] < p.out[ax]) break;
          ia -= p.a_strides[ax] * p.out[ax];
          ib -= p.b_strides[ax] * p.out[ax];
          idx[ax] = 0;
        }
      }
      return;
    }
  }
}

template <class Fwd, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA dfa, DB dfb) {
  BroadcastPlan plan = plan_broadcast(op, a.shape(), b.shape());
  std::vector<double> out(shape_numel(plan.out));
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = fwd(av[ia], bv[ib]);
  });
  Tensor result = make_tensor(plan.out, std::move(out));
  if (needs_grad({&a, &b})) {
    TensorImpl* pa = a.impl().get();
    TensorImpl* pb = b.impl().get();
    attach(result, op, {a, b}, [pa, pb, plan = std::move(plan), dfa, dfb](TensorImpl& o) {
      const double* g = o.grad.data();
      const double* x = pa->values.data();
      const double* y = pb->values.data();
      if (pa->requires_grad) {
        double* ga = pa->ensure_grad().data();
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          ga[ia] += g[i] * dfa(x[ia], y[ib]);
        });
      }
      if (pb->requires_grad) {
        double* gb = pb->ensure_grad().data();
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          gb[ib] += g[i] * dfb(x[ia], y[ib]);
        });
      }
    });
  }
  return result;
}

// df receives (input, output).
template <class Fwd, class D>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, D df) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tensor result = make_tensor(x.shape(), std::move(out));
  if (needs_grad({&x})) {
    TensorImpl* px = x.impl().get();
    attach(result, op, {x}, [px, df](TensorImpl& o) {
      auto& gx = px->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * df(px->values[i], o.values[i]);
    });
  }
  return result;
}

double stable_softplus(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_to_string(shape));
  }
  AxisSplit s;
  for (std::size_t k = 0; k < axis; ++k) s.outer *= shape[k];
  s.len = shape[axis];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) s.inner *= shape[k];
  return s;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out.empty()) out.push_back(1);
  }
  return out;
}

// y = softmax rows; gx += y * (g - <g, y>)
void softmax_backward(const double* y, const double* g, double* gx, std::size_t rows,
                      std::size_t k) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* yr = y + r * k;
    const double* gr = g + r * k;
    double dot = 0.0;
    for (std::size_t c = 0; c < k; ++c) dot += gr[c] * yr[c];
    for (std::size_t c = 0; c < k; ++c) gx[r * k + c] += yr[c] * (gr[c] - dot);
  }
}

std::vector<double> softmax_rows(std::span<const double> x, std::size_t k) {
  std::vector<double> y(x.size());
  const std::size_t rows = x.size() / k;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * k;
    double* yr = y.data() + r * k;
    const double m = *std::max_element(xr, xr + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      yr[c] = std::exp(xr[c] - m);
      z += yr[c];
    }
    for (std::size_t c = 0; c < k; ++c) yr[c] /= z;
  }
  return y;
}

std::size_t last_dim(const char* op, const Tensor& x) {
  if (x.rank() == 0) throw ShapeError(std::string(op) + ": rank-0 input");
  return x.shape().back();
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(
      "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary(
      "mul_scalar", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()) + " do not conform");
  }
  const int m = static_cast<int>(a.dim(0));
  const int k = static_cast<int>(a.dim(1));
  const int n = static_cast<int>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a.values().data(), k,
              b.values().data(), n, 0.0, out.data(), n);
  Tensor result = make_tensor({a.dim(0), b.dim(1)}, std::move(out));
  if (needs_grad({&a, &b})) {
    TensorImpl* pa = a.impl().get();
    TensorImpl* pb = b.impl().get();
    attach(result, "matmul", {a, b}, [pa, pb, m, k, n](TensorImpl& o) {
      if (pa->requires_grad) {
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, k, n, 1.0, o.grad.data(), n,
                    pb->values.data(), n, 1.0, pa->ensure_grad().data(), k);
      }
      if (pb->requires_grad) {
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, n, m, 1.0, pa->values.data(), k,
                    o.grad.data(), n, 1.0, pb->ensure_grad().data(), n);
      }
    });
  }
  return result;
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor softplus(const Tensor& x) {
  return unary("softplus", x, stable_softplus, [](double v, double) { return stable_sigmoid(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor clamp_min(const Tensor& x, double c) {
  return unary(
      "clamp_min", x, [c](double v) { return v > c ? v : c; },
      [c](double v, double) { return v > c ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.values();
  double total = 0.0;
  for (double v : xv) total += v;
  Tensor result = make_tensor({1}, {total});
  if (needs_grad({&x})) {
    TensorImpl* px = x.impl().get();
    attach(result, "sum", {x}, [px](TensorImpl& o) {
      const double g = o.grad[0];
      for (double& v : px->ensure_grad()) v += g;
    });
  }
  return result;
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit s = split_axis("sum", x.shape(), axis);
  const auto xv = x.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      const double* row = xv.data() + (o * s.len + l) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t j = 0; j < s.inner; ++j) dst[j] += row[j];
    }
  }
  Tensor result = make_tensor(reduced_shape(x.shape(), axis, keepdim), std::move(out));
  if (needs_grad({&x})) {
    TensorImpl* px = x.impl().get();
    attach(result, "sum_axis", {x}, [px, s](TensorImpl& o) {
      auto& gx = px->ensure_grad();
      for (std::size_t oo = 0; oo < s.outer; ++oo) {
        const double* g = o.grad.data() + oo * s.inner;
        for (std::size_t l = 0; l < s.len; ++l) {
          double* dst = gx.data() + (oo * s.len + l) * s.inner;
          for (std::size_t j = 0; j < s.inner; ++j) dst[j] += g[j];
        }
      }
    });
  }
  return result;
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  const std::size_t len = x.dim(axis);
  return mul_scalar(sum(x, axis, keepdim), 1.0 / static_cast<double>(len));
}

Tensor max(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit s = split_axis("max", x.shape(), axis);
  const auto xv = x.values();
  std::vector<double> out(s.outer * s.inner, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(s.outer * s.inner, 0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      const double* row = xv.data() + (o * s.len + l) * s.inner;
      for (std::size_t j = 0; j < s.inner; ++j) {
        const std::size_t k = o * s.inner + j;
        if (l == 0 || row[j] > out[k]) {
          out[k] = row[j];
          arg[k] = l;
        }
      }
    }
  }
  Tensor result = make_tensor(reduced_shape(x.shape(), axis, keepdim), std::move(out));
  if (needs_grad({&x})) {
    TensorImpl* px = x.impl().get();
    attach(result, "max", {x}, [px, s, arg = std::move(arg)](TensorImpl& o) {
      auto& gx = px->ensure_grad();
      for (std::size_t oo = 0; oo < s.outer; ++oo) {
        for (std::size_t j = 0; j < s.inner; ++j) {
          const std::size_t k = oo * s.inner + j;
          gx[(oo * s.len + arg[k]) * s.inner + j] += o.grad[k];
        }
      }
    });
  }
  return result;
}

Tensor cumsum(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis("cumsum", x.shape(), axis);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t k = (o * s.len + l) * s.inner + j;
        acc += xv[k];
        out[k] = acc;
      }
    }
  }
  Tensor result = make_tensor(x.shape(), std::move(out));
  if (needs_grad({&x})) {
    TensorImpl* px = x.impl().get();
    attach(result, "cumsum", {x}, [px, s](TensorImpl& o) {
      auto& gx = px->ensure_grad();
      for (std::size_t oo = 0; oo < s.outer; ++oo) {
        for (std::size_t j = 0; j < s.inner; ++j) {
          double acc = 0.0;
          for (std::size_t l = s.len; l-- > 0;) {
            const std::size_t k = (oo * s.len + l) * s.inner + j;
            acc += o.grad[k];
            gx[k] += acc;
          }
        }
      }
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t k = 0; ok && k < s.size(); ++k) {
      if (k != axis && s[k] != first[k]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat: shapes " + shape_to_string(first) + " and " +
                       shape_to_string(s) + " differ outside axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit so = split_axis("concat", out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(axis) * so.inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < so.outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * so.len * so.inner + offset);
    }
    offset += chunk;
  }
  Tensor result = make_tensor(std::move(out_shape), std::move(out));
  if (needs_grad(parts)) {
    std::vector<TensorImpl*> raw;
    for (const Tensor& p : parts) raw.push_back(p.impl().get());
    attach(result, "concat", parts, [raw, offsets, so](TensorImpl& o) {
      const std::size_t row = so.len * so.inner;
      for (std::size_t p = 0; p < raw.size(); ++p) {
        if (!raw[p]->requires_grad) continue;
        auto& gp = raw[p]->ensure_grad();
        const std::size_t chunk = gp.size() / so.outer;
        for (std::size_t oo = 0; oo < so.outer; ++oo) {
          const double* src = o.grad.data() + oo * row + offsets[p];
          double* dst = gp.data() + oo * chunk;
          for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis("slice", x.shape(), axis);
  if (begin >= end || end > s.len) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for axis " + std::to_string(axis) + " of shape " +
                     shape_to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * s.inner;
  const auto xv = x.values();
  std::vector<double> out(s.outer * chunk);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + (o * s.len + begin) * s.inner, chunk, out.data() + o * chunk);
  }
  Tensor result = make_tensor(std::move(out_shape), std::move(out));
  if (needs_grad({&x})) {
    TensorImpl* px = x.impl().get();
    attach(result, "slice", {x}, [px, s, begin, chunk](TensorImpl& o) {
      auto& gx = px->ensure_grad();
      for (std::size_t oo = 0; oo < s.outer; ++oo) {
        double* dst = gx.data() + (oo * s.len + begin) * s.inner;
        const double* src = o.grad.data() + oo * chunk;
        for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                     shape_to_string(shape));
  }
  const auto xv = x.values();
  Tensor result = make_tensor(std::move(shape), std::vector<double>(xv.begin(), xv.end()));
  if (needs_grad({&x})) {
    TensorImpl* px = x.impl().get();
    attach(result, "reshape", {x}, [px](TensorImpl& o) { px->accumulate_grad(o.grad); });
  }
  return result;
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& indices) {
  if (x.rank() == 0 || indices.empty()) throw ShapeError("gather: empty input or index list");
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.numel() / rows;
  for (std::size_t idx : indices) {
    if (idx >= rows) {
      throw ShapeError("gather: index " + std::to_string(idx) + " out of range for shape " +
                       shape_to_string(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = indices.size();
  const auto xv = x.values();
  std::vector<double> out(indices.size() * width);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(xv.data() + indices[i] * width, width, out.data() + i * width);
  }
  Tensor result = make_tensor(std::move(out_shape), std::move(out));
  if (needs_grad({&x})) {
    TensorImpl* px = x.impl().get();
    attach(result, "gather", {x}, [px, indices, width](TensorImpl& o) {
      auto& gx = px->ensure_grad();
      for (std::size_t i = 0; i < indices.size(); ++i) {
        double* dst = gx.data() + indices[i] * width;
        const double* src = o.grad.data() + i * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    });
  }
  return result;
}

Tensor softmax(const Tensor& x) {
  const std::size_t k = last_dim("softmax", x);
  Tensor result = make_tensor(x.shape(), softmax_rows(x.values(), k));
  if (needs_grad({&x})) {
    TensorImpl* px = x.impl().get();
    attach(result, "softmax", {x}, [px, k](TensorImpl& o) {
      softmax_backward(o.values.data(), o.grad.data(), px->ensure_grad().data(),
                       o.values.size() / k, k);
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t k = last_dim("log_softmax", x);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  const std::size_t rows = xv.size() / k;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * k;
    const double m = *std::max_element(xr, xr + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(xr[c] - m);
    const double lse = m + std::log(z);
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] = xr[c] - lse;
  }
  Tensor result = make_tensor(x.shape(), std::move(out));
  if (needs_grad({&x})) {
    TensorImpl* px = x.impl().get();
    attach(result, "log_softmax", {x}, [px, k](TensorImpl& o) {
      auto& gx = px->ensure_grad();
      const std::size_t rows = o.values.size() / k;
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t c = 0; c < k; ++c) gsum += o.grad[r * k + c];
        for (std::size_t c = 0; c < k; ++c) {
          gx[r * k + c] += o.grad[r * k + c] - std::exp(o.values[r * k + c]) * gsum;
        }
      }
    });
  }
  return result;
}

Tensor straight_through_sample(const Tensor& logits, Rng& rng) {
  if (logits.rank() != 2) {
    throw ShapeError("straight_through_sample: expected (categoricals, classes), got " +
                     shape_to_string(logits.shape()));
  }
  const std::size_t k = logits.dim(1);
  const std::size_t rows = logits.dim(0);
  std::vector<double> probs = softmax_rows(logits.values(), k);
  std::vector<double> out(probs.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = k - 1;
    for (std::size_t c = 0; c < k; ++c) {
      acc += probs[r * k + c];
      if (u < acc) {
        pick = c;
        break;
      }
    }
    // Never pick a zero-probability class through the fallback.
    while (probs[r * k + pick] == 0.0 && pick > 0) --pick;
    out[r * k + pick] = 1.0;
  }
  Tensor result = make_tensor(logits.shape(), std::move(out));
  if (needs_grad({&logits})) {
    TensorImpl* px = logits.impl().get();
    attach(result, "straight_through_sample", {logits},
           [px, k, probs = std::move(probs)](TensorImpl& o) {
             softmax_backward(probs.data(), o.grad.data(), px->ensure_grad().data(),
                              probs.size() / k, k);
           });
  }
  return result;
}

Tensor argmax_one_hot(const Tensor& logits) {
  const std::size_t k = last_dim("argmax_one_hot", logits);
  const auto xv = logits.values();
  std::vector<double> out(xv.size(), 0.0);
  for (std::size_t r = 0; r < xv.size() / k; ++r) {
    const double* row = xv.data() + r * k;
    out[r * k + static_cast<std::size_t>(std::max_element(row, row + k) - row)] = 1.0;
  }
  return make_tensor(logits.shape(), std::move(out));
}

}  // namespace deformnet::ad
