#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deformnet::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Thrown when operand shapes do not conform to an op's rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl;

// One recorded operation. Owned by the tensor it produced; holds its inputs
// alive until the graph is consumed by backward() or dropped.
struct GradNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::shared_ptr<GradNode> node;

  std::vector<double>& ensure_grad();
  void accumulate_grad(std::span<const double> g);
};

/// Dense row-major float64 tensor taking part in a dynamic reverse-mode graph.
///
/// Tensor is a cheap handle: copies alias the same storage. Leaves created
/// with requires_grad collect gradients across backward() calls until
/// zero_grad(). Non-leaf tensors record the op that produced them whenever
/// gradient recording is enabled and an input requires grad.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Direct write access, intended for leaves (optimizers, initialization).
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Same values, no history. Gradients never flow through the result.
  Tensor detach() const;

  /// Reverse sweep from this scalar. The graph is released afterwards; a
  /// second call on the same root throws.
  void backward() const;

  bool is_leaf() const;
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace detail {

// True when an op over these inputs must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);
bool needs_grad(const std::vector<Tensor>& inputs);

Tensor make_tensor(Shape shape, std::vector<double> values);

// Attaches a graph node to `out`. Call only when needs_grad() returned true.
void attach(Tensor& out, const char* op, std::vector<Tensor> inputs,
            std::function<void(TensorImpl& out)> backward);

}  // namespace detail

}  // namespace deformnet::ad
