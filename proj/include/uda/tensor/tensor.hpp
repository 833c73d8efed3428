#pragma once

// Dense N-d tensors with tape-free reverse-mode differentiation.
//
// A Tensor is a cheap handle to an immutable node. Ops that receive at least
// one input requiring gradients record their parents and a backward closure
// on the result; ops on constant inputs record nothing. backward() walks the
// recorded graph in reverse topological order.
//
// Leaves (parameters, inputs) are the only nodes whose values may be mutated
// after construction, through mutable_data(); this is how optimizers and the
// finite-difference checker work.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uda {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Raised when operands have incompatible extents. Names the operation and
// the offending dimension.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string op, std::string dimension, std::size_t expected, std::size_t actual);
  ShapeError(std::string op, std::string message);

  const std::string& op() const noexcept { return op_; }
  const std::string& dimension() const noexcept { return dimension_; }

 private:
  std::string op_;
  std::string dimension_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty means "no gradient"
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(std::span<const T> grad_out)> backward;
};

// Returns the parent's gradient buffer, allocating zeros on first use.
template <typename T>
std::vector<T>& grad_buffer(Node<T>& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), T(0));
  return node.grad;
}

// Per-thread record of the branches taken by piecewise ops (relu,
// leaky_relu, clamp, l1_loss), used by the gradient checker. In record mode
// every such op appends, per element, which side of its kink the input fell
// on. In replay mode the ops evaluate the recorded side instead, so a
// perturbed input is pushed through the same linear piece, and `crossed`
// notes that some input actually moved across a kink.
struct BranchTrace {
  enum class Mode { off, record, replay };
  Mode mode = Mode::off;
  std::vector<std::vector<std::uint8_t>> sides;
  std::size_t cursor = 0;
  bool crossed = false;

  // Sides the op should evaluate: `computed` except when replaying.
  const std::vector<std::uint8_t>& exchange(std::vector<std::uint8_t>& computed);
};
BranchTrace& branch_trace();

}  // namespace detail

// Switches the current thread's BranchTrace for the lifetime of the scope.
class BranchScope {
 public:
  explicit BranchScope(detail::BranchTrace::Mode mode, std::vector<std::vector<std::uint8_t>> sides = {});
  ~BranchScope();
  BranchScope(const BranchScope&) = delete;
  BranchScope& operator=(const BranchScope&) = delete;

  bool crossed() const { return detail::branch_trace().crossed; }
  std::vector<std::vector<std::uint8_t>> take_sides() { return std::move(detail::branch_trace().sides); }

 private:
  detail::BranchTrace saved_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return node().data.size(); }

  std::span<const T> data() const { return node().data; }
  T item() const;

  bool requires_grad() const { return node().requires_grad; }
  bool is_leaf() const { return node().is_leaf; }
  bool has_grad() const { return !node().grad.empty(); }
  std::span<const T> grad() const;
  // Gradient, or zeros when backward never reached this tensor.
  std::vector<T> grad_or_zero() const;

  // Leaf-only mutation.
  std::span<T> mutable_data();
  void set_requires_grad(bool on);
  void zero_grad();
  void clear_grad();

  // Constant copy that starts a new graph.
  Tensor detach() const;

  const detail::Node<T>* id() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node<T>>& node_handle() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  const detail::Node<T>& node() const;
  detail::Node<T>& node();

  std::shared_ptr<detail::Node<T>> node_;
};

// Builds an op result. When any input requires gradients the result records
// them as parents together with `backward`.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(std::span<const T>)> backward);

// Accumulates `g` into the gradient of `t` if it participates in the graph.
template <typename T>
void accumulate_grad(const Tensor<T>& t, std::span<const T> g);

// Whether a gradient for `t` is needed during backward.
template <typename T>
bool needs_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

// Populates .grad on every tensor that requires gradients and is reachable
// from `loss`. Leaf gradients accumulate; intermediate ones are released.
// Throws std::invalid_argument if `loss` is not a one-element tensor.
template <typename T>
void backward(const Tensor<T>& loss);

// Precision conversion for the float64 test mode. Produces a constant leaf.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad = false) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(out), requires_grad);
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace uda
