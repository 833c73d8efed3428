#include "uda/tensor/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace uda {

detail::BranchTrace& detail::branch_trace() {
  thread_local BranchTrace trace;
  return trace;
}

const std::vector<std::uint8_t>& detail::BranchTrace::exchange(std::vector<std::uint8_t>& computed) {
  if (mode == Mode::record) {
    sides.push_back(computed);
    return sides.back();
  }
  if (mode == Mode::replay) {
    if (cursor < sides.size() && sides[cursor].size() == computed.size()) {
      const auto& recorded = sides[cursor++];
      if (recorded != computed) crossed = true;
      return recorded;
    }
    crossed = true;
  }
  return computed;
}

BranchScope::BranchScope(detail::BranchTrace::Mode mode, std::vector<std::vector<std::uint8_t>> sides)
    : saved_(std::move(detail::branch_trace())) {
  auto& trace = detail::branch_trace();
  trace = {};
  trace.mode = mode;
  trace.sides = std::move(sides);
}

BranchScope::~BranchScope() { detail::branch_trace() = std::move(saved_); }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

ShapeError::ShapeError(std::string op, std::string dimension, std::size_t expected, std::size_t actual)
    : std::invalid_argument(op + ": " + dimension + " mismatch (expected " + std::to_string(expected) + ", got " +
                            std::to_string(actual) + ")"),
      op_(std::move(op)),
      dimension_(std::move(dimension)) {}

ShapeError::ShapeError(std::string op, std::string message)
    : std::invalid_argument(op + ": " + message), op_(std::move(op)) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) : node_(std::make_shared<detail::Node<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor", "element count for shape " + shape_str(shape) + " is " +
                                   std::to_string(shape_numel(shape)) + " but data has " +
                                   std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const detail::Node<T>& Tensor<T>::node() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return *node_;
}

template <typename T>
detail::Node<T>& Tensor<T>::node() {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return *node_;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t i) const {
  const auto& s = node().shape;
  if (i >= s.size()) throw ShapeError("dim", "axis " + std::to_string(i) + " out of range for " + shape_str(s));
  return s[i];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw std::invalid_argument("item() requires a one-element tensor, got " + shape_str(shape()));
  return node().data[0];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (node().grad.empty()) throw std::logic_error("tensor has no gradient");
  return node().grad;
}

template <typename T>
std::vector<T> Tensor<T>::grad_or_zero() const {
  if (node().grad.empty()) return std::vector<T>(numel(), T(0));
  return node().grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node().is_leaf) throw std::logic_error("mutable_data() on a non-leaf tensor");
  return node().data;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  if (!node().is_leaf) throw std::logic_error("set_requires_grad() on a non-leaf tensor");
  node().requires_grad = on;
}

template <typename T>
void Tensor<T>::zero_grad() {
  node().grad.assign(numel(), T(0));
}

template <typename T>
void Tensor<T>::clear_grad() {
  node().grad.clear();
  node().grad.shrink_to_fit();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node().shape, node().data, false);
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(std::span<const T>)> backward) {
  Tensor<T> out(std::move(shape), std::move(data), false);
  bool any = false;
  for (const auto* in : inputs) any = any || (in && needs_grad(*in));
  if (!any) return out;
  auto& node = *out.node_handle();
  node.requires_grad = true;
  node.is_leaf = false;
  for (const auto* in : inputs) {
    if (in && needs_grad(*in)) node.parents.push_back(in->node_handle());
  }
  node.backward = std::move(backward);
  return out;
}

template <typename T>
void accumulate_grad(const Tensor<T>& t, std::span<const T> g) {
  if (!needs_grad(t)) return;
  auto& buf = detail::grad_buffer(*t.node_handle());
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss, got " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  auto* root = loss.node_handle().get();
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  detail::grad_buffer(*root)[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->is_leaf) {
      detail::grad_buffer(*node);
      continue;
    }
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_result(Shape, std::vector<float>, std::initializer_list<const Tensor<float>*>,
                                   std::function<void(std::span<const float>)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::initializer_list<const Tensor<double>*>,
                                    std::function<void(std::span<const double>)>);
template void accumulate_grad(const Tensor<float>&, std::span<const float>);
template void accumulate_grad(const Tensor<double>&, std::span<const double>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace uda
