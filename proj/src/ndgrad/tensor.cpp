#include "mmfuse/ndgrad/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mmfuse::ndgrad {

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_verification = false;
thread_local std::vector<std::string> g_flags;
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

bool Verification::enabled() { return g_verification; }
void Verification::set_enabled(bool on) { g_verification = on; }
void Verification::flag(std::string what) {
  if (g_verification) g_flags.push_back(std::move(what));
}
std::vector<std::string> Verification::take_flags() { return std::exchange(g_flags, {}); }

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (data.size() != shape_numel(shape)) {
    throw DimensionError("tensor: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  detail::check_finite<T>("tensor", data);
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
std::vector<Node<T>*> topological_order(const Tensor<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS; deep transformer graphs would overflow recursion.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " + shape_str(shape()));
  }
  auto order = topological_order(*this);
  // Interior grads are per-pass scratch; only leaves accumulate across calls.
  for (Node<T>* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
  }
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->is_leaf() && !n->grad.empty()) n->backward_fn(*n);
  }
  for (Node<T>* n : order) {
    if (!n->is_leaf()) std::vector<T>().swap(n->grad);
  }
}

namespace detail {

template <typename T>
void check_finite(const char* op, std::span<const T> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(op) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs, BackwardFn<T> fn) {
  check_finite<T>(op, data);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (GradMode::enabled()) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (needs) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& in : inputs) node->parents.push_back(in.node_ptr());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor<T>(std::move(node));
}

template void check_finite<float>(const char*, std::span<const float>);
template void check_finite<double>(const char*, std::span<const double>);
template Tensor<float> make_result(const char*, Shape, std::vector<float>,
                                   std::vector<Tensor<float>>, BackwardFn<float>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>,
                                    std::vector<Tensor<double>>, BackwardFn<double>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template std::vector<Node<float>*> topological_order(const Tensor<float>&);
template std::vector<Node<double>*> topological_order(const Tensor<double>&);

}  // namespace mmfuse::ndgrad
