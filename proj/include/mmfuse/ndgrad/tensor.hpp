#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmfuse::ndgrad {

using Shape = std::vector<std::size_t>;
using Mask = std::vector<std::uint8_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a forward op produces NaN/Inf; the message names the op.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Recording switch. Inference paths disable it so no graph is built.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Verification mode turns epsilon-guarded degeneracies (zero-norm cosine
// inputs and the like) into recorded flags that tests can inspect.
class Verification {
 public:
  static bool enabled();
  static void set_enabled(bool on);
  static void flag(std::string what);
  static std::vector<std::string> take_flags();
};

class VerificationScope {
 public:
  VerificationScope() : prev_(Verification::enabled()) {
    Verification::set_enabled(true);
    Verification::take_flags();
  }
  ~VerificationScope() { Verification::set_enabled(prev_); }
  VerificationScope(const VerificationScope&) = delete;
  VerificationScope& operator=(const VerificationScope&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::span<T> ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// Handle to a node in the recorded graph. Copies share the node.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const { return rank() == 2 ? dim(0) : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

  std::span<const T> data() const { return node_->data; }
  // Direct mutation is for leaves only (parameter updates, test fixtures).
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::size_t i) const { return node_->data.at(i); }
  T at(std::size_t r, std::size_t c) const { return node_->data.at(r * cols() + c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }
  const char* op() const { return node_->op; }

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  void backward() const;

  Tensor detach() const { return Tensor(node_->shape, node_->data, false); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }
  bool same(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Nodes reachable from root, operands before consumers.
template <typename T>
std::vector<Node<T>*> topological_order(const Tensor<T>& root);

namespace detail {

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

// Builds an op result: checks finiteness, then records the backward closure
// when recording is on and any input needs a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs, BackwardFn<T> fn);

template <typename T>
void check_finite(const char* op, std::span<const T> values);

}  // namespace detail

}  // namespace mmfuse::ndgrad
