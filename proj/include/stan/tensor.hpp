#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stan {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Tensor;

template <typename T>
struct TensorImpl;

// One recorded operation. `backward` reads the output's value and gradient
// and adds the contributions into the inputs' accumulators.
template <typename T>
struct Node {
  std::string op;
  std::vector<Tensor<T>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;
};

// Dense row-major array with shared-handle semantics: copies alias the same
// storage, `clone()` makes a detached deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }
  T item() const;
  T& operator[](std::size_t i) { return impl_->data[i]; }
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  // Allocates a zero accumulator on first use.
  std::span<T> mutable_grad() const;
  void zero_grad() { impl_->grad.clear(); }

  const std::shared_ptr<Node<T>>& node() const { return impl_->node; }
  void set_node(std::shared_ptr<Node<T>> node) { impl_->node = std::move(node); }

  // Detached deep copy (no graph, no grad).
  Tensor clone() const;
  // Same storage, cut from the graph.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  TensorImpl<T>* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Graph recording is on by default; this guard disables it for the current
// thread (inference, explanation forward passes that need no weight grads).
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

// Topologically ordered view of the graph reachable from a root tensor,
// inputs before outputs.
template <typename T>
std::vector<Tensor<T>> topological_order(const Tensor<T>& root);

// Reverse-mode sweep from a scalar loss. Accumulates into every
// requires_grad tensor in the graph (leaves and intermediates) and then
// releases the recorded nodes.
template <typename T>
void backward(const Tensor<T>& loss);

// Same, seeded with an explicit upstream gradient for a non-scalar root.
template <typename T>
void backward(const Tensor<T>& root, std::span<const T> seed);

// Wires a freshly computed output into the graph when any input requires
// grad and recording is enabled.
template <typename T>
void record(Tensor<T>& out, std::string op, std::vector<Tensor<T>> inputs,
            std::function<void(const TensorImpl<T>&)> fn);

template <typename T>
bool any_requires_grad(const std::vector<Tensor<T>>& inputs);

}  // namespace stan
