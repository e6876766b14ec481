#include "stan/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace stan {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have rank >= 1");
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) {
      throw std::invalid_argument("tensor extent " + std::to_string(i) + " is zero in " +
                                  to_string(shape));
    }
  }
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : impl_(std::make_shared<TensorImpl<T>>()) {
  check_shape(shape);
  impl_->data.assign(stan::numel(shape), fill);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
  check_shape(shape);
  if (stan::numel(shape) != values.size()) {
    throw std::invalid_argument("tensor of shape " + to_string(shape) + " cannot hold " +
                                std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(impl_->shape, impl_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  Tensor out;
  out.impl_ = std::make_shared<TensorImpl<T>>();
  out.impl_->shape = impl_->shape;
  out.impl_->data = impl_->data;
  return out;
}

template <typename T>
bool any_requires_grad(const std::vector<Tensor<T>>& inputs) {
  for (const auto& t : inputs)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}

template <typename T>
void record(Tensor<T>& out, std::string op, std::vector<Tensor<T>> inputs,
            std::function<void(const TensorImpl<T>&)> fn) {
  if (!g_grad_enabled || !any_requires_grad(inputs)) return;
  auto node = std::make_shared<Node<T>>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(fn);
  out.set_requires_grad(true);
  out.set_node(std::move(node));
}

template <typename T>
std::vector<Tensor<T>> topological_order(const Tensor<T>& root) {
  std::vector<Tensor<T>> order;
  std::unordered_set<const TensorImpl<T>*> visited;
  // Iterative post-order DFS; graphs can be thousands of nodes deep.
  struct Frame {
    Tensor<T> tensor;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root.impl());
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& node = top.tensor.node();
    if (node && top.next_input < node->inputs.size()) {
      const Tensor<T>& child = node->inputs[top.next_input++];
      if (child.defined() && child.requires_grad() && visited.insert(child.impl()).second) {
        stack.push_back({child, 0});
      }
      continue;
    }
    order.push_back(top.tensor);
    stack.pop_back();
  }
  return order;
}

template <typename T>
void backward(const Tensor<T>& root, std::span<const T> seed) {
  if (!root.requires_grad()) {
    throw std::invalid_argument("backward: root does not require grad");
  }
  if (seed.size() != root.numel()) {
    throw std::invalid_argument("backward: seed size does not match root " + to_string(root.shape()));
  }
  auto order = topological_order(root);
  // Intermediate accumulators restart at zero for this sweep; leaves keep
  // whatever an earlier sweep accumulated.
  for (auto& t : order) {
    if (t.node()) t.zero_grad();
  }
  auto g = root.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto node = it->node();
    if (!node) continue;
    it->mutable_grad();
    node->backward(*it->impl());
    it->set_node(nullptr);
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  const T one = T(1);
  backward(loss, std::span<const T>(&one, 1));
}

#define STAN_INSTANTIATE(T)                                                                   \
  template class Tensor<T>;                                                                   \
  template bool any_requires_grad<T>(const std::vector<Tensor<T>>&);                          \
  template void record<T>(Tensor<T>&, std::string, std::vector<Tensor<T>>,                    \
                          std::function<void(const TensorImpl<T>&)>);                         \
  template std::vector<Tensor<T>> topological_order<T>(const Tensor<T>&);                     \
  template void backward<T>(const Tensor<T>&, std::span<const T>);                            \
  template void backward<T>(const Tensor<T>&);

STAN_INSTANTIATE(float)
STAN_INSTANTIATE(double)

}  // namespace stan
