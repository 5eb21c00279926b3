#include "isrkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace isrkd {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

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

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
std::span<T> grad_buffer(TensorImpl<T>& impl) {
  if (impl.grad.size() != impl.data.size()) impl.grad.assign(impl.data.size(), T(0));
  return impl.grad;
}

template <typename T>
Tensor<T>::Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl_->grad.assign(impl_->data.size(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (impl_->data.size() != 1) {
    throw ShapeError("item() on non-scalar tensor " + shape_str(impl_->shape));
  }
  return impl_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(impl_->shape, impl_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto t = from(impl_->shape, impl_->data, impl_->requires_grad);
  t.impl_->grad = impl_->grad;
  return t;
}

template <typename T>
void Tensor<T>::backward() const {
  if (impl_->data.size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(impl_->shape));
  }
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> visited;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node_impl, next] = stack.back();
    const auto* node = node_impl->node.get();
    if (node && next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node_impl);
      stack.pop_back();
    }
  }

  // Intermediate gradients are per-sweep; leaves keep accumulating.
  for (auto* t : order) {
    if (t->node) t->grad.assign(t->data.size(), T(0));
  }
  grad_buffer(*impl_)[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* t = *it;
    if (!t->node) continue;
    t->node->backward(t->grad, t->node->inputs);
  }
}

namespace detail {

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> values, std::vector<Tensor<T>> inputs,
                 BackwardFn<T> backward, const char* op) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError(std::string(op) + ": result shape " + shape_str(shape) +
                     " does not match value count");
  }
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const auto& in : inputs) {
    for (T v : in.data()) inputs_finite = inputs_finite && std::isfinite(v);
  }
  if (inputs_finite) {
    for (T v : values) {
      if (!std::isfinite(v)) throw NumericalError(std::string(op) + ": non-finite output");
    }
  }
#endif
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  bool needs_grad = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    impl->requires_grad = true;
    auto node = std::make_shared<Node<T>>();
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward);
    node->op = op;
    impl->node = std::move(node);
  }
  return Tensor<T>(std::move(impl));
}

template Tensor<float> record(Shape, std::vector<float>, std::vector<Tensor<float>>,
                              BackwardFn<float>, const char*);
template Tensor<double> record(Shape, std::vector<double>, std::vector<Tensor<double>>,
                               BackwardFn<double>, const char*);

}  // namespace detail

template std::span<float> grad_buffer(TensorImpl<float>&);
template std::span<double> grad_buffer(TensorImpl<double>&);
template class Tensor<float>;
template class Tensor<double>;

}  // namespace isrkd
