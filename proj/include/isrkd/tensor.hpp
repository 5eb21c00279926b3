#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "isrkd/error.hpp"

namespace isrkd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

// Backward closure of a recorded op. Receives the gradient flowing into the
// op's output and the op's inputs; accumulates into inputs that require grad.
template <typename T>
using BackwardFn =
    std::function<void(std::span<const T> grad_out, std::span<const ImplPtr<T>> inputs)>;

template <typename T>
struct Node {
  std::vector<ImplPtr<T>> inputs;
  BackwardFn<T> backward;
  const char* op = "";
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass or zero_grad touches it
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;  // null for leaves
};

// Returns the gradient buffer of `impl`, allocating it zero-filled on first use.
template <typename T>
std::span<T> grad_buffer(TensorImpl<T>& impl);

// Handle to a dense row-major tensor. Copies share storage; use clone() for a
// deep copy. Image batches are NCHW.
template <typename T>
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return impl_->node == nullptr; }

  // Sets the gradient buffer to zeros (allocating it if needed).
  void zero_grad();

  T item() const;
  T at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

  Tensor detach() const;
  Tensor clone() const;

  // Reverse-mode sweep from this scalar. Gradients accumulate into every
  // reachable tensor that requires grad.
  void backward() const;

  const ImplPtr<T>& impl() const { return impl_; }
  explicit Tensor(ImplPtr<T> impl) : impl_(std::move(impl)) {}

 private:
  ImplPtr<T> impl_;
};

// Graph recording is enabled by default; a NoGradGuard disables it for the
// current thread, e.g. for evaluation or frozen-teacher forwards.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Wraps a forward result. A graph node is attached only when grad mode is on
// and at least one input requires grad.
template <typename T>
Tensor<T> record(Shape shape, std::vector<T> values, std::vector<Tensor<T>> inputs,
                 BackwardFn<T> backward, const char* op);

}  // namespace detail

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace isrkd
