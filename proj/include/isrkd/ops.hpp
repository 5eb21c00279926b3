#pragma once

#include <cstddef>

#include "isrkd/tensor.hpp"

namespace isrkd {

enum class Padding { same, valid };

// Spatial arithmetic shared by conv2d, transpose_conv2d and the oracles in the
// tests. SAME pads symmetrically; an odd total puts the extra row/column on the
// bottom/right.
struct ConvGeometry {
  std::size_t in_h = 0, in_w = 0;
  std::size_t out_h = 0, out_w = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1;
  std::size_t pad_top = 0, pad_left = 0;
};

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel_h,
                           std::size_t kernel_w, std::size_t stride, Padding padding);

// input [N,C,H,W], weight [O,C,kH,kW], bias [O].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, Padding padding);

// Adjoint of a SAME conv2d whose input is stride× larger: output spatial dims
// are exactly stride × input dims. input [N,C,H,W], weight [C,O,kH,kW]
// (the conv2d weight it is the adjoint of), bias [O].
template <typename T>
Tensor<T> transpose_conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, std::size_t stride);

// Stride-1 SAME average pooling; the divisor counts in-bounds elements only.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, std::size_t kernel);

// input [N,D], weight [D,M], bias [M].
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> square(const Tensor<T>& x);

// Scalar reductions over every element.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Concatenates NCHW tensors along C.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Channels [first, first + count) of an NCHW tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t first, std::size_t count);

// [N,C,H,W] -> [N,C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// Row-wise softmax of a [N,D] tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

}  // namespace isrkd
