#include "isrkd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace isrkd {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatRM<T>>;

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  require(s.size() == rank, std::string(op) + ": " + what + " must have rank " +
                                std::to_string(rank) + ", got " + shape_str(s));
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Unfolds one CHW image into a [C*kH*kW, outH*outW] patch matrix.
template <typename T>
void im2col(const T* image, std::size_t channels, const ConvGeometry& g, T* cols) {
  const std::size_t out_hw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        T* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * out_hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_top);
          T* out = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(out, out + g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_left);
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w))
                          ? T(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds patch columns back into a CHW image.
template <typename T>
void col2im_add(const T* cols, std::size_t channels, const ConvGeometry& g, T* image) {
  const std::size_t out_hw = g.out_h * g.out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * out_hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
          const T* in = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) {
              dst[static_cast<std::size_t>(ix)] += in[ox];
            }
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad_top == 0 &&
         g.pad_left == 0;
}

// Box sums of a length-n signal over windows [i - before, i + after], clamped
// to the signal, written with stride `step` (so rows and columns share it).
template <typename T>
void box_sum_1d(const T* in, T* out, std::size_t n, std::size_t step, std::size_t before,
                std::size_t after, std::vector<double>& prefix) {
  prefix.assign(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + double(in[i * step]);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= before ? i - before : 0;
    const std::size_t hi = std::min(n - 1, i + after);
    out[i * step] = static_cast<T>(prefix[hi + 1] - prefix[lo]);
  }
}

template <typename T>
void box_sum_2d(const T* in, T* out, std::size_t h, std::size_t w, std::size_t before,
                std::size_t after, std::vector<T>& scratch, std::vector<double>& prefix) {
  scratch.resize(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    box_sum_1d(in + y * w, scratch.data() + y * w, w, 1, before, after, prefix);
  }
  for (std::size_t x = 0; x < w; ++x) {
    box_sum_1d(scratch.data() + x, out + x, h, w, before, after, prefix);
  }
}

std::size_t window_count(std::size_t i, std::size_t n, std::size_t before, std::size_t after) {
  const std::size_t lo = i >= before ? i - before : 0;
  const std::size_t hi = std::min(n - 1, i + after);
  return hi - lo + 1;
}

}  // namespace

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel_h,
                           std::size_t kernel_w, std::size_t stride, Padding padding) {
  require(stride >= 1, "conv: stride must be >= 1");
  require(kernel_h >= 1 && kernel_w >= 1, "conv: kernel must be non-empty");
  ConvGeometry g;
  g.in_h = in_h;
  g.in_w = in_w;
  g.kernel_h = kernel_h;
  g.kernel_w = kernel_w;
  g.stride = stride;
  if (padding == Padding::same) {
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    const auto pad_total = [&](std::size_t out, std::size_t k, std::size_t in) {
      const std::size_t need = (out - 1) * stride + k;
      return need > in ? need - in : 0;
    };
    g.pad_top = pad_total(g.out_h, kernel_h, in_h) / 2;
    g.pad_left = pad_total(g.out_w, kernel_w, in_w) / 2;
  } else {
    require(in_h >= kernel_h && in_w >= kernel_w,
            "conv: VALID kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                " larger than input " + std::to_string(in_h) + "x" + std::to_string(in_w));
    g.out_h = (in_h - kernel_h) / stride + 1;
    g.out_w = (in_w - kernel_w) / stride + 1;
  }
  return g;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, Padding padding) {
  require_rank(input.shape(), 4, "conv2d", "input");
  require_rank(weight.shape(), 4, "conv2d", "weight");
  require(input.dim(1) == weight.dim(1), "conv2d: input " + shape_str(input.shape()) +
                                             " has " + std::to_string(input.dim(1)) +
                                             " channels but weight " +
                                             shape_str(weight.shape()) + " expects " +
                                             std::to_string(weight.dim(1)));
  require(bias.shape() == Shape{weight.dim(0)},
          "conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
              shape_str(weight.shape()));

  const std::size_t n = input.dim(0), c = input.dim(1), o = weight.dim(0);
  const auto g = conv_geometry(input.dim(2), input.dim(3), weight.dim(2), weight.dim(3), stride,
                               padding);
  const std::size_t ckk = c * g.kernel_h * g.kernel_w;
  const std::size_t in_hw = g.in_h * g.in_w, out_hw = g.out_h * g.out_w;
  const bool pointwise = is_pointwise(g);

  std::vector<T> out(n * o * out_hw);
  std::vector<T> cols(pointwise ? 0 : ckk * out_hw);
  ConstMapRM<T> w(weight.data().data(), o, ckk);
  const T* b = bias.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* img = input.data().data() + i * c * in_hw;
    const T* patches = img;
    if (!pointwise) {
      im2col(img, c, g, cols.data());
      patches = cols.data();
    }
    MapRM<T> y(out.data() + i * o * out_hw, o, out_hw);
    y.noalias() = w * ConstMapRM<T>(patches, ckk, out_hw);
    for (std::size_t oc = 0; oc < o; ++oc) y.row(oc).array() += b[oc];
  }

  BackwardFn<T> backward = [n, c, o, g, ckk, in_hw, out_hw, pointwise](
                               std::span<const T> grad_out, std::span<const ImplPtr<T>> in) {
    auto& x = *in[0];
    auto& wt = *in[1];
    auto& bs = *in[2];
    ConstMapRM<T> w(wt.data.data(), o, ckk);
    std::vector<T> cols(pointwise ? 0 : ckk * out_hw);
    std::vector<T> dcols(ckk * out_hw);
    for (std::size_t i = 0; i < n; ++i) {
      ConstMapRM<T> dy(grad_out.data() + i * o * out_hw, o, out_hw);
      const T* img = x.data.data() + i * c * in_hw;
      if (wt.requires_grad) {
        const T* patches = img;
        if (!pointwise) {
          im2col(img, c, g, cols.data());
          patches = cols.data();
        }
        MapRM<T>(grad_buffer(wt).data(), o, ckk).noalias() +=
            dy * ConstMapRM<T>(patches, ckk, out_hw).transpose();
      }
      if (bs.requires_grad) {
        auto db = grad_buffer(bs);
        // Plain loop: Eigen's reduction order depends on buffer alignment.
        for (std::size_t oc = 0; oc < o; ++oc) {
          const T* row = grad_out.data() + (i * o + oc) * out_hw;
          T acc = 0;
          for (std::size_t p = 0; p < out_hw; ++p) acc += row[p];
          db[oc] += acc;
        }
      }
      if (x.requires_grad) {
        T* dx = grad_buffer(x).data() + i * c * in_hw;
        if (pointwise) {
          MapRM<T>(dx, c, in_hw).noalias() += w.transpose() * dy;
        } else {
          MapRM<T>(dcols.data(), ckk, out_hw).noalias() = w.transpose() * dy;
          col2im_add(dcols.data(), c, g, dx);
        }
      }
    }
  };
  return detail::record<T>({n, o, g.out_h, g.out_w}, std::move(out), {input, weight, bias},
                           std::move(backward), "conv2d");
}

template <typename T>
Tensor<T> transpose_conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, std::size_t stride) {
  require_rank(input.shape(), 4, "transpose_conv2d", "input");
  require_rank(weight.shape(), 4, "transpose_conv2d", "weight");
  require(input.dim(1) == weight.dim(0),
          "transpose_conv2d: input " + shape_str(input.shape()) + " has " +
              std::to_string(input.dim(1)) + " channels but weight " +
              shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(0)));
  require(bias.shape() == Shape{weight.dim(1)},
          "transpose_conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
              shape_str(weight.shape()));

  const std::size_t n = input.dim(0), c = input.dim(1), o = weight.dim(1);
  // Geometry of the forward conv this op is the adjoint of.
  const auto g = conv_geometry(input.dim(2) * stride, input.dim(3) * stride, weight.dim(2),
                               weight.dim(3), stride, Padding::same);
  require(g.out_h == input.dim(2) && g.out_w == input.dim(3),
          "transpose_conv2d: geometry does not invert for input " + shape_str(input.shape()));
  const std::size_t okk = o * g.kernel_h * g.kernel_w;
  const std::size_t small_hw = g.out_h * g.out_w, big_hw = g.in_h * g.in_w;

  std::vector<T> out(n * o * big_hw, T(0));
  std::vector<T> cols(okk * small_hw);
  ConstMapRM<T> w(weight.data().data(), c, okk);
  const T* b = bias.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    ConstMapRM<T> x(input.data().data() + i * c * small_hw, c, small_hw);
    MapRM<T>(cols.data(), okk, small_hw).noalias() = w.transpose() * x;
    T* y = out.data() + i * o * big_hw;
    col2im_add(cols.data(), o, g, y);
    for (std::size_t oc = 0; oc < o; ++oc) {
      std::for_each(y + oc * big_hw, y + (oc + 1) * big_hw, [&](T& v) { v += b[oc]; });
    }
  }

  BackwardFn<T> backward = [n, c, o, g, okk, small_hw, big_hw](std::span<const T> grad_out,
                                                               std::span<const ImplPtr<T>> in) {
    auto& x = *in[0];
    auto& wt = *in[1];
    auto& bs = *in[2];
    ConstMapRM<T> w(wt.data.data(), c, okk);
    std::vector<T> cols(okk * small_hw);
    for (std::size_t i = 0; i < n; ++i) {
      const T* dy = grad_out.data() + i * o * big_hw;
      if (bs.requires_grad) {
        auto db = grad_buffer(bs);
        for (std::size_t oc = 0; oc < o; ++oc) {
          T acc = 0;
          for (std::size_t k = 0; k < big_hw; ++k) acc += dy[oc * big_hw + k];
          db[oc] += acc;
        }
      }
      if (!x.requires_grad && !wt.requires_grad) continue;
      im2col(dy, o, g, cols.data());
      ConstMapRM<T> dcols(cols.data(), okk, small_hw);
      if (x.requires_grad) {
        MapRM<T>(grad_buffer(x).data() + i * c * small_hw, c, small_hw).noalias() += w * dcols;
      }
      if (wt.requires_grad) {
        ConstMapRM<T> xi(x.data.data() + i * c * small_hw, c, small_hw);
        MapRM<T>(grad_buffer(wt).data(), c, okk).noalias() += xi * dcols.transpose();
      }
    }
  };
  return detail::record<T>({n, o, g.in_h, g.in_w}, std::move(out), {input, weight, bias},
                           std::move(backward), "transpose_conv2d");
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, std::size_t kernel) {
  require_rank(input.shape(), 4, "avg_pool2d", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(kernel >= 1, "avg_pool2d: kernel must be >= 1");
  require(kernel <= 2 * h && kernel <= 2 * w,
          "avg_pool2d: kernel " + std::to_string(kernel) + " larger than twice the input " +
              shape_str(input.shape()));
  // SAME, stride 1: window of output i covers [i - before, i + after].
  const std::size_t before = (kernel - 1) / 2;
  const std::size_t after = kernel - 1 - before;

  std::vector<T> inv_count(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      inv_count[y * w + x] = T(1) / T(window_count(y, h, before, after) *
                                      window_count(x, w, before, after));
    }
  }

  std::vector<T> out(input.numel());
  std::vector<T> scratch;
  std::vector<double> prefix;
  const std::size_t hw = h * w;
  for (std::size_t p = 0; p < n * c; ++p) {
    T* dst = out.data() + p * hw;
    box_sum_2d(input.data().data() + p * hw, dst, h, w, before, after, scratch, prefix);
    for (std::size_t k = 0; k < hw; ++k) dst[k] *= inv_count[k];
  }

  BackwardFn<T> backward = [n, c, h, w, before, after, inv_count = std::move(inv_count)](
                               std::span<const T> grad_out, std::span<const ImplPtr<T>> in) {
    auto& x = *in[0];
    if (!x.requires_grad) return;
    auto dx = grad_buffer(x);
    const std::size_t hw = h * w;
    std::vector<T> scaled(hw), summed(hw), scratch;
    std::vector<double> prefix;
    for (std::size_t p = 0; p < n * c; ++p) {
      for (std::size_t k = 0; k < hw; ++k) scaled[k] = grad_out[p * hw + k] * inv_count[k];
      // Input j feeds outputs i with i - before <= j <= i + after.
      box_sum_2d(scaled.data(), summed.data(), h, w, after, before, scratch, prefix);
      for (std::size_t k = 0; k < hw; ++k) dx[p * hw + k] += summed[k];
    }
  };
  return detail::record<T>(input.shape(), std::move(out), {input}, std::move(backward),
                           "avg_pool2d");
}

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(input.shape(), 2, "dense", "input");
  require_rank(weight.shape(), 2, "dense", "weight");
  require(input.dim(1) == weight.dim(0), "dense: inner dimension mismatch " +
                                             shape_str(input.shape()) + " x " +
                                             shape_str(weight.shape()));
  require(bias.shape() == Shape{weight.dim(1)},
          "dense: bias " + shape_str(bias.shape()) + " does not match weight " +
              shape_str(weight.shape()));
  const std::size_t n = input.dim(0), d = input.dim(1), m = weight.dim(1);
  std::vector<T> out(n * m);
  MapRM<T> y(out.data(), n, m);
  y.noalias() = ConstMapRM<T>(input.data().data(), n, d) * ConstMapRM<T>(weight.data().data(), d, m);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), m);

  BackwardFn<T> backward = [n, d, m](std::span<const T> grad_out, std::span<const ImplPtr<T>> in) {
    auto& x = *in[0];
    auto& wt = *in[1];
    auto& bs = *in[2];
    ConstMapRM<T> dy(grad_out.data(), n, m);
    if (x.requires_grad) {
      MapRM<T>(grad_buffer(x).data(), n, d).noalias() +=
          dy * ConstMapRM<T>(wt.data.data(), d, m).transpose();
    }
    if (wt.requires_grad) {
      MapRM<T>(grad_buffer(wt).data(), d, m).noalias() +=
          ConstMapRM<T>(x.data.data(), n, d).transpose() * dy;
    }
    if (bs.requires_grad) {
      auto db = grad_buffer(bs);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < m; ++j) db[j] += grad_out[r * m + j];
    }
  };
  return detail::record<T>({n, m}, std::move(out), {input, weight, bias}, std::move(backward),
                           "dense");
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > T(0) ? in[i] : slope * in[i];
  BackwardFn<T> backward = [slope](std::span<const T> g, std::span<const ImplPtr<T>> inputs) {
    auto& a = *inputs[0];
    if (!a.requires_grad) return;
    auto da = grad_buffer(a);
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = a.data[i];
      da[i] += v > T(0) ? g[i] : (v < T(0) ? slope * g[i] : T(0));
    }
  };
  return detail::record<T>(x.shape(), std::move(out), {x}, std::move(backward),
                           slope == T(0) ? "relu" : "leaky_relu");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  BackwardFn<T> backward = [](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    for (const auto& t : in) {
      if (!t->requires_grad) continue;
      auto d = grad_buffer(*t);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  };
  return detail::record<T>(a.shape(), std::move(out), {a, b}, std::move(backward), "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  BackwardFn<T> backward = [](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (in[0]->requires_grad) {
      auto d = grad_buffer(*in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (in[1]->requires_grad) {
      auto d = grad_buffer(*in[1]);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  };
  return detail::record<T>(a.shape(), std::move(out), {a, b}, std::move(backward), "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  BackwardFn<T> backward = [](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (in[0]->requires_grad) {
      auto d = grad_buffer(*in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * in[1]->data[i];
    }
    if (in[1]->requires_grad) {
      auto d = grad_buffer(*in[1]);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * in[0]->data[i];
    }
  };
  return detail::record<T>(a.shape(), std::move(out), {a, b}, std::move(backward), "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  BackwardFn<T> backward = [factor](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->requires_grad) return;
    auto d = grad_buffer(*in[0]);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
  };
  return detail::record<T>(x.shape(), std::move(out), {x}, std::move(backward), "scale");
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return mul(x, x);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  BackwardFn<T> backward = [](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->requires_grad) return;
    for (auto& d : grad_buffer(*in[0])) d += g[0];
  };
  return detail::record<T>({1}, {acc}, {x}, std::move(backward), "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  BackwardFn<T> backward = [](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->requires_grad) return;
    auto d = grad_buffer(*in[0]);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  };
  return detail::record<T>(std::move(shape), std::move(out), {x}, std::move(backward), "reshape");
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 4, "concat_channels", "lhs");
  require_rank(b.shape(), 4, "concat_channels", "rhs");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<T> out(n * (ca + cb) * hw);
  for (std::size_t i = 0; i < n; ++i) {
    auto da = a.data().subspan(i * ca * hw, ca * hw);
    auto db = b.data().subspan(i * cb * hw, cb * hw);
    auto* dst = out.data() + i * (ca + cb) * hw;
    std::copy(da.begin(), da.end(), dst);
    std::copy(db.begin(), db.end(), dst + ca * hw);
  }
  BackwardFn<T> backward = [n, ca, cb, hw](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    for (std::size_t i = 0; i < n; ++i) {
      const T* src = g.data() + i * (ca + cb) * hw;
      if (in[0]->requires_grad) {
        T* d = grad_buffer(*in[0]).data() + i * ca * hw;
        for (std::size_t k = 0; k < ca * hw; ++k) d[k] += src[k];
      }
      if (in[1]->requires_grad) {
        T* d = grad_buffer(*in[1]).data() + i * cb * hw;
        for (std::size_t k = 0; k < cb * hw; ++k) d[k] += src[ca * hw + k];
      }
    }
  };
  return detail::record<T>({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                           std::move(backward), "concat_channels");
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t first, std::size_t count) {
  require_rank(x.shape(), 4, "slice_channels", "input");
  require(first + count <= x.dim(1), "slice_channels: channels [" + std::to_string(first) + ", " +
                                         std::to_string(first + count) + ") out of range for " +
                                         shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (first == 0 && count == c) return x;
  std::vector<T> out(n * count * hw);
  for (std::size_t i = 0; i < n; ++i) {
    auto src = x.data().subspan((i * c + first) * hw, count * hw);
    std::copy(src.begin(), src.end(), out.data() + i * count * hw);
  }
  BackwardFn<T> backward = [n, c, hw, first, count](std::span<const T> g,
                                                    std::span<const ImplPtr<T>> in) {
    if (!in[0]->requires_grad) return;
    auto d = grad_buffer(*in[0]);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < count * hw; ++k) d[(i * c + first) * hw + k] += g[i * count * hw + k];
    }
  };
  return detail::record<T>({n, count, x.dim(2), x.dim(3)}, std::move(out), {x},
                           std::move(backward), "slice_channels");
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool", "input");
  const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(nc);
  for (std::size_t p = 0; p < nc; ++p) {
    T acc = 0;
    for (std::size_t k = 0; k < hw; ++k) acc += x.data()[p * hw + k];
    out[p] = acc / T(hw);
  }
  BackwardFn<T> backward = [nc, hw](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->requires_grad) return;
    auto d = grad_buffer(*in[0]);
    for (std::size_t p = 0; p < nc; ++p) {
      for (std::size_t k = 0; k < hw; ++k) d[p * hw + k] += g[p] / T(hw);
    }
  };
  return detail::record<T>({x.dim(0), x.dim(1)}, std::move(out), {x}, std::move(backward),
                           "global_avg_pool");
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "softmax_rows", "input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.data().data() + i * d;
    T* dst = out.data() + i * d;
    const T peak = *std::max_element(row, row + d);
    T total = 0;
    for (std::size_t k = 0; k < d; ++k) total += dst[k] = std::exp(row[k] - peak);
    for (std::size_t k = 0; k < d; ++k) dst[k] /= total;
  }
  BackwardFn<T> backward = [n, d, probs = out](std::span<const T> g,
                                               std::span<const ImplPtr<T>> in) {
    if (!in[0]->requires_grad) return;
    auto dx = grad_buffer(*in[0]);
    for (std::size_t i = 0; i < n; ++i) {
      T dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += g[i * d + k] * probs[i * d + k];
      for (std::size_t k = 0; k < d; ++k) dx[i * d + k] += probs[i * d + k] * (g[i * d + k] - dot);
    }
  };
  return detail::record<T>({n, d}, std::move(out), {x}, std::move(backward), "softmax_rows");
}

#define ISRKD_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                            std::size_t, Padding);                                           \
  template Tensor<T> transpose_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                      std::size_t);                                          \
  template Tensor<T> avg_pool2d(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> square(const Tensor<T>&);                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);             \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                      \
  template Tensor<T> softmax_rows(const Tensor<T>&);

ISRKD_INSTANTIATE_OPS(float)
ISRKD_INSTANTIATE_OPS(double)

}  // namespace isrkd
