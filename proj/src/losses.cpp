#include "isrkd/losses.hpp"

#include <cmath>
#include <string>

#include "isrkd/ops.hpp"

namespace isrkd {

namespace {

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// mean(softplus(sign * x)) scaled by `outer`.
template <typename T>
Tensor<T> mean_softplus(const Tensor<T>& x, double sign, double outer, const char* op) {
  const std::size_t n = x.numel();
  if (n == 0) throw ShapeError(std::string(op) + ": empty logits");
  double acc = 0;
  for (T v : x.data()) acc += softplus(sign * double(v));
  BackwardFn<T> backward = [n, sign, outer](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->requires_grad) return;
    auto dx = grad_buffer(*in[0]);
    const double k = double(g[0]) * outer * sign / double(n);
    for (std::size_t i = 0; i < n; ++i) dx[i] += T(k * sigmoid(sign * double(in[0]->data[i])));
  };
  return detail::record<T>({}, {T(outer * acc / double(n))}, {x}, std::move(backward), op);
}

constexpr double kYcc[3][3] = {{0.299, 0.587, 0.114},
                               {-0.168736, -0.331264, 0.5},
                               {0.5, -0.418688, -0.081312}};
constexpr double kLceEps = 1e-12;
constexpr double kLogFloor = 1e-12;

}  // namespace

void LossWeights::validate() const {
  const double values[] = {kd_response, kd_feature, edge, adversarial, lce, identity, reconstruction};
  for (std::size_t i = 0; i < 7; ++i) {
    if (!std::isfinite(values[i]) || values[i] < 0) {
      throw ConfigError("loss weight " + std::string(kLossTermNames[i]) + " must be finite and >= 0");
    }
  }
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mse");
  const std::size_t n = a.numel();
  if (n == 0) throw ShapeError("mse: empty tensors");
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(a.data()[i]) - double(b.data()[i]);
    acc += d * d;
  }
  BackwardFn<T> backward = [n](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    const double k = 2.0 * double(g[0]) / double(n);
    const auto& av = in[0]->data;
    const auto& bv = in[1]->data;
    if (in[0]->requires_grad) {
      auto da = grad_buffer(*in[0]);
      for (std::size_t i = 0; i < n; ++i) da[i] += T(k * (double(av[i]) - double(bv[i])));
    }
    if (in[1]->requires_grad) {
      auto db = grad_buffer(*in[1]);
      for (std::size_t i = 0; i < n; ++i) db[i] -= T(k * (double(av[i]) - double(bv[i])));
    }
  };
  return detail::record<T>({}, {T(acc / double(n))}, {a, b}, std::move(backward), "mse");
}

template <typename T>
Tensor<T> kd_loss(const Tensor<T>& sr_teacher, const Tensor<T>& sr_student,
                  const Tensor<T>& bottleneck_teacher, const Tensor<T>& bottleneck_student,
                  T w_response, T w_feature) {
  require_same(sr_teacher.shape(), sr_student.shape(), "kd_loss (outputs)");
  require_same(bottleneck_teacher.shape(), bottleneck_student.shape(), "kd_loss (bottleneck)");
  const auto response = mse(sr_student, sr_teacher.detach());
  const auto feature = mse(bottleneck_student, bottleneck_teacher.detach());
  return add(scale(response, w_response), scale(feature, w_feature));
}

template <typename T>
Tensor<T> edge_loss(const Tensor<T>& e_sr, const Tensor<T>& e_hr) {
  if (e_sr.rank() != 4 || e_sr.dim(1) != 1) {
    throw ShapeError("edge_loss: expected [B,1,H,W], got " + shape_str(e_sr.shape()));
  }
  require_same(e_sr.shape(), e_hr.shape(), "edge_loss");
  return mse(e_sr, e_hr);
}

template <typename T>
Tensor<T> adversarial_loss_d(const Tensor<T>& logits_real, const Tensor<T>& logits_fake) {
  return add(mean_softplus(logits_real, -1.0, 1.0, "adversarial_loss_d"),
             mean_softplus(logits_fake, 1.0, 1.0, "adversarial_loss_d"));
}

template <typename T>
Tensor<T> adversarial_loss_g(const Tensor<T>& logits_fake, GeneratorAdversarialForm form) {
  if (form == GeneratorAdversarialForm::saturating) {
    return mean_softplus(logits_fake, 1.0, -1.0, "adversarial_loss_g");
  }
  return mean_softplus(logits_fake, -1.0, 1.0, "adversarial_loss_g");
}

template <typename T>
Tensor<T> lce_loss(const Tensor<T>& sr, const Tensor<T>& hr) {
  if (sr.rank() != 4 || sr.dim(1) != 3) {
    throw ShapeError("lce_loss: expected [B,3,H,W], got " + shape_str(sr.shape()));
  }
  require_same(sr.shape(), hr.shape(), "lce_loss");
  const std::size_t batch = sr.dim(0), hw = sr.dim(2) * sr.dim(3), pixels = batch * hw;

  // d[c] = YCbCr difference; the offsets of the transform cancel.
  std::vector<double> diff(3 * pixels), norm(pixels);
  double acc = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < hw; ++p) {
      double rgb[3];
      for (int c = 0; c < 3; ++c) {
        const std::size_t i = (b * 3 + c) * hw + p;
        rgb[c] = double(sr.data()[i]) - double(hr.data()[i]);
      }
      const std::size_t q = b * hw + p;
      double sq = kLceEps;
      for (int c = 0; c < 3; ++c) {
        const double d = kYcc[c][0] * rgb[0] + kYcc[c][1] * rgb[1] + kYcc[c][2] * rgb[2];
        diff[3 * q + c] = d;
        sq += d * d;
      }
      norm[q] = std::sqrt(sq);
      acc += norm[q];
    }

  BackwardFn<T> backward = [batch, hw, pixels, diff = std::move(diff), norm = std::move(norm)](
                               std::span<const T> g, std::span<const ImplPtr<T>> in) {
    const double k = double(g[0]) / double(pixels);
    std::span<T> ds, dh;
    if (in[0]->requires_grad) ds = grad_buffer(*in[0]);
    if (in[1]->requires_grad) dh = grad_buffer(*in[1]);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t q = b * hw + p;
        // d norm / d rgb = M^T d / norm
        for (int c = 0; c < 3; ++c) {
          double v = 0;
          for (int r = 0; r < 3; ++r) v += kYcc[r][c] * diff[3 * q + r];
          v *= k / norm[q];
          const std::size_t i = (b * 3 + c) * hw + p;
          if (!ds.empty()) ds[i] += T(v);
          if (!dh.empty()) dh[i] -= T(v);
        }
      }
  };
  return detail::record<T>({}, {T(acc / double(pixels))}, {sr, hr}, std::move(backward), "lce_loss");
}

template <typename T>
Tensor<T> identity_loss(const Tensor<T>& v_sr, const Tensor<T>& v_hr) {
  if (v_sr.rank() != 2) throw ShapeError("identity_loss: expected [B,K], got " + shape_str(v_sr.shape()));
  require_same(v_sr.shape(), v_hr.shape(), "identity_loss");
  const std::size_t batch = v_sr.dim(0), k = v_sr.dim(1);
  for (const auto* t : {&v_sr, &v_hr}) {
    for (std::size_t b = 0; b < batch; ++b) {
      double total = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const double v = t->data()[b * k + j];
        if (!(v >= 0)) throw NumericalError("identity_loss: negative or NaN probability");
        total += v;
      }
      if (std::abs(total - 1.0) > 1e-5) {
        throw NumericalError("identity_loss: row " + std::to_string(b) + " sums to " + std::to_string(total));
      }
    }
  }
  // x log(x/m) with 0 log 0 = 0 and a floor inside the logs.
  const auto term = [](double x, double m) {
    return x > 0 ? x * (std::log(std::max(x, kLogFloor)) - std::log(std::max(m, kLogFloor))) : 0.0;
  };
  double acc = 0;
  for (std::size_t i = 0; i < batch * k; ++i) {
    const double a = v_sr.data()[i], b = v_hr.data()[i], m = 0.5 * (a + b);
    acc += 0.5 * term(a, m) + 0.5 * term(b, m);
  }
  BackwardFn<T> backward = [batch, k](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    // With M = (a+b)/2, d JS / d a = 0.5 log(a / M) (the remaining terms cancel).
    const double s = double(g[0]) / double(batch);
    for (int side = 0; side < 2; ++side) {
      if (!in[side]->requires_grad) continue;
      auto dx = grad_buffer(*in[side]);
      const auto& x = in[side]->data;
      const auto& y = in[1 - side]->data;
      for (std::size_t i = 0; i < batch * k; ++i) {
        const double m = 0.5 * (double(x[i]) + double(y[i]));
        const double lx = std::log(std::max(double(x[i]), kLogFloor));
        const double lm = std::log(std::max(m, kLogFloor));
        dx[i] += T(s * 0.5 * (lx - lm));
      }
    }
  };
  return detail::record<T>({}, {T(acc / double(batch))}, {v_sr, v_hr}, std::move(backward),
                           "identity_loss");
}

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& sr, const Tensor<T>& hr) {
  return mse(sr, hr);
}

template <typename T>
double LossBreakdown<T>::term(std::string_view name) const {
  for (std::size_t i = 0; i < kLossTermNames.size(); ++i) {
    if (kLossTermNames[i] == name) return terms[i];
  }
  throw Error("unknown loss term " + std::string(name));
}

template <typename T>
LossBreakdown<T> total_loss(const LossTerms<T>& terms, const LossWeights& weights) {
  weights.validate();
  const std::array<const Tensor<T>*, 7> parts = {&terms.kd_response, &terms.kd_feature, &terms.edge,
                                                 &terms.adversarial, &terms.lce, &terms.identity,
                                                 &terms.reconstruction};
  const std::array<double, 7> w = {weights.kd_response, weights.kd_feature, weights.edge,
                                   weights.adversarial, weights.lce, weights.identity,
                                   weights.reconstruction};
  LossBreakdown<T> out;
  Tensor<T> total;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor<T>& t = *parts[i];
    if (t.numel() == 0) continue;
    if (t.numel() != 1) {
      throw ShapeError("total_loss: term " + std::string(kLossTermNames[i]) + " is not a scalar");
    }
    const double v = double(t.item());
    if (!std::isfinite(v)) {
      throw NumericalError("total_loss: term " + std::string(kLossTermNames[i]) + " is not finite");
    }
    out.terms[i] = v;
    const auto contribution = scale(t, T(w[i]));
    out.weighted[i] = double(contribution.item());
    total = total.numel() == 0 ? contribution : add(total, contribution);
  }
  out.total = total.numel() == 0 ? Tensor<T>::from({}, {T(0)}) : total;
  return out;
}

#define ISRKD_INSTANTIATE_LOSSES(T)                                                             \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> kd_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                             const Tensor<T>&, T, T);                                          \
  template Tensor<T> edge_loss(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> adversarial_loss_d(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> adversarial_loss_g(const Tensor<T>&, GeneratorAdversarialForm);           \
  template Tensor<T> lce_loss(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> identity_loss(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> reconstruction_loss(const Tensor<T>&, const Tensor<T>&);                  \
  template struct LossBreakdown<T>;                                                            \
  template LossBreakdown<T> total_loss(const LossTerms<T>&, const LossWeights&);

ISRKD_INSTANTIATE_LOSSES(float)
ISRKD_INSTANTIATE_LOSSES(double)

}  // namespace isrkd
