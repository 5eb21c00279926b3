#pragma once

#include <array>
#include <string>
#include <string_view>

#include "isrkd/tensor.hpp"

namespace isrkd {

struct LossWeights {
  double kd_response = 5.0;
  double kd_feature = 0.01;
  double edge = 0.3;
  double adversarial = 1.0;
  double lce = 1.0;
  double identity = 1.0;
  double reconstruction = 1.0;

  // Throws ConfigError on a negative or non-finite weight.
  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

enum class GeneratorAdversarialForm { saturating, non_saturating };

// Mean squared error over every element. Gradients flow into whichever side
// requires grad.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

// w_R * MSE(sr_s, sr_t) + w_F * MSE(bn_s, bn_t). Teacher tensors are detached.
template <typename T>
Tensor<T> kd_loss(const Tensor<T>& sr_teacher, const Tensor<T>& sr_student,
                  const Tensor<T>& bottleneck_teacher, const Tensor<T>& bottleneck_student,
                  T w_response, T w_feature);

// Mean squared difference between predicted and Canny edge maps, [B,1,H,W] each.
template <typename T>
Tensor<T> edge_loss(const Tensor<T>& e_sr, const Tensor<T>& e_hr);

// mean softplus(-real) + mean softplus(fake).
template <typename T>
Tensor<T> adversarial_loss_d(const Tensor<T>& logits_real, const Tensor<T>& logits_fake);

// saturating: mean log(1 - sigmoid(fake)) = -mean softplus(fake) (never positive).
// non_saturating: mean softplus(-fake).
template <typename T>
Tensor<T> adversarial_loss_g(const Tensor<T>& logits_fake,
                             GeneratorAdversarialForm form = GeneratorAdversarialForm::saturating);

// Per-pixel Euclidean distance in YCbCr, averaged over pixels and batch.
template <typename T>
Tensor<T> lce_loss(const Tensor<T>& sr, const Tensor<T>& hr);

// Batch mean of the Jensen-Shannon divergence (natural log) between rows.
template <typename T>
Tensor<T> identity_loss(const Tensor<T>& v_sr, const Tensor<T>& v_hr);

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& sr, const Tensor<T>& hr);

inline constexpr std::array<std::string_view, 7> kLossTermNames = {
    "kd_response", "kd_feature", "edge", "adversarial", "lce", "identity", "reconstruction"};

// Unweighted terms; an empty tensor means the term is absent (contributes 0).
template <typename T>
struct LossTerms {
  Tensor<T> kd_response;
  Tensor<T> kd_feature;
  Tensor<T> edge;
  Tensor<T> adversarial;
  Tensor<T> lce;
  Tensor<T> identity;
  Tensor<T> reconstruction;
};

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  std::array<double, 7> terms{};  // unweighted values in kLossTermNames order
  std::array<double, 7> weighted{};

  double term(std::string_view name) const;
};

// Weighted sum of the present terms. Throws NumericalError naming the first
// non-finite term.
template <typename T>
LossBreakdown<T> total_loss(const LossTerms<T>& terms, const LossWeights& weights);

}  // namespace isrkd
