#include "isrkd/adam.hpp"

#include <cmath>
#include <string>

namespace isrkd {

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.beta1 > 0 && options_.beta1 < 1 && options_.beta2 > 0 && options_.beta2 < 1)) {
    throw ConfigError("adam: betas must lie in (0, 1)");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void Adam<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw Error("adam: parameter " + std::to_string(i) + " " + shape_str(params_[i].shape()) +
                  " has no gradient");
    }
  }
  ++step_count_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, double(step_count_));
  const double correction2 = 1.0 - std::pow(b2, double(step_count_));
  const double lr = options_.learning_rate, eps = options_.epsilon;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto values = params_[i].mutable_data();
    auto grad = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad[k];
      m[k] = static_cast<T>(b1 * m[k] + (1.0 - b1) * g);
      v[k] = static_cast<T>(b2 * v[k] + (1.0 - b2) * g * g);
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      values[k] = static_cast<T>(values[k] - lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace isrkd
