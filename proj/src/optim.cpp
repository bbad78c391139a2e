#include "rsnet/optim.hpp"

#include <cmath>

namespace rsnet {

template <typename T>
AdamW<T>::AdamW(ParameterStore<T>& params, AdamWOptions options) : options_(options) {
  if (!(options_.lr > 0)) throw UsageError("AdamW: learning rate must be positive");
  for (auto& p : params) {
    if (!p->trainable) continue;
    params_.push_back(p.get());
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void AdamW<T>::set_lr(double lr) {
  if (!(lr > 0)) throw UsageError("AdamW: learning rate must be positive");
  options_.lr = lr;
}

template <typename T>
void AdamW<T>::step() {
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const T decay = static_cast<T>(1.0 - options_.lr * options_.weight_decay);
  const T step_size = static_cast<T>(options_.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(options_.eps);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter<T>& p = *params_[i];
    T* value = p.value.ptr();
    const T* grad = p.grad.ptr();
    T* m = m_[i].ptr();
    T* v = v_[i].ptr();
    const T d = p.decay ? decay : T(1);
    for (std::int64_t k = 0; k < p.value.numel(); ++k) {
      const T g = grad[k];
      m[k] = tb1 * m[k] + (T(1) - tb1) * g;
      v[k] = tb2 * v[k] + (T(1) - tb2) * g * g;
      value[k] = value[k] * d - step_size * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace rsnet
