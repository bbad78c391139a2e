#pragma once

#include <cstdint>
#include <vector>

#include "rsnet/autodiff.hpp"

namespace rsnet {

// Defaults follow the reference training recipe (lr 0.002, momentum 0.937
// read as beta1, weight decay 5e-4).
struct AdamWOptions {
  double lr = 0.002;
  double beta1 = 0.937;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

// AdamW with decoupled weight decay: the decay shrinks the value directly and
// is never folded into the gradient. Only trainable parameters with
// decay == true are decayed.
template <typename T>
class AdamW {
 public:
  AdamW(ParameterStore<T>& params, AdamWOptions options);

  void step();
  void set_lr(double lr);
  double lr() const { return options_.lr; }
  std::int64_t step_count() const { return step_; }
  const AdamWOptions& options() const { return options_; }

  // Moment buffers, parallel to the trainable parameters in store order.
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  const std::vector<Parameter<T>*>& parameters() const { return params_; }
  void restore(std::int64_t step) { step_ = step; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  AdamWOptions options_;
  std::int64_t step_ = 0;
};

}  // namespace rsnet
