#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rsnet/autodiff.hpp"

namespace rsnet {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst;  // "input 0 [12]" or "param <name> [3]"
  std::size_t checked = 0;
};

// Builds the function on a fresh tape for every evaluation.
using GradCheckFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Central finite differences against reverse mode on the scalar
// sum(f(inputs) * w) with fixed random weights w. Every element of every
// input and every trainable parameter in `params` is perturbed. Relative
// error is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const GradCheckFn& f, std::vector<Tensor<double>> inputs,
                           ParameterStore<double>* params = nullptr, double step = 1e-5, double floor = 1e-5,
                           std::uint64_t seed = 7);

}  // namespace rsnet
