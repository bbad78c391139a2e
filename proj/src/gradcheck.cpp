#include "rsnet/gradcheck.hpp"

#include <cmath>

#include "rsnet/ops.hpp"
#include "rsnet/rng.hpp"

namespace rsnet {

GradCheckResult grad_check(const GradCheckFn& f, std::vector<Tensor<double>> inputs, ParameterStore<double>* params,
                           double step, double floor, std::uint64_t seed) {
  Tensor<double> weights;
  const auto evaluate = [&](bool with_grad, std::vector<Tensor<double>>* input_grads) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(with_grad ? tape.input(t) : tape.constant(t));
    Var<double> out = f(tape, vars);
    if (weights.empty()) {
      weights = Tensor<double>(out.shape());
      Rng rng(seed);
      rng.fill_normal(weights.data(), 0.0, 1.0);
    }
    Var<double> loss = ops::weighted_sum(out, weights);
    const double value = loss.value()[0];
    if (with_grad) {
      tape.backward(loss);
      for (std::size_t i = 0; i < vars.size(); ++i) {
        const Tensor<double>* g = tape.grad(vars[i]);
        input_grads->push_back(g ? *g : Tensor<double>(inputs[i].shape()));
      }
    }
    return value;
  };

  if (params) params->zero_grads();
  std::vector<Tensor<double>> analytic;
  evaluate(true, &analytic);

  GradCheckResult result;
  const auto compare = [&](double a, double n, const std::string& where) {
    const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
    ++result.checked;
    if (result.worst.empty() || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst = where;
    }
  };
  const auto numeric = [&](double& slot) {
    const double keep = slot;
    slot = keep + step;
    const double up = evaluate(false, nullptr);
    slot = keep - step;
    const double down = evaluate(false, nullptr);
    slot = keep;
    return (up - down) / (2 * step);
  };

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::int64_t k = 0; k < inputs[i].numel(); ++k) {
      const double n = numeric(inputs[i][k]);
      compare(analytic[i][k], n, "input " + std::to_string(i) + " [" + std::to_string(k) + "]");
    }
  }
  if (params) {
    // Snapshot the analytic parameter gradients before the numeric passes.
    std::vector<Tensor<double>> grads;
    for (const auto& p : *params) grads.push_back(p->grad);
    for (std::size_t pi = 0; pi < params->size(); ++pi) {
      Parameter<double>& p = (*params)[pi];
      if (!p.trainable) continue;
      for (std::int64_t k = 0; k < p.value.numel(); ++k) {
        const double n = numeric(p.value[k]);
        compare(grads[pi][k], n, "param " + p.name + " [" + std::to_string(k) + "]");
      }
    }
  }
  return result;
}

}  // namespace rsnet
