#pragma once

#include <optional>
#include <vector>

#include "rsnet/autodiff.hpp"
#include "rsnet/rng.hpp"

// Differentiable operations on Tape variables. Every op validates shapes,
// records its output together with a backward rule, and raises NumericError
// when the output is not finite. Per-channel vectors (bias, norm gains) use
// shape 1xCx1x1; scalars use 1x1x1x1.
namespace rsnet::ops {

struct ConvOptions {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int groups = 1;
};

// Output extent of a convolution along one axis.
std::int64_t conv_out_size(std::int64_t in, int kernel, const ConvOptions& o);

// Cross-correlation with zero padding. w: (C_out, C_in/groups, kH, kW).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, const ConvOptions& opt);

// Adjoint of conv2d (no padding, no dilation). w: (C_in, C_out/groups, kH, kW).
// Output extent (H - 1) * stride + kH.
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, int stride, int groups = 1);

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

// Train mode normalizes by batch statistics and updates the running
// statistics in place (unbiased variance); eval mode uses them.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                  const BatchNormOptions& opt = {});

template <typename T>
Var<T> group_norm(Var<T> x, int num_groups, Var<T> gamma, Var<T> beta, double eps = 1e-5);

template <typename T>
Var<T> relu6(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> silu(Var<T> x);
// exp(min(x, cap)); gradient is zero where the cap is active.
template <typename T>
Var<T> exp_capped(Var<T> x, T cap);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
// x (NxCxHxW) scaled per channel by g (NxCx1x1).
template <typename T>
Var<T> mul_channel(Var<T> x, Var<T> g);
// x scaled by a 1x1x1x1 variable.
template <typename T>
Var<T> mul_scalar(Var<T> x, Var<T> s);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_channels(Var<T> x, std::int64_t begin, std::int64_t count);

template <typename T>
Var<T> global_avg_pool(Var<T> x);
template <typename T>
Var<T> upsample_nearest2x(Var<T> x);

// Eval mode, or p == 0, returns x itself.
template <typename T>
Var<T> dropout(Var<T> x, double p, Mode mode, Rng& rng);

// Reductions to a 1x1x1x1 scalar.
template <typename T>
Var<T> sum(Var<T> x);
// sum(x * weights) with constant weights.
template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights);
// Summed binary cross-entropy of logits against constant targets in [0, 1].
template <typename T>
Var<T> bce_with_logits_sum(Var<T> logits, const Tensor<T>& targets);

}  // namespace rsnet::ops
