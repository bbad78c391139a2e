#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rsnet/autodiff.hpp"
#include "rsnet/count.hpp"
#include "rsnet/ops.hpp"
#include "rsnet/rng.hpp"
#include "rsnet/wavelet.hpp"

namespace rsnet {

// Per-forward state. Layers hold no mutable state apart from batch-norm
// running statistics, which only change in train mode.
template <typename T>
struct Context {
  Tape<T>& tape;
  Mode mode = Mode::Eval;
  Rng* rng = nullptr;                              // dropout stream
  std::map<std::string, Tensor<T>>* taps = nullptr;  // named activations

  void tap(const std::string& name, Var<T> v) const {
    if (taps) (*taps)[name] = v.value();
  }
};

enum class Norm { None, Batch, Group };
enum class Act { None, SiLU, ReLU6 };

constexpr double kBatchNormMomentum = 0.03;
constexpr double kClassPriorBias = -4.59;  // logit of 0.01

// min(16, channels); callers must keep channels divisible by the result.
std::int64_t group_norm_groups(std::int64_t channels);

struct ConvSpec {
  std::int64_t cin = 0;
  std::int64_t cout = 0;
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  bool bias = false;
  Norm norm = Norm::None;
  Act act = Act::None;
  double init_gain = 1.4142135623730951;  // weight std = gain / sqrt(fan_in)
  double bias_init = 0.0;

  int pad() const { return dilation * (kernel - 1) / 2; }
};

// Convolution with optional bias, normalization and activation.
template <typename T>
class ConvUnit {
 public:
  ConvUnit() = default;
  ConvUnit(std::string name, const ConvSpec& spec, ParameterStore<T>& store, Rng& rng);

  Var<T> forward(const Context<T>& ctx, Var<T> x) const;
  Shape out_shape(const Shape& in) const;
  std::int64_t macs(const Shape& in) const;
  // Closed-form count from the spec alone.
  std::int64_t analytic_params() const;
  Shape count(const Shape& in, CountReport& report) const;

  const std::string& name() const { return name_; }
  const ConvSpec& spec() const { return spec_; }
  std::vector<std::string> param_names() const;

  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  Parameter<T>* running_mean = nullptr;
  Parameter<T>* running_var = nullptr;

 private:
  std::string name_;
  ConvSpec spec_;
};

// Learned-free Haar analysis followed by a 1x1 convolution (with bias).
template <typename T>
class WaveletPoolLayer {
 public:
  WaveletPoolLayer() = default;
  WaveletPoolLayer(std::string name, std::int64_t cin, std::int64_t cout, WaveletAggregate aggregate,
                   ParameterStore<T>& store, Rng& rng);

  Var<T> forward(const Context<T>& ctx, Var<T> x) const;
  std::int64_t analytic_params() const;
  Shape count(const Shape& in, CountReport& report) const;

  Parameter<T>* pointwise = nullptr;
  Parameter<T>* bias = nullptr;

 private:
  std::string name_;
  std::int64_t cin_ = 0, cout_ = 0;
  WaveletAggregate aggregate_ = WaveletAggregate::Stack;
};

// YOLOv8-style C2f reduced to a single bottleneck pair ("c2f-lite"):
// 1x1 expand, split in halves, two 3x3 convs with a residual on the second
// half, concat of the three pieces, 1x1 fuse.
template <typename T>
class C2fLite {
 public:
  C2fLite() = default;
  C2fLite(std::string name, std::int64_t cin, std::int64_t cout, bool shortcut, ParameterStore<T>& store, Rng& rng);

  Var<T> forward(const Context<T>& ctx, Var<T> x) const;
  std::int64_t analytic_params() const;
  Shape count(const Shape& in, CountReport& report) const;

 private:
  std::string name_;
  std::int64_t hidden_ = 0;
  bool shortcut_ = true;
  ConvUnit<T> cv1_, m1_, m2_, cv2_;
};

struct ContextGuidedConfig {
  std::int64_t c_in = 0;
  std::int64_t c_out = 0;
  int dilation = 2;
  int reduction = 16;
};

// Context-guided block: 1x1 reduce to n = c_out/2, depthwise local (3x3) and
// dilated surrounding (3x3, rate d) branches, concat + batch norm + SiLU
// into J, squeeze-and-excite gate G = J * sigmoid(fc2(silu(fc1(gap(J))))),
// output = shortcut(x) + G. The shortcut is x itself when c_in == c_out and a
// 1x1 conv + BN projection otherwise.
template <typename T>
class ContextGuided {
 public:
  ContextGuided() = default;
  ContextGuided(std::string name, const ContextGuidedConfig& cfg, ParameterStore<T>& store, Rng& rng);

  Var<T> forward(const Context<T>& ctx, Var<T> x) const;
  std::int64_t analytic_params() const;
  Shape count(const Shape& in, CountReport& report) const;

  const ContextGuidedConfig& config() const { return cfg_; }
  // Gate expand conv; driving its bias to -inf disables the context path.
  const ConvUnit<T>& gate_expand() const { return fc2_; }

 private:
  std::string name_;
  ContextGuidedConfig cfg_;
  std::optional<ConvUnit<T>> proj_;
  ConvUnit<T> reduce_, local_, surround_, fc1_, fc2_;
  Parameter<T>* joint_gamma_ = nullptr;
  Parameter<T>* joint_beta_ = nullptr;
  Parameter<T>* joint_mean_ = nullptr;
  Parameter<T>* joint_var_ = nullptr;
};

struct StarConfig {
  std::int64_t channels = 0;
  int mlp_ratio = 3;
  double dropout_p = 0.0;
};

// Star block: 7x7 depthwise conv (+BN), two 1x1 branches to
// mlp_ratio * C, relu6(x1) * x2, 1x1 back to C, 7x7 depthwise, residual with
// dropout on the new branch.
template <typename T>
class Star {
 public:
  Star() = default;
  Star(std::string name, const StarConfig& cfg, ParameterStore<T>& store, Rng& rng);

  Var<T> forward(const Context<T>& ctx, Var<T> x) const;
  std::int64_t analytic_params() const;
  Shape count(const Shape& in, CountReport& report) const;

  // The 1x1 projection applied to the product (zeroing it leaves y = x).
  const ConvUnit<T>& pointwise_out() const { return g_; }

 private:
  std::string name_;
  StarConfig cfg_;
  ConvUnit<T> dw1_, f1_, f2_, g_, dw2_;
};

// Raw per-level head output: box (N x 4 x H x W, already multiplied by the
// level scale) and class logits (N x num_classes x H x W).
template <typename T>
struct LevelRaw {
  Var<T> box;
  Var<T> cls;
};

struct HeadConfig {
  std::vector<std::int64_t> level_channels;
  std::int64_t hidden = 64;
  std::int64_t num_classes = 1;
  bool shared = true;
};

// Lightweight shared head: per-level 1x1 conv+GN adapters to the hidden
// width, then the same two 3x3 conv+GN+SiLU layers and the same 1x1 box/class
// projections at every level; box logits are multiplied by a learnable
// per-level scale. With shared = false every level owns its own copy of the
// stack and projections (the unshared reference).
template <typename T>
class DetectHead {
 public:
  DetectHead() = default;
  DetectHead(std::string name, const HeadConfig& cfg, ParameterStore<T>& store, Rng& rng);

  std::vector<LevelRaw<T>> forward(const Context<T>& ctx, const std::vector<Var<T>>& features) const;
  std::int64_t analytic_params() const;
  void count(const std::vector<Shape>& in, CountReport& report) const;

  const HeadConfig& config() const { return cfg_; }
  Parameter<T>& scale(std::size_t level) { return *scales_[level]; }
  // Tower layers used at `level` (the same objects for every level when shared).
  const ConvUnit<T>& tower(std::size_t level, int index) const;

 private:
  std::size_t stack_index(std::size_t level) const { return cfg_.shared ? 0 : level; }

  std::string name_;
  HeadConfig cfg_;
  std::vector<ConvUnit<T>> adapters_;
  std::vector<std::array<ConvUnit<T>, 2>> towers_;
  std::vector<ConvUnit<T>> box_;
  std::vector<ConvUnit<T>> cls_;
  std::vector<Parameter<T>*> scales_;
};

}  // namespace rsnet
