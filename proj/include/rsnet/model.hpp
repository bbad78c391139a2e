#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "rsnet/config.hpp"
#include "rsnet/count.hpp"
#include "rsnet/detect.hpp"
#include "rsnet/layers.hpp"

namespace rsnet {

// One node of the model graph. `inputs` name the producing nodes (or
// "input"), so concatenations and the neck skip edges show up as several
// inputs.
struct LayerRecord {
  std::string name;
  std::string kind;
  std::string config;
  std::vector<std::string> inputs;
  std::vector<std::string> param_names;
};

struct ModelGraph {
  std::vector<LayerRecord> layers;
  std::vector<std::string> taps;  // pyramid outputs and other named activations

  const LayerRecord* find(const std::string& name) const;
  // Every input refers to an earlier node.
  bool acyclic() const;
  std::vector<std::pair<std::string, std::string>> edges() const;
  std::string text() const;
};

// The detector: stem, three downsampling stages, neck and head built from an
// ArchConfig. Parameters are created deterministically from the seed, each
// layer drawing from its own named stream.
template <typename T>
class Model {
 public:
  Model(const ArchConfig& config, std::uint64_t seed);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ArchConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }
  const ModelGraph& graph() const { return graph_; }
  DetectHead<T>& head() { return head_; }

  // Raw box/class maps for the three levels, strides 8/16/32. Height and
  // width must be divisible by 32. Activations named in graph().taps are
  // copied into ctx.taps when set.
  std::vector<LevelRaw<T>> forward(const Context<T>& ctx, Var<T> images) const;
  // Eval-mode forward without gradients.
  std::vector<LevelMaps<T>> predict(const Tensor<T>& images) const;
  // Eval-mode activation of one tap.
  Tensor<T> activation(const Tensor<T>& images, const std::string& tap) const;

  // Per-layer rows at the given input size (batch 1).
  CountReport count(std::int64_t input_h, std::int64_t input_w) const;
  CountReport count() const { return count(config_.input_h, config_.input_w); }
  // Sum of the closed-form per-layer counts.
  std::int64_t analytic_params() const;

 private:
  using Unit = std::variant<ConvUnit<T>, WaveletPoolLayer<T>, C2fLite<T>, ContextGuided<T>, Star<T>>;
  struct Sequence {
    std::vector<Unit> units;
  };

  Var<T> run(const Context<T>& ctx, const Sequence& seq, Var<T> x) const;
  Shape count_seq(const Sequence& seq, Shape in, CountReport& report) const;
  std::int64_t params_seq(const Sequence& seq) const;
  void record(const std::string& name, const std::string& kind, const std::string& config,
              std::vector<std::string> inputs, std::size_t first_param);

  ArchConfig config_;
  std::uint64_t seed_ = 0;
  ParameterStore<T> store_;
  ModelGraph graph_;

  Sequence stem_;
  std::vector<Sequence> stages_;  // downsample + blocks, P3..P5
  // Neck nodes: top-down n4, out3, bottom-up out4, out5. `down` is the
  // bottom-up downsampler feeding out4/out5.
  std::vector<Sequence> neck_;
  std::vector<Sequence> neck_down_;
  DetectHead<T> head_;
};

// Writes the L2 norm over channels of one activation, min-max scaled to
// 0..255 (all zeros when the range is zero) and bilinearly resized to the
// image size, as a binary PGM. Returns the 8-bit map (row-major).
template <typename T>
std::vector<std::uint8_t> export_heatmap(const Model<T>& model, const Tensor<T>& image, const std::string& tap,
                                         const std::string& path);

// Heat map values without writing a file.
template <typename T>
std::vector<std::uint8_t> heatmap(const Tensor<T>& activation, std::int64_t out_h, std::int64_t out_w);

struct TuneCandidate {
  ArchConfig config;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  bool within_flops = false;
};

// Grid search over stage, neck and head widths; returns every candidate
// sorted by |params - target_params|, candidates inside the FLOPs window first.
std::vector<TuneCandidate> tune_widths(const ArchConfig& base, std::int64_t target_params, std::int64_t target_flops,
                                       double flops_tolerance);

}  // namespace rsnet
