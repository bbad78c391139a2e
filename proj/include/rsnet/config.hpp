#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rsnet/wavelet.hpp"

namespace rsnet {

// Flat UTF-8 `key = value` text; `#` starts a comment, arrays are comma
// lists. Keys keep their file order.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueFile load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<std::int64_t> get_ints(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  const std::vector<std::string>& keys() const { return order_; }
  // Throws UsageError on the first key outside `allowed`.
  void require_known(const std::vector<std::string>& allowed) const;

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

// Shortest text that parses back to the same double.
std::string format_double(double v);

enum class PoolKind { Wavelet, Conv };
enum class BackboneBlock { ContextGuided, C2f };
enum class NeckKind { WaveletStar, C2f };

// Declarative description of the detector graph.
struct ArchConfig {
  std::string name = "custom";
  std::int64_t input_channels = 3;
  std::int64_t input_h = 640;
  std::int64_t input_w = 640;
  std::vector<std::int64_t> stem_widths{16, 32};
  std::vector<std::int64_t> stage_widths{32, 64, 128};
  std::vector<std::int64_t> stage_blocks{1, 2, 2};
  PoolKind backbone_pool = PoolKind::Wavelet;
  BackboneBlock backbone_block = BackboneBlock::ContextGuided;
  WaveletAggregate wavelet_aggregate = WaveletAggregate::Stack;
  int cgb_dilation = 2;
  int cgb_reduction = 16;
  NeckKind neck = NeckKind::WaveletStar;
  std::int64_t neck_width = 64;
  std::int64_t neck_blocks = 1;
  int star_mlp_ratio = 3;
  double star_dropout = 0.0;
  bool head_shared = true;
  std::int64_t head_width = 64;
  std::int64_t num_classes = 1;
  std::vector<int> strides{8, 16, 32};

  static ArchConfig from_kv(const KeyValueFile& kv);
  static ArchConfig load(const std::string& path);
  // Built-in presets: rsnet-ref, rsnet-desk, ablation-baseline, ablation-wcg,
  // ablation-wcg-wsf.
  static ArchConfig preset(const std::string& name);
  static std::vector<std::string> preset_names();
  // A preset name or a path to a config file.
  static ArchConfig resolve(const std::string& name_or_path);

  // Canonical text: every key in a fixed order. from_kv(to_text()) == *this.
  std::string to_text() const;
  // FNV-1a 64 of to_text() without the name line.
  std::uint64_t digest() const;
  // Throws UsageError describing the first violated constraint.
  void validate() const;

  bool operator==(const ArchConfig&) const = default;
};

}  // namespace rsnet
