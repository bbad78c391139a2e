#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsnet/tensor.hpp"

namespace rsnet {

// One row per layer: trainable parameter count and multiply-accumulates for
// a single image at the counted input size.
struct CountRow {
  std::string name;
  std::string kind;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  Shape out{};
  std::vector<std::string> param_names;
};

// FLOPs are reported as 2 x MACs. Convolutions (including the fixed wavelet
// filters) and normalization layers are counted; activations, additions and
// products are not.
struct CountReport {
  std::vector<CountRow> rows;
  std::int64_t input_h = 0;
  std::int64_t input_w = 0;

  std::int64_t total_params() const;
  std::int64_t total_macs() const;
  std::int64_t total_flops() const { return 2 * total_macs(); }
  CountRow* find(const std::string& name);

  std::string table() const;
  std::string csv() const;
};

}  // namespace rsnet
