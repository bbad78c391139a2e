#pragma once

#include <array>
#include <vector>

#include "rsnet/boxes.hpp"
#include "rsnet/layers.hpp"

namespace rsnet {

// Box logits are decoded as distance = exp(min(logit, cap)) stride units.
constexpr double kDistanceLogCap = 10.0;

template <typename T>
struct LevelMaps {
  Tensor<T> box;
  Tensor<T> cls;
};

template <typename T>
std::vector<LevelMaps<T>> level_maps(const std::vector<LevelRaw<T>>& raw);

// Anchor-free decode of every image in the batch. Each cell predicts
// distances (l, t, r, b) from its center; class confidence is the sigmoid of
// the class logit and detections below conf_threshold (or with probability
// exactly zero) are dropped. Boxes are clamped to the image.
template <typename T>
std::vector<std::vector<Detection>> decode_boxes(const std::vector<LevelMaps<T>>& maps, const std::vector<int>& strides,
                                                 std::int64_t image_h, std::int64_t image_w, double conf_threshold);

// Box logits that decode exactly to `box` at the given cell. Requires the
// cell center to lie strictly inside the box.
std::array<double, 4> encode_box(const Box& box, std::int64_t cell_x, std::int64_t cell_y, int stride,
                                 std::int64_t image_h, std::int64_t image_w);

struct Assignment {
  int level = 0;
  std::int64_t image = 0;
  std::int64_t cell_x = 0;
  std::int64_t cell_y = 0;
  std::size_t gt = 0;  // index into that image's ground truth list
};

// Center-cell assignment: each ground truth goes to the level whose size
// range contains its longer side (level i covers (8*stride[i-1], 8*stride[i]]
// pixels, open-ended at both extremes) and to the cell containing its center.
// When two boxes claim one cell the smaller box wins.
std::vector<Assignment> assign_targets(const std::vector<std::vector<GroundTruth>>& gt,
                                       const std::vector<int>& strides, const std::vector<std::array<std::int64_t, 2>>& grid,
                                       std::int64_t image_h, std::int64_t image_w);

struct LossOptions {
  double cls_weight = 1.0;
  double box_weight = 2.5;
};

template <typename T>
struct LossTerms {
  Var<T> total;
  double cls = 0;  // normalized BCE term before weighting
  double box = 0;  // normalized IoU term before weighting
  std::int64_t positives = 0;
};

// total = cls_weight * BCE + box_weight * sum(1 - IoU), both summed terms
// normalized by max(1, number of assigned cells).
template <typename T>
LossTerms<T> detection_loss(const std::vector<LevelRaw<T>>& raw, const std::vector<std::vector<GroundTruth>>& gt,
                            const std::vector<int>& strides, std::int64_t image_h, std::int64_t image_w,
                            const LossOptions& options = {});

}  // namespace rsnet
