#pragma once

#include <array>
#include <string>
#include <vector>

#include "rsnet/boxes.hpp"

namespace rsnet {

// Greedy non-maximum suppression. Candidates are visited by descending
// confidence, ties by ascending cx, then input order; a candidate is dropped
// when it overlaps an already kept box of the same class with IoU above
// iou_threshold. The result is in visit order.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

struct EvalImage {
  std::string id;
  std::vector<Detection> detections;
  std::vector<GroundTruth> gt;
};

inline constexpr std::array<double, 10> kIouThresholds{0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

struct ClassAp {
  int cls = 0;
  std::int64_t num_gt = 0;
  std::array<double, 10> ap{};  // per IoU threshold
  std::vector<PrPoint> curve;   // raw precision/recall at IoU 0.50, one point per detection
};

struct APResult {
  std::vector<ClassAp> classes;  // classes with at least one ground truth box
  double map50 = 0;
  double map50_95 = 0;
  std::int64_t num_images = 0;
  std::int64_t num_detections = 0;

  std::string table() const;
  std::string csv() const;
};

// All-point interpolated AP of one ranked list: `tp` flags in ranking order.
double average_precision(const std::vector<bool>& tp, std::int64_t num_gt, std::vector<PrPoint>* curve = nullptr);

// Per image, detections of a class are visited by descending confidence
// (ties keep input order) and each matches the unmatched ground truth of that
// class with the highest IoU >= threshold, ties going to the earliest index.
// Classes without ground truth are left out of the means. Duplicate image ids
// raise DataError.
APResult evaluate(const std::vector<EvalImage>& images);

}  // namespace rsnet
