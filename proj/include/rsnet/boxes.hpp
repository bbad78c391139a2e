#pragma once

#include <algorithm>

namespace rsnet {

// Axis-aligned box in normalized image coordinates (center x/y, width, height).
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return std::max(0.0, w) * std::max(0.0, h); }

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return Box{0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
  }
};

struct GroundTruth {
  int cls = 0;
  Box box;
};

struct Detection {
  int cls = 0;
  double conf = 0;
  Box box;
};

// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b);

}  // namespace rsnet
