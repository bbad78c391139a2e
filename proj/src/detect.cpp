#include "rsnet/detect.hpp"

#include <cmath>
#include <limits>

namespace rsnet {

namespace {

struct Corners {
  double x1, y1, x2, y2;
};

// IoU of two corner boxes and its gradient with respect to the first box.
double iou_with_grad(const Corners& p, const Corners& g, std::array<double, 4>* grad) {
  const double ix1 = std::max(p.x1, g.x1), iy1 = std::max(p.y1, g.y1);
  const double ix2 = std::min(p.x2, g.x2), iy2 = std::min(p.y2, g.y2);
  const double iw = std::max(0.0, ix2 - ix1), ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  const double pw = p.x2 - p.x1, ph = p.y2 - p.y1;
  const double area_p = pw * ph;
  const double area_g = (g.x2 - g.x1) * (g.y2 - g.y1);
  const double uni = area_p + area_g - inter;
  if (uni <= 0) {
    if (grad) grad->fill(0.0);
    return 0.0;
  }
  const double value = inter / uni;
  if (grad) {
    // d(I/U) = dI * (1/U + I/U^2) - dA_p * I/U^2
    const double k_inter = 1.0 / uni + inter / (uni * uni);
    const double k_area = inter / (uni * uni);
    const double dI_dx1 = (iw > 0 && p.x1 > g.x1) ? -ih : 0.0;
    const double dI_dx2 = (iw > 0 && p.x2 < g.x2) ? ih : 0.0;
    const double dI_dy1 = (ih > 0 && p.y1 > g.y1) ? -iw : 0.0;
    const double dI_dy2 = (ih > 0 && p.y2 < g.y2) ? iw : 0.0;
    (*grad)[0] = dI_dx1 * k_inter + ph * k_area;
    (*grad)[1] = dI_dy1 * k_inter + pw * k_area;
    (*grad)[2] = dI_dx2 * k_inter - ph * k_area;
    (*grad)[3] = dI_dy2 * k_inter - pw * k_area;
  }
  return value;
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

template <typename T>
std::vector<LevelMaps<T>> level_maps(const std::vector<LevelRaw<T>>& raw) {
  std::vector<LevelMaps<T>> maps;
  for (const auto& r : raw) maps.push_back(LevelMaps<T>{r.box.value(), r.cls.value()});
  return maps;
}

template <typename T>
std::vector<std::vector<Detection>> decode_boxes(const std::vector<LevelMaps<T>>& maps, const std::vector<int>& strides,
                                                 std::int64_t image_h, std::int64_t image_w, double conf_threshold) {
  if (maps.size() != strides.size()) throw UsageError("decode_boxes: one stride per level required");
  const std::int64_t batch = maps.empty() ? 0 : maps.front().cls.shape().n;
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(batch));
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const Tensor<T>& box = maps[l].box;
    const Tensor<T>& cls = maps[l].cls;
    const Shape s = cls.shape();
    if (box.shape() != Shape{s.n, 4, s.h, s.w}) throw ShapeError("decode_boxes: box map " + box.shape().str());
    const double stride = strides[l];
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t y = 0; y < s.h; ++y) {
        for (std::int64_t x = 0; x < s.w; ++x) {
          const double cx = (static_cast<double>(x) + 0.5) * stride;
          const double cy = (static_cast<double>(y) + 0.5) * stride;
          const auto dist = [&](int k) {
            return std::exp(std::min(static_cast<double>(box.at(n, k, y, x)), kDistanceLogCap)) * stride;
          };
          const double x1 = std::clamp(cx - dist(0), 0.0, static_cast<double>(image_w));
          const double y1 = std::clamp(cy - dist(1), 0.0, static_cast<double>(image_h));
          const double x2 = std::clamp(cx + dist(2), 0.0, static_cast<double>(image_w));
          const double y2 = std::clamp(cy + dist(3), 0.0, static_cast<double>(image_h));
          if (x2 <= x1 || y2 <= y1) continue;
          for (std::int64_t c = 0; c < s.c; ++c) {
            const double conf = stable_sigmoid(static_cast<double>(cls.at(n, c, y, x)));
            if (conf <= 0.0 || conf < conf_threshold) continue;
            out[static_cast<std::size_t>(n)].push_back(
                Detection{static_cast<int>(c), conf,
                          Box::from_corners(x1 / static_cast<double>(image_w), y1 / static_cast<double>(image_h),
                                            x2 / static_cast<double>(image_w), y2 / static_cast<double>(image_h))});
          }
        }
      }
    }
  }
  return out;
}

std::array<double, 4> encode_box(const Box& box, std::int64_t cell_x, std::int64_t cell_y, int stride,
                                 std::int64_t image_h, std::int64_t image_w) {
  const double cx = (static_cast<double>(cell_x) + 0.5) * stride;
  const double cy = (static_cast<double>(cell_y) + 0.5) * stride;
  const double d[4] = {cx - box.x1() * static_cast<double>(image_w), cy - box.y1() * static_cast<double>(image_h),
                       box.x2() * static_cast<double>(image_w) - cx, box.y2() * static_cast<double>(image_h) - cy};
  std::array<double, 4> out{};
  for (int k = 0; k < 4; ++k) {
    if (d[k] <= 0) throw UsageError("encode_box: cell center lies outside the box");
    out[static_cast<std::size_t>(k)] = std::log(d[k] / stride);
  }
  return out;
}

std::vector<Assignment> assign_targets(const std::vector<std::vector<GroundTruth>>& gt,
                                       const std::vector<int>& strides,
                                       const std::vector<std::array<std::int64_t, 2>>& grid, std::int64_t image_h,
                                       std::int64_t image_w) {
  std::vector<Assignment> out;
  for (std::size_t n = 0; n < gt.size(); ++n) {
    // (level, y, x) -> index into out
    std::vector<std::vector<std::ptrdiff_t>> owner(strides.size());
    for (std::size_t l = 0; l < strides.size(); ++l)
      owner[l].assign(static_cast<std::size_t>(grid[l][0] * grid[l][1]), -1);
    for (std::size_t g = 0; g < gt[n].size(); ++g) {
      const Box& b = gt[n][g].box;
      const double wpx = b.w * static_cast<double>(image_w), hpx = b.h * static_cast<double>(image_h);
      const double side = std::max(wpx, hpx);
      std::size_t level = strides.size() - 1;
      for (std::size_t l = 0; l < strides.size(); ++l) {
        if (side <= 8.0 * strides[l]) {
          level = l;
          break;
        }
      }
      const std::int64_t gh = grid[level][0], gw = grid[level][1];
      const std::int64_t x = std::clamp<std::int64_t>(
          static_cast<std::int64_t>(std::floor(b.cx * static_cast<double>(image_w) / strides[level])), 0, gw - 1);
      const std::int64_t y = std::clamp<std::int64_t>(
          static_cast<std::int64_t>(std::floor(b.cy * static_cast<double>(image_h) / strides[level])), 0, gh - 1);
      std::ptrdiff_t& slot = owner[level][static_cast<std::size_t>(y * gw + x)];
      const Assignment a{static_cast<int>(level), static_cast<std::int64_t>(n), x, y, g};
      if (slot < 0) {
        slot = static_cast<std::ptrdiff_t>(out.size());
        out.push_back(a);
      } else if (b.area() < gt[n][out[static_cast<std::size_t>(slot)].gt].box.area()) {
        out[static_cast<std::size_t>(slot)] = a;
      }
    }
  }
  return out;
}

template <typename T>
LossTerms<T> detection_loss(const std::vector<LevelRaw<T>>& raw, const std::vector<std::vector<GroundTruth>>& gt,
                            const std::vector<int>& strides, std::int64_t image_h, std::int64_t image_w,
                            const LossOptions& options) {
  if (raw.empty() || raw.size() != strides.size()) throw UsageError("detection_loss: one stride per level required");
  const std::int64_t batch = raw.front().cls.shape().n;
  if (static_cast<std::int64_t>(gt.size()) != batch) {
    throw UsageError("detection_loss: ground truth for " + std::to_string(gt.size()) + " images, batch of " +
                     std::to_string(batch));
  }
  for (const auto& image : gt) {
    for (const auto& g : image) {
      if (!(g.box.w > 0 && g.box.h > 0)) throw DataError("detection_loss: degenerate ground-truth box");
      if (g.cls < 0 || g.cls >= raw.front().cls.shape().c) throw DataError("detection_loss: class id out of range");
    }
  }
  Tape<T>& tape = *raw.front().cls.tape;
  std::vector<std::array<std::int64_t, 2>> grid;
  for (const auto& r : raw) grid.push_back({r.cls.shape().h, r.cls.shape().w});
  const std::vector<Assignment> assigned = assign_targets(gt, strides, grid, image_h, image_w);
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, assigned.size()));

  std::vector<Tensor<T>> targets;
  for (const auto& r : raw) targets.emplace_back(r.cls.shape());
  for (const auto& a : assigned) {
    const GroundTruth& g = gt[static_cast<std::size_t>(a.image)][a.gt];
    targets[static_cast<std::size_t>(a.level)].at(a.image, g.cls, a.cell_y, a.cell_x) = T(1);
  }
  Var<T> bce = ops::bce_with_logits_sum(raw[0].cls, targets[0]);
  for (std::size_t l = 1; l < raw.size(); ++l) bce = ops::add(bce, ops::bce_with_logits_sum(raw[l].cls, targets[l]));

  // Fused sum of (1 - IoU) over assigned cells.
  struct Item {
    Assignment a;
    Corners gt;
  };
  std::vector<Item> items;
  for (const auto& a : assigned) {
    const Box& b = gt[static_cast<std::size_t>(a.image)][a.gt].box;
    items.push_back(Item{a, Corners{b.x1() * static_cast<double>(image_w), b.y1() * static_cast<double>(image_h),
                                    b.x2() * static_cast<double>(image_w), b.y2() * static_cast<double>(image_h)}});
  }
  std::vector<Var<T>> boxes;
  for (const auto& r : raw) boxes.push_back(r.box);
  const auto predicted = [strides](const Tensor<T>& map, const Assignment& a, std::array<double, 4>& dist) {
    const double s = strides[static_cast<std::size_t>(a.level)];
    const double cx = (static_cast<double>(a.cell_x) + 0.5) * s;
    const double cy = (static_cast<double>(a.cell_y) + 0.5) * s;
    for (int k = 0; k < 4; ++k) {
      dist[static_cast<std::size_t>(k)] =
          std::exp(std::min(static_cast<double>(map.at(a.image, k, a.cell_y, a.cell_x)), kDistanceLogCap)) * s;
    }
    return Corners{cx - dist[0], cy - dist[1], cx + dist[2], cy + dist[3]};
  };
  double iou_loss = 0;
  for (const auto& it : items) {
    std::array<double, 4> dist{};
    iou_loss += 1.0 - iou_with_grad(predicted(boxes[static_cast<std::size_t>(it.a.level)].value(), it.a, dist), it.gt,
                                    nullptr);
  }
  Var<T> box_term = tape.record(
      "iou_loss", Tensor<T>::scalar(static_cast<T>(iou_loss)), boxes,
      [boxes, items, predicted](Tape<T>& t, const Tensor<T>& gout) {
        for (const auto& it : items) {
          const Var<T> v = boxes[static_cast<std::size_t>(it.a.level)];
          Tensor<T>* g = t.grad_buffer(v);
          if (!g) continue;
          const Tensor<T>& map = v.value();
          std::array<double, 4> dist{};
          std::array<double, 4> d_iou{};
          iou_with_grad(predicted(map, it.a, dist), it.gt, &d_iou);
          // corners: x1 = cx - d_l, y1 = cy - d_t, x2 = cx + d_r, y2 = cy + d_b; d = exp(logit) * s
          const double sign[4] = {-1.0, -1.0, 1.0, 1.0};
          for (int k = 0; k < 4; ++k) {
            const T logit = map.at(it.a.image, k, it.a.cell_y, it.a.cell_x);
            if (static_cast<double>(logit) >= kDistanceLogCap) continue;
            const double d_loss = -d_iou[static_cast<std::size_t>(k)] * sign[k] * dist[static_cast<std::size_t>(k)];
            g->at(it.a.image, k, it.a.cell_y, it.a.cell_x) += static_cast<T>(gout[0] * d_loss);
          }
        }
      });

  LossTerms<T> terms;
  terms.positives = static_cast<std::int64_t>(assigned.size());
  terms.cls = static_cast<double>(bce.value()[0]) * norm;
  terms.box = iou_loss * norm;
  terms.total = ops::add(ops::weighted_sum(bce, Tensor<T>::scalar(static_cast<T>(options.cls_weight * norm))),
                         ops::weighted_sum(box_term, Tensor<T>::scalar(static_cast<T>(options.box_weight * norm))));
  return terms;
}

template std::vector<LevelMaps<float>> level_maps(const std::vector<LevelRaw<float>>&);
template std::vector<LevelMaps<double>> level_maps(const std::vector<LevelRaw<double>>&);
template std::vector<std::vector<Detection>> decode_boxes(const std::vector<LevelMaps<float>>&, const std::vector<int>&,
                                                          std::int64_t, std::int64_t, double);
template std::vector<std::vector<Detection>> decode_boxes(const std::vector<LevelMaps<double>>&,
                                                          const std::vector<int>&, std::int64_t, std::int64_t, double);
template LossTerms<float> detection_loss(const std::vector<LevelRaw<float>>&,
                                         const std::vector<std::vector<GroundTruth>>&, const std::vector<int>&,
                                         std::int64_t, std::int64_t, const LossOptions&);
template LossTerms<double> detection_loss(const std::vector<LevelRaw<double>>&,
                                          const std::vector<std::vector<GroundTruth>>&, const std::vector<int>&,
                                          std::int64_t, std::int64_t, const LossOptions&);

}  // namespace rsnet
