#include "rsnet/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>

#include "rsnet/error.hpp"

namespace rsnet {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (detections[a].conf != detections[b].conf) return detections[a].conf > detections[b].conf;
    return detections[a].box.cx < detections[b].box.cx;
  });
  std::vector<Detection> kept;
  for (std::size_t i : order) {
    const Detection& d = detections[i];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.cls == d.cls && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

double average_precision(const std::vector<bool>& tp, std::int64_t num_gt, std::vector<PrPoint>* curve) {
  if (num_gt <= 0) return 0.0;
  std::vector<PrPoint> pts;
  pts.reserve(tp.size());
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    hits += tp[i] ? 1 : 0;
    pts.push_back(PrPoint{double(hits) / double(num_gt), double(hits) / double(i + 1)});
  }
  if (curve) *curve = pts;
  // Precision envelope from the right, then area under the step function.
  double ap = 0.0, best = 0.0, prev_recall = 0.0;
  std::vector<double> envelope(pts.size());
  for (std::size_t i = pts.size(); i-- > 0;) {
    best = std::max(best, pts[i].precision);
    envelope[i] = best;
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].recall > prev_recall) {
      ap += (pts[i].recall - prev_recall) * envelope[i];
      prev_recall = pts[i].recall;
    }
  }
  return ap;
}

APResult evaluate(const std::vector<EvalImage>& images) {
  std::set<std::string> ids;
  std::set<int> classes;
  APResult result;
  result.num_images = static_cast<std::int64_t>(images.size());
  for (const auto& im : images) {
    if (!ids.insert(im.id).second) throw DataError("evaluate: duplicate image id '" + im.id + "'");
    for (const auto& g : im.gt) classes.insert(g.cls);
    result.num_detections += static_cast<std::int64_t>(im.detections.size());
  }

  for (int cls : classes) {
    ClassAp ca;
    ca.cls = cls;
    for (const auto& im : images)
      for (const auto& g : im.gt) ca.num_gt += g.cls == cls ? 1 : 0;

    // Global ranking of this class's detections: confidence desc, then image
    // order, then position in the image's list.
    struct Ref {
      std::size_t image, det;
      double conf;
    };
    std::vector<Ref> ranked;
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (std::size_t j = 0; j < images[i].detections.size(); ++j) {
        if (images[i].detections[j].cls == cls) ranked.push_back(Ref{i, j, images[i].detections[j].conf});
      }
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ref& a, const Ref& b) { return a.conf > b.conf; });

    for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
      const double thr = kIouThresholds[t];
      std::vector<std::vector<bool>> used(images.size());
      for (std::size_t i = 0; i < images.size(); ++i) used[i].assign(images[i].gt.size(), false);
      std::vector<bool> tp;
      tp.reserve(ranked.size());
      for (const Ref& r : ranked) {
        const Detection& d = images[r.image].detections[r.det];
        const auto& gts = images[r.image].gt;
        double best = -1.0;
        std::size_t best_k = gts.size();
        for (std::size_t k = 0; k < gts.size(); ++k) {
          if (gts[k].cls != cls || used[r.image][k]) continue;
          const double o = iou(d.box, gts[k].box);
          if (o >= thr && o > best) {
            best = o;
            best_k = k;
          }
        }
        if (best_k < gts.size()) used[r.image][best_k] = true;
        tp.push_back(best_k < gts.size());
      }
      ca.ap[t] = average_precision(tp, ca.num_gt, t == 0 ? &ca.curve : nullptr);
    }
    result.classes.push_back(std::move(ca));
  }

  if (!result.classes.empty()) {
    for (const auto& c : result.classes) {
      result.map50 += c.ap[0];
      result.map50_95 += std::accumulate(c.ap.begin(), c.ap.end(), 0.0) / double(c.ap.size());
    }
    result.map50 /= double(result.classes.size());
    result.map50_95 /= double(result.classes.size());
  }
  return result;
}

std::string APResult::table() const {
  std::string s = "# AP: all-point interpolation, greedy matching (ties to the earliest ground truth)\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "images %lld, detections %lld\n", static_cast<long long>(num_images),
                static_cast<long long>(num_detections));
  s += buf;
  std::snprintf(buf, sizeof buf, "%-6s %8s %9s %9s %9s\n", "class", "gt", "AP50", "AP75", "AP50:95");
  s += buf;
  for (const auto& c : classes) {
    const double avg = std::accumulate(c.ap.begin(), c.ap.end(), 0.0) / double(c.ap.size());
    std::snprintf(buf, sizeof buf, "%-6d %8lld %9.4f %9.4f %9.4f\n", c.cls, static_cast<long long>(c.num_gt), c.ap[0],
                  c.ap[5], avg);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "mAP50 %.4f  mAP50:95 %.4f\n", map50, map50_95);
  return s + buf;
}

std::string APResult::csv() const {
  std::string s = "class,num_gt";
  char buf[64];
  for (double t : kIouThresholds) {
    std::snprintf(buf, sizeof buf, ",ap%.2f", t);
    s += buf;
  }
  s += ",ap50_95\n";
  std::array<double, 10> mean{};
  std::int64_t total_gt = 0;
  for (const auto& c : classes) {
    s += std::to_string(c.cls) + "," + std::to_string(c.num_gt);
    for (std::size_t t = 0; t < c.ap.size(); ++t) {
      std::snprintf(buf, sizeof buf, ",%.10f", c.ap[t]);
      s += buf;
      mean[t] += c.ap[t] / double(classes.size());
    }
    std::snprintf(buf, sizeof buf, ",%.10f\n", std::accumulate(c.ap.begin(), c.ap.end(), 0.0) / double(c.ap.size()));
    s += buf;
    total_gt += c.num_gt;
  }
  // Class means; ap0.50 is mAP50 and the last column mAP50:95.
  s += "all," + std::to_string(total_gt);
  for (double v : mean) {
    std::snprintf(buf, sizeof buf, ",%.10f", v);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, ",%.10f\n", map50_95);
  return s + buf;
}

}  // namespace rsnet
