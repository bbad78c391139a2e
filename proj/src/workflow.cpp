#include "rsnet/workflow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "rsnet/error.hpp"

namespace rsnet {

namespace {

std::int64_t round_up32(std::int64_t v) { return (v + 31) / 32 * 32; }

// Per-epoch permutation of sample indices.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).split("shuffle").split(static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace

std::int64_t steps_per_epoch(std::int64_t samples, int batch_size) {
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  return (samples + batch_size - 1) / batch_size;
}

std::int64_t total_steps(const TrainOptions& o, std::int64_t samples) {
  const std::int64_t full = steps_per_epoch(samples, o.batch_size) * o.epochs;
  return o.max_steps > 0 ? std::min(full, o.max_steps) : full;
}

double learning_rate(const TrainOptions& o, std::int64_t step, std::int64_t total) {
  if (total <= 0) return o.lr;
  const double warm = std::max(1.0, o.warmup_fraction * double(total));
  if (double(step) < warm) return o.lr * (0.1 + 0.9 * double(step) / warm);
  const double t = std::clamp((double(step) - warm) / std::max(1.0, double(total) - warm), 0.0, 1.0);
  const double floor = o.lr * o.final_lr_ratio;
  return floor + (o.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

std::vector<LossLogRow> train(Model<float>& model, AdamW<float>& optimizer, const Dataset& data,
                              const TrainOptions& options, const std::function<void(const LossLogRow&)>& on_step) {
  if (data.samples.empty()) throw DataError("training set is empty");
  if (options.epochs < 1) throw UsageError("epochs must be >= 1");
  const std::int64_t n = static_cast<std::int64_t>(data.samples.size());
  const std::int64_t per_epoch = steps_per_epoch(n, options.batch_size);
  const std::int64_t total = total_steps(options, n);
  const std::int64_t channels = model.config().input_channels;
  const std::vector<int>& strides = model.config().strides;
  const Rng base(options.seed);

  std::vector<LossLogRow> log;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order;
  for (std::int64_t step = optimizer.step_count(); step < total; ++step) {
    const std::int64_t epoch = step / per_epoch;
    if (epoch != cached_epoch) {
      order = epoch_order(options.seed, epoch, data.samples.size());
      cached_epoch = epoch;
    }
    const std::int64_t begin = (step % per_epoch) * options.batch_size;
    const std::int64_t end = std::min(n, begin + options.batch_size);
    std::vector<const Sample*> batch;
    std::vector<std::uint8_t> hflip, vflip;
    std::vector<std::vector<GroundTruth>> gt;
    Rng flip_rng = base.split("flip").split(static_cast<std::uint64_t>(step));
    for (std::int64_t i = begin; i < end; ++i) {
      const Sample& s = data.samples[order[static_cast<std::size_t>(i)]];
      batch.push_back(&s);
      const bool h = options.flips && flip_rng.uniform() < 0.5;
      const bool v = options.flips && flip_rng.uniform() < 0.5;
      hflip.push_back(h);
      vflip.push_back(v);
      gt.push_back(flip_boxes(s.gt, h, v));
    }
    Tensor<float> x = to_batch<float>(batch, channels, hflip, vflip);
    const Shape xs = x.shape();
    if (xs.h % 32 != 0 || xs.w % 32 != 0) throw DataError("training images must have sides divisible by 32");

    const double lr = learning_rate(options, step, total);
    optimizer.set_lr(lr);
    model.params().zero_grads();
    Tape<float> tape;
    Rng dropout_rng = base.split("dropout").split(static_cast<std::uint64_t>(step));
    Context<float> ctx{tape, Mode::Train, &dropout_rng, nullptr};
    LossTerms<float> loss;
    try {
      const auto raw = model.forward(ctx, tape.constant(std::move(x)));
      loss = detection_loss(raw, gt, strides, xs.h, xs.w, options.loss);
      tape.backward(loss.total);
    } catch (const NumericError& e) {
      throw NumericError("training step " + std::to_string(step) + ": " + e.what());
    }
    for (const auto& p : model.params()) {
      if (p->trainable && !p->grad.all_finite()) {
        throw NumericError("training step " + std::to_string(step) + ": non-finite gradient in parameter " + p->name);
      }
    }
    optimizer.step();
    const LossLogRow row{step, lr, double(loss.total.value()[0]), loss.cls, loss.box};
    log.push_back(row);
    if (on_step) on_step(row);
  }
  return log;
}

std::string loss_csv_header() { return "step,lr,loss_total,loss_cls,loss_box\n"; }

std::string loss_csv_row(const LossLogRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.step), r.lr, r.total, r.cls,
                r.box);
  return buf;
}

Tensor<float> image_tensor(const GrayImage& image, std::int64_t channels) {
  const std::int64_t H = round_up32(image.h), W = round_up32(image.w);
  Tensor<float> t(Shape{1, channels, H, W});
  for (std::int64_t c = 0; c < channels; ++c) {
    float* p = t.plane(0, c);
    for (std::int64_t y = 0; y < image.h; ++y)
      for (std::int64_t x = 0; x < image.w; ++x) p[y * W + x] = float(image.at(y, x)) / 255.0f;
  }
  return t;
}

std::vector<std::vector<Detection>> predict(const Model<float>& model, const std::vector<const GrayImage*>& images,
                                            const DetectOptions& options) {
  std::vector<std::vector<Detection>> out;
  const std::int64_t channels = model.config().input_channels;
  const std::size_t bs = static_cast<std::size_t>(std::max(1, options.batch_size));
  std::size_t start = 0;
  while (start < images.size()) {
    const std::size_t stop = std::min(images.size(), start + bs);
    // Batch only equally sized images; others go one at a time.
    std::size_t group_end = start + 1;
    while (group_end < stop && images[group_end]->h == images[start]->h && images[group_end]->w == images[start]->w) {
      ++group_end;
    }
    const GrayImage& first = *images[start];
    const std::int64_t H = round_up32(first.h), W = round_up32(first.w);
    Tensor<float> x(Shape{static_cast<std::int64_t>(group_end - start), channels, H, W});
    for (std::size_t i = start; i < group_end; ++i) {
      const Tensor<float> one = image_tensor(*images[i], channels);
      std::copy(one.ptr(), one.ptr() + one.numel(), x.ptr() + static_cast<std::int64_t>(i - start) * one.numel());
    }
    const auto maps = model.predict(x);
    auto dets = decode_boxes(maps, model.config().strides, H, W, options.conf);
    const double sx = double(W) / double(first.w), sy = double(H) / double(first.h);
    for (auto& d : dets) {
      for (auto& det : d) {
        // Back to the unpadded frame; padding only extends right and bottom.
        double x1 = std::min(1.0, det.box.x1() * sx), x2 = std::min(1.0, det.box.x2() * sx);
        double y1 = std::min(1.0, det.box.y1() * sy), y2 = std::min(1.0, det.box.y2() * sy);
        det.box = Box::from_corners(x1, y1, x2, y2);
      }
      std::erase_if(d, [](const Detection& det) { return !(det.box.w > 0 && det.box.h > 0); });
      auto kept = nms(std::move(d), options.nms_iou);
      if (options.max_det > 0 && kept.size() > static_cast<std::size_t>(options.max_det)) {
        kept.resize(static_cast<std::size_t>(options.max_det));
      }
      out.push_back(std::move(kept));
    }
    start = group_end;
  }
  return out;
}

APResult evaluate_model(const Model<float>& model, const Dataset& data, const DetectOptions& options) {
  if (data.samples.empty()) throw DataError("evaluation set is empty");
  std::vector<const GrayImage*> images;
  for (const auto& s : data.samples) images.push_back(&s.image);
  const auto dets = predict(model, images, options);
  std::vector<EvalImage> eval;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    eval.push_back(EvalImage{data.samples[i].name, dets[i], data.samples[i].gt});
  }
  return evaluate(eval);
}

GrayImage annotate(const GrayImage& image, const std::vector<Detection>& detections) {
  GrayImage out = image;
  for (const auto& d : detections) {
    const auto px = [&](double v, std::int64_t n) {
      return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(v * double(n))), 0, n - 1);
    };
    const std::int64_t x1 = px(d.box.x1(), image.w), x2 = px(d.box.x2(), image.w);
    const std::int64_t y1 = px(d.box.y1(), image.h), y2 = px(d.box.y2(), image.h);
    for (std::int64_t x = x1; x <= x2; ++x) out.at(y1, x) = out.at(y2, x) = 255;
    for (std::int64_t y = y1; y <= y2; ++y) out.at(y, x1) = out.at(y, x2) = 255;
  }
  return out;
}

std::string format_detections(std::vector<Detection> detections) {
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) { return a.conf > b.conf; });
  std::string s;
  char buf[128];
  for (const auto& d : detections) {
    std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f %.6f\n", d.cls, d.conf, d.box.cx, d.box.cy, d.box.w,
                  d.box.h);
    s += buf;
  }
  return s;
}

}  // namespace rsnet
