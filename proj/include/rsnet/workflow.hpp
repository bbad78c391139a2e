#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rsnet/data.hpp"
#include "rsnet/detect.hpp"
#include "rsnet/eval.hpp"
#include "rsnet/model.hpp"
#include "rsnet/optim.hpp"

namespace rsnet {

struct TrainOptions {
  int epochs = 30;
  int batch_size = 8;
  std::int64_t max_steps = 0;  // > 0 caps the run (counted from step 0)
  double lr = 0.002;
  double warmup_fraction = 0.05;
  double final_lr_ratio = 0.05;
  double weight_decay = 5e-4;
  bool flips = true;
  std::uint64_t seed = 0;
  LossOptions loss;
};

struct LossLogRow {
  std::int64_t step = 0;
  double lr = 0;
  double total = 0;
  double cls = 0;
  double box = 0;
};

std::int64_t steps_per_epoch(std::int64_t samples, int batch_size);
std::int64_t total_steps(const TrainOptions& o, std::int64_t samples);
// Linear warmup from lr/10, then cosine decay to lr * final_lr_ratio.
double learning_rate(const TrainOptions& o, std::int64_t step, std::int64_t total);

// Runs optimizer steps from optimizer.step_count() up to total_steps(). Batch
// order, flips and dropout are derived from (seed, step), so a resumed run
// replays the same sequence. Non-finite values raise NumericError naming the
// layer or parameter where they first appeared.
std::vector<LossLogRow> train(Model<float>& model, AdamW<float>& optimizer, const Dataset& data,
                              const TrainOptions& options, const std::function<void(const LossLogRow&)>& on_step = {});

std::string loss_csv_header();
std::string loss_csv_row(const LossLogRow& row);

struct DetectOptions {
  double conf = 0.001;
  double nms_iou = 0.6;
  int max_det = 100;
  int batch_size = 16;
};

// Eval-mode detections per image (after NMS), boxes normalized to each
// image's own size. Images whose sides are not multiples of 32 are padded
// with zeros on the right and bottom.
std::vector<std::vector<Detection>> predict(const Model<float>& model, const std::vector<const GrayImage*>& images,
                                            const DetectOptions& options);

APResult evaluate_model(const Model<float>& model, const Dataset& data, const DetectOptions& options);

// Copy of the image with a one-pixel white outline per detection.
GrayImage annotate(const GrayImage& image, const std::vector<Detection>& detections);

// `class conf cx cy w h` per line, by descending confidence.
std::string format_detections(std::vector<Detection> detections);

// Batch tensor for one image padded to multiples of 32.
Tensor<float> image_tensor(const GrayImage& image, std::int64_t channels);

}  // namespace rsnet
