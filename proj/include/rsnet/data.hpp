#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsnet/boxes.hpp"
#include "rsnet/config.hpp"
#include "rsnet/rng.hpp"
#include "rsnet/tensor.hpp"

namespace rsnet {

// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::int64_t y, std::int64_t x) const { return pixels[static_cast<std::size_t>(y * w + x)]; }
  std::uint8_t& at(std::int64_t y, std::int64_t x) { return pixels[static_cast<std::size_t>(y * w + x)]; }
};

// Binary PGM (P5, maxval <= 255). Anything else is a DataError.
GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& image);

// One `class cx cy w h` line per box, normalized coordinates.
std::vector<GroundTruth> read_labels(const std::string& path);
void write_labels(const std::string& path, const std::vector<GroundTruth>& boxes);
std::string format_labels(const std::vector<GroundTruth>& boxes);

struct SyntheticSceneSpec {
  std::int64_t image_h = 128;
  std::int64_t image_w = 128;
  int ships_min = 1;
  int ships_max = 3;
  double length_min = 16;
  double length_max = 40;
  double width_min = 8;
  double width_max = 14;
  double intensity_min = 170;
  double intensity_max = 240;
  double background = 60;
  double looks = 4;  // speckle gamma shape L
  double clutter_prob = 0.3;
  std::uint64_t seed = 0;

  static SyntheticSceneSpec from_kv(const KeyValueFile& kv);
  static SyntheticSceneSpec load(const std::string& path);
  std::string to_text() const;
  void validate() const;
};

struct Scene {
  std::vector<double> clean;  // noise-free render, row-major
  GrayImage image;            // speckled and quantized
  std::vector<GroundTruth> gt;
};

// Oriented soft-edged rectangles on a flat background, optional round
// clutter patches, multiplicative gamma(L, 1/L) speckle. Each ship's ground
// truth is the axis-aligned hull of its rectangle and lies inside the image.
Scene render_scene(const SyntheticSceneSpec& spec, Rng& rng);
// Scene `index` of the dataset defined by spec.seed.
Scene render_scene(const SyntheticSceneSpec& spec, std::int64_t index);

struct Sample {
  std::string name;
  GrayImage image;
  std::vector<GroundTruth> gt;
};

struct Dataset {
  std::string root;
  std::vector<Sample> samples;
};

// Writes images/NNNNNN.pgm, labels/NNNNNN.txt, manifest.txt and
// scene_spec.txt. A non-empty out_dir is refused unless force is set.
// Returns the written file paths.
std::vector<std::string> generate_dataset(const SyntheticSceneSpec& spec, std::int64_t n_images,
                                          const std::string& out_dir, bool force);

// Reads manifest.txt ("image_path label_path" per line, relative to the
// dataset root).
Dataset load_dataset(const std::string& dir);

// Stacks images into an N x channels x H x W batch scaled to [0, 1]; the gray
// plane is repeated over channels. hflip/vflip (optional, per image) mirror
// the pixels and the boxes.
template <typename T>
Tensor<T> to_batch(const std::vector<const Sample*>& samples, std::int64_t channels,
                   const std::vector<std::uint8_t>& hflip = {}, const std::vector<std::uint8_t>& vflip = {});

std::vector<GroundTruth> flip_boxes(std::vector<GroundTruth> boxes, bool hflip, bool vflip);

}  // namespace rsnet
