#include "rsnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rsnet/error.hpp"

namespace fs = std::filesystem;

namespace rsnet {

namespace {

// Next whitespace-delimited header token, skipping # comments.
std::string pgm_token(std::istream& in, const std::string& path) {
  std::string tok;
  while (true) {
    const int ch = in.get();
    if (ch == EOF) throw DataError(path + ": truncated PGM header");
    if (ch == '#') {
      std::string ignored;
      std::getline(in, ignored);
      if (!tok.empty()) return tok;
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
}

std::int64_t header_int(const std::string& tok, const std::string& path) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(c); })) {
    throw DataError(path + ": bad PGM header field '" + tok + "'");
  }
  return std::stoll(tok);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image '" + path + "'");
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (in.gcount() != 2 || magic[0] != 'P' || magic[1] != '5') {
    throw DataError(path + ": not a binary PGM (P5) image");
  }
  GrayImage img;
  img.w = header_int(pgm_token(in, path), path);
  img.h = header_int(pgm_token(in, path), path);
  const std::int64_t maxval = header_int(pgm_token(in, path), path);
  if (img.w <= 0 || img.h <= 0) throw DataError(path + ": empty PGM image");
  if (maxval <= 0 || maxval > 255) throw DataError(path + ": only 8-bit PGM is supported (maxval " + std::to_string(maxval) + ")");
  img.pixels.resize(static_cast<std::size_t>(img.w * img.h));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw DataError(path + ": truncated PGM data");
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(std::min<double>(p, maxval) * 255.0 / maxval));
  }
  return img;
}

void write_pgm(const std::string& path, const GrayImage& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.h * image.w)) throw Error("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write image '" + path + "'");
  out << "P5\n" << image.w << " " << image.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

std::string format_labels(const std::vector<GroundTruth>& boxes) {
  std::string s;
  for (const auto& b : boxes) {
    s += std::to_string(b.cls) + " " + fmt(b.box.cx) + " " + fmt(b.box.cy) + " " + fmt(b.box.w) + " " + fmt(b.box.h) + "\n";
  }
  return s;
}

void write_labels(const std::string& path, const std::vector<GroundTruth>& boxes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write labels '" + path + "'");
  out << format_labels(boxes);
}

std::vector<GroundTruth> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labels '" + path + "'");
  std::vector<GroundTruth> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    GroundTruth g;
    std::string rest;
    if (!(ss >> g.cls >> g.box.cx >> g.box.cy >> g.box.w >> g.box.h) || (ss >> rest)) {
      throw DataError(path + ":" + std::to_string(number) + ": expected 'class cx cy w h'");
    }
    if (g.cls < 0 || g.box.w <= 0 || g.box.h <= 0 || g.box.x1() < -1e-6 || g.box.y1() < -1e-6 ||
        g.box.x2() > 1 + 1e-6 || g.box.y2() > 1 + 1e-6) {
      throw DataError(path + ":" + std::to_string(number) + ": box outside [0, 1] or with zero area");
    }
    out.push_back(g);
  }
  return out;
}

SyntheticSceneSpec SyntheticSceneSpec::from_kv(const KeyValueFile& kv) {
  kv.require_known({"image_size", "ships", "length", "width", "intensity", "background", "looks", "clutter_prob",
                    "seed"});
  SyntheticSceneSpec s;
  const auto pair = [&](const std::string& key, auto& lo, auto& hi) {
    if (!kv.has(key)) return;
    const auto v = kv.get_doubles(key);
    if (v.size() != 2) throw UsageError("scene spec key '" + key + "': expected 'min, max'");
    lo = static_cast<std::remove_reference_t<decltype(lo)>>(v[0]);
    hi = static_cast<std::remove_reference_t<decltype(hi)>>(v[1]);
  };
  if (kv.has("image_size")) {
    const auto v = kv.get_ints("image_size");
    if (v.size() == 1) {
      s.image_h = s.image_w = v[0];
    } else if (v.size() == 2) {
      s.image_h = v[0];
      s.image_w = v[1];
    } else {
      throw UsageError("scene spec key 'image_size': expected 'size' or 'height, width'");
    }
  }
  pair("ships", s.ships_min, s.ships_max);
  pair("length", s.length_min, s.length_max);
  pair("width", s.width_min, s.width_max);
  pair("intensity", s.intensity_min, s.intensity_max);
  if (kv.has("background")) s.background = kv.get_double("background");
  if (kv.has("looks")) s.looks = kv.get_double("looks");
  if (kv.has("clutter_prob")) s.clutter_prob = kv.get_double("clutter_prob");
  if (kv.has("seed")) s.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
  s.validate();
  return s;
}

SyntheticSceneSpec SyntheticSceneSpec::load(const std::string& path) { return from_kv(KeyValueFile::load(path)); }

std::string SyntheticSceneSpec::to_text() const {
  const auto f = format_double;
  std::ostringstream os;
  os << "image_size = " << image_h << ", " << image_w << "\n"
     << "ships = " << ships_min << ", " << ships_max << "\n"
     << "length = " << f(length_min) << ", " << f(length_max) << "\n"
     << "width = " << f(width_min) << ", " << f(width_max) << "\n"
     << "intensity = " << f(intensity_min) << ", " << f(intensity_max) << "\n"
     << "background = " << f(background) << "\n"
     << "looks = " << f(looks) << "\n"
     << "clutter_prob = " << f(clutter_prob) << "\n"
     << "seed = " << seed << "\n";
  return os.str();
}

void SyntheticSceneSpec::validate() const {
  const auto fail = [](const std::string& m) { throw UsageError("scene spec: " + m); };
  if (image_h < 8 || image_w < 8) fail("image must be at least 8x8");
  if (ships_min < 0 || ships_max < ships_min) fail("ship count range must satisfy 0 <= min <= max");
  if (width_min <= 0 || width_max < width_min || length_min < width_min || length_max < length_min) {
    fail("need 0 < width_min <= width_max and width_min <= length_min <= length_max");
  }
  if (length_max + 2 >= static_cast<double>(std::min(image_h, image_w))) fail("ships must fit inside the image");
  if (intensity_min < 0 || intensity_max < intensity_min || intensity_max > 255) fail("intensity range must lie in [0, 255]");
  if (background < 0 || background > 255) fail("background must lie in [0, 255]");
  if (!(looks > 0)) fail("looks must be positive");
  if (clutter_prob < 0 || clutter_prob > 1) fail("clutter_prob must lie in [0, 1]");
}

Scene render_scene(const SyntheticSceneSpec& spec, Rng& rng) {
  spec.validate();
  const std::int64_t H = spec.image_h, W = spec.image_w;
  Scene scene;
  scene.clean.assign(static_cast<std::size_t>(H * W), spec.background);
  std::vector<double> alpha_max(static_cast<std::size_t>(H * W), 0.0);

  struct Ship {
    double cx, cy, half_l, half_w, c, s, intensity;
    Box hull;
  };
  std::vector<Ship> ships;
  const int count = static_cast<int>(rng.uniform_int(spec.ships_min, spec.ships_max));
  for (int k = 0; k < count; ++k) {
    // Rejection-sample a placement whose hull does not touch earlier ships.
    for (int attempt = 0; attempt < 100; ++attempt) {
      Ship sh{};
      const double len = rng.uniform(spec.length_min, spec.length_max);
      const double wid = rng.uniform(spec.width_min, spec.width_max);
      const double theta = rng.uniform(0.0, std::numbers::pi);
      sh.half_l = 0.5 * len;
      sh.half_w = 0.5 * wid;
      sh.c = std::cos(theta);
      sh.s = std::sin(theta);
      sh.intensity = rng.uniform(spec.intensity_min, spec.intensity_max);
      const double hx = sh.half_l * std::abs(sh.c) + sh.half_w * std::abs(sh.s);
      const double hy = sh.half_l * std::abs(sh.s) + sh.half_w * std::abs(sh.c);
      sh.cx = rng.uniform(hx + 1.0, static_cast<double>(W) - hx - 1.0);
      sh.cy = rng.uniform(hy + 1.0, static_cast<double>(H) - hy - 1.0);
      sh.hull = Box{sh.cx, sh.cy, 2 * hx, 2 * hy};
      const bool clash = std::any_of(ships.begin(), ships.end(), [&](const Ship& o) {
        return std::abs(o.cx - sh.cx) < 0.5 * (o.hull.w + sh.hull.w) + 2 &&
               std::abs(o.cy - sh.cy) < 0.5 * (o.hull.h + sh.hull.h) + 2;
      });
      if (!clash) {
        ships.push_back(sh);
        break;
      }
    }
  }

  for (const Ship& sh : ships) {
    const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(sh.hull.x1()) - 1);
    const std::int64_t x1 = std::min<std::int64_t>(W - 1, static_cast<std::int64_t>(sh.hull.x2()) + 1);
    const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(sh.hull.y1()) - 1);
    const std::int64_t y1 = std::min<std::int64_t>(H - 1, static_cast<std::int64_t>(sh.hull.y2()) + 1);
    for (std::int64_t y = y0; y <= y1; ++y) {
      for (std::int64_t x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - sh.cx, dy = static_cast<double>(y) + 0.5 - sh.cy;
        const double u = dx * sh.c + dy * sh.s, v = -dx * sh.s + dy * sh.c;
        // Signed distance to the rectangle edge (outside positive), one-pixel ramp.
        const double d = std::max(std::abs(u) - sh.half_l, std::abs(v) - sh.half_w);
        const double a = std::clamp(0.5 - d, 0.0, 1.0);
        const std::size_t i = static_cast<std::size_t>(y * W + x);
        if (a > alpha_max[i]) {
          alpha_max[i] = a;
          scene.clean[i] = spec.background + (sh.intensity - spec.background) * a;
        }
      }
    }
    GroundTruth g;
    g.cls = 0;
    g.box = Box{sh.hull.cx / double(W), sh.hull.cy / double(H), sh.hull.w / double(W), sh.hull.h / double(H)};
    scene.gt.push_back(g);
  }

  // Round, dimmer clutter patches (land, sea clutter) carry no label.
  if (rng.uniform() < spec.clutter_prob) {
    const double r = rng.uniform(3.0, 6.0);
    const double cx = rng.uniform(r, double(W) - r), cy = rng.uniform(r, double(H) - r);
    const double level = spec.background + rng.uniform(30.0, 70.0);
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        const double d = std::hypot(double(x) + 0.5 - cx, double(y) + 0.5 - cy) - r;
        const double a = std::clamp(0.5 - d, 0.0, 1.0);
        const std::size_t i = static_cast<std::size_t>(y * W + x);
        if (a > 0 && alpha_max[i] == 0.0) scene.clean[i] = spec.background + (level - spec.background) * a;
      }
    }
  }

  scene.image.h = H;
  scene.image.w = W;
  scene.image.pixels.resize(scene.clean.size());
  for (std::size_t i = 0; i < scene.clean.size(); ++i) {
    const double v = scene.clean[i] * rng.gamma(spec.looks, 1.0 / spec.looks);
    scene.image.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  }
  return scene;
}

Scene render_scene(const SyntheticSceneSpec& spec, std::int64_t index) {
  Rng rng = Rng(spec.seed).split(static_cast<std::uint64_t>(index));
  return render_scene(spec, rng);
}

std::vector<std::string> generate_dataset(const SyntheticSceneSpec& spec, std::int64_t n_images,
                                          const std::string& out_dir, bool force) {
  spec.validate();
  if (n_images < 1) throw UsageError("gendata: need at least one image");
  if (out_dir.empty()) throw UsageError("gendata: empty output directory");
  std::error_code ec;
  if (fs::exists(out_dir, ec) && !fs::is_directory(out_dir, ec)) {
    throw DataError("gendata: '" + out_dir + "' exists and is not a directory");
  }
  if (fs::exists(out_dir, ec) && !fs::is_empty(out_dir, ec) && !force) {
    throw DataError("gendata: output directory '" + out_dir + "' is not empty (use --force to overwrite)");
  }
  const fs::path root(out_dir);
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "labels", ec);
  if (ec) throw DataError("gendata: cannot create '" + out_dir + "': " + ec.message());

  std::vector<std::string> written;
  std::string manifest;
  for (std::int64_t i = 0; i < n_images; ++i) {
    char stem[24];
    std::snprintf(stem, sizeof stem, "%06lld", static_cast<long long>(i));
    const Scene s = render_scene(spec, i);
    const std::string img = std::string("images/") + stem + ".pgm";
    const std::string lab = std::string("labels/") + stem + ".txt";
    write_pgm((root / img).string(), s.image);
    write_labels((root / lab).string(), s.gt);
    written.push_back((root / img).string());
    written.push_back((root / lab).string());
    manifest += img + " " + lab + "\n";
  }
  const auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream out(root / name, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("gendata: cannot write '" + (root / name).string() + "'");
    out << text;
    written.push_back((root / name).string());
  };
  put("manifest.txt", manifest);
  put("scene_spec.txt", spec.to_text());
  return written;
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  const fs::path manifest = root / "manifest.txt";
  std::ifstream in(manifest);
  if (!in) throw DataError("dataset '" + dir + "': missing manifest.txt");
  Dataset d;
  d.root = dir;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string img, lab;
    if (!(ss >> img >> lab)) throw DataError(manifest.string() + ":" + std::to_string(number) + ": expected 'image labels'");
    Sample s;
    s.name = img;
    s.image = read_pgm((root / img).string());
    s.gt = read_labels((root / lab).string());
    if (!d.samples.empty() && (s.image.h != d.samples[0].image.h || s.image.w != d.samples[0].image.w)) {
      throw DataError("dataset '" + dir + "': image " + img + " has a different size from the first image");
    }
    d.samples.push_back(std::move(s));
  }
  if (d.samples.empty()) throw DataError("dataset '" + dir + "' is empty");
  return d;
}

std::vector<GroundTruth> flip_boxes(std::vector<GroundTruth> boxes, bool hflip, bool vflip) {
  for (auto& b : boxes) {
    if (hflip) b.box.cx = 1.0 - b.box.cx;
    if (vflip) b.box.cy = 1.0 - b.box.cy;
  }
  return boxes;
}

template <typename T>
Tensor<T> to_batch(const std::vector<const Sample*>& samples, std::int64_t channels, const std::vector<std::uint8_t>& hflip,
                   const std::vector<std::uint8_t>& vflip) {
  if (samples.empty()) throw UsageError("to_batch: no samples");
  const std::int64_t H = samples[0]->image.h, W = samples[0]->image.w;
  Tensor<T> out(Shape{static_cast<std::int64_t>(samples.size()), channels, H, W});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const GrayImage& img = samples[n]->image;
    if (img.h != H || img.w != W) throw ShapeError("to_batch: images differ in size");
    const bool hf = !hflip.empty() && hflip[n], vf = !vflip.empty() && vflip[n];
    T* dst = out.plane(static_cast<std::int64_t>(n), 0);
    for (std::int64_t y = 0; y < H; ++y) {
      const std::int64_t sy = vf ? H - 1 - y : y;
      for (std::int64_t x = 0; x < W; ++x) {
        const std::int64_t sx = hf ? W - 1 - x : x;
        dst[y * W + x] = static_cast<T>(img.at(sy, sx)) / T(255);
      }
    }
    for (std::int64_t c = 1; c < channels; ++c) {
      std::copy(dst, dst + H * W, out.plane(static_cast<std::int64_t>(n), c));
    }
  }
  return out;
}

template Tensor<float> to_batch(const std::vector<const Sample*>&, std::int64_t, const std::vector<std::uint8_t>&,
                                const std::vector<std::uint8_t>&);
template Tensor<double> to_batch(const std::vector<const Sample*>&, std::int64_t, const std::vector<std::uint8_t>&,
                                 const std::vector<std::uint8_t>&);

}  // namespace rsnet
