#include "rsnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "rsnet/error.hpp"

namespace rsnet {

const LayerRecord* ModelGraph::find(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

bool ModelGraph::acyclic() const {
  std::set<std::string> seen{"input"};
  for (const auto& l : layers) {
    for (const auto& in : l.inputs)
      if (!seen.count(in)) return false;
    seen.insert(l.name);
  }
  return true;
}

std::vector<std::pair<std::string, std::string>> ModelGraph::edges() const {
  std::vector<std::pair<std::string, std::string>> e;
  for (const auto& l : layers)
    for (const auto& in : l.inputs) e.emplace_back(in, l.name);
  return e;
}

std::string ModelGraph::text() const {
  std::ostringstream os;
  for (const auto& l : layers) {
    os << l.name << " [" << l.kind << "]";
    if (!l.config.empty()) os << " " << l.config;
    os << " <-";
    for (const auto& in : l.inputs) os << " " << in;
    os << "\n";
  }
  return os.str();
}

namespace {

std::string dims(std::int64_t a, std::int64_t b) { return std::to_string(a) + "->" + std::to_string(b); }

ConvSpec cbs(std::int64_t cin, std::int64_t cout, int kernel, int stride) {
  ConvSpec s;
  s.cin = cin;
  s.cout = cout;
  s.kernel = kernel;
  s.stride = stride;
  s.norm = Norm::Batch;
  s.act = Act::SiLU;
  return s;
}

}  // namespace

template <typename T>
void Model<T>::record(const std::string& name, const std::string& kind, const std::string& config,
                      std::vector<std::string> inputs, std::size_t first_param) {
  LayerRecord r{name, kind, config, std::move(inputs), {}};
  for (std::size_t i = first_param; i < store_.size(); ++i) r.param_names.push_back(store_[i].name);
  graph_.layers.push_back(std::move(r));
}

template <typename T>
Model<T>::Model(const ArchConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  Rng rng(seed);
  const ArchConfig& c = config_;
  std::string prev = "input";

  // Appends a unit to `seq`, records it, and makes it the current node.
  const auto add = [&](Sequence& seq, const std::string& name, const std::string& kind, const std::string& cfg,
                       auto&& make, std::vector<std::string> extra_inputs = {}) {
    const std::size_t first = store_.size();
    seq.units.emplace_back(make(name));
    std::vector<std::string> inputs{prev};
    inputs.insert(inputs.end(), extra_inputs.begin(), extra_inputs.end());
    record(name, kind, cfg, std::move(inputs), first);
    prev = name;
  };
  const auto conv_unit = [&](const ConvSpec& s) {
    return [&, s](const std::string& name) { return Unit(std::in_place_type<ConvUnit<T>>, name, s, store_, rng); };
  };
  const auto conv_cfg = [](const ConvSpec& s) {
    return dims(s.cin, s.cout) + " k" + std::to_string(s.kernel) + " s" + std::to_string(s.stride);
  };
  const auto c2f = [&](std::int64_t cin, std::int64_t cout, bool shortcut) {
    return [&, cin, cout, shortcut](const std::string& name) {
      return Unit(std::in_place_type<C2fLite<T>>, name, cin, cout, shortcut, store_, rng);
    };
  };
  const auto wpool = [&](std::int64_t cin, std::int64_t cout) {
    return [&, cin, cout](const std::string& name) {
      return Unit(std::in_place_type<WaveletPoolLayer<T>>, name, cin, cout, c.wavelet_aggregate, store_, rng);
    };
  };
  const std::string aggregate = c.wavelet_aggregate == WaveletAggregate::Stack ? "stack" : "sum";

  // Stem: two stride-2 convs and a c2f-lite unit.
  {
    const ConvSpec s1 = cbs(c.input_channels, c.stem_widths[0], 3, 2);
    const ConvSpec s2 = cbs(c.stem_widths[0], c.stem_widths[1], 3, 2);
    add(stem_, "backbone.stem.conv1", "conv", conv_cfg(s1), conv_unit(s1));
    add(stem_, "backbone.stem.conv2", "conv", conv_cfg(s2), conv_unit(s2));
    add(stem_, "backbone.stem.c2f", "c2f-lite", dims(c.stem_widths[1], c.stem_widths[1]),
        c2f(c.stem_widths[1], c.stem_widths[1], true));
    graph_.taps.push_back("backbone.stem");
  }

  std::int64_t width = c.stem_widths[1];
  for (int i = 0; i < 3; ++i) {
    Sequence seq;
    const std::string base = "backbone.stage" + std::to_string(i + 1);
    const std::int64_t w = c.stage_widths[static_cast<std::size_t>(i)];
    if (c.backbone_pool == PoolKind::Wavelet) {
      add(seq, base + ".down", "wavelet_pool", dims(width, w) + " " + aggregate, wpool(width, w));
    } else {
      const ConvSpec d = cbs(width, w, 3, 2);
      add(seq, base + ".down", "conv", conv_cfg(d), conv_unit(d));
    }
    for (std::int64_t b = 0; b < c.stage_blocks[static_cast<std::size_t>(i)]; ++b) {
      const std::string name = base + ".block" + std::to_string(b);
      if (c.backbone_block == BackboneBlock::ContextGuided) {
        const ContextGuidedConfig cg{w, w, c.cgb_dilation, c.cgb_reduction};
        add(seq, name, "cgb", dims(w, w) + " d" + std::to_string(c.cgb_dilation), [&, cg](const std::string& n) {
          return Unit(std::in_place_type<ContextGuided<T>>, n, cg, store_, rng);
        });
      } else {
        add(seq, name, "c2f-lite", dims(w, w), c2f(w, w, true));
      }
    }
    stages_.push_back(std::move(seq));
    graph_.taps.push_back("backbone.p" + std::to_string(i + 3));
    width = w;
  }
  // Last node of each stage, used for skip inputs.
  std::vector<std::string> stage_out;
  {
    std::size_t idx = 3;  // after the stem
    for (int i = 0; i < 3; ++i) {
      idx += stages_[static_cast<std::size_t>(i)].units.size();
      stage_out.push_back(graph_.layers[idx - 1].name);
    }
  }
  const std::int64_t c3 = c.stage_widths[0], c4 = c.stage_widths[1], c5 = c.stage_widths[2];
  const std::int64_t n = c.neck_width;
  std::vector<std::int64_t> level_channels;

  const auto add_op = [&](const std::string& name, const std::string& kind, std::vector<std::string> inputs) {
    record(name, kind, "", std::move(inputs), store_.size());
    prev = name;
  };

  neck_.resize(4);
  neck_down_.resize(2);
  if (c.neck == NeckKind::WaveletStar) {
    const auto star = [&](const std::string& name) {
      return Unit(std::in_place_type<Star<T>>, name, StarConfig{n, c.star_mlp_ratio, c.star_dropout}, store_, rng);
    };
    const auto node = [&](std::size_t k, const std::string& name, std::int64_t cin) {
      const ConvSpec f = cbs(cin, n, 1, 1);
      add(neck_[k], "neck." + name + ".fuse", "conv", conv_cfg(f), conv_unit(f));
      for (std::int64_t b = 0; b < c.neck_blocks; ++b) {
        add(neck_[k], "neck." + name + ".star" + std::to_string(b), "star",
            "c" + std::to_string(n) + " r" + std::to_string(c.star_mlp_ratio), star);
      }
    };
    add_op("neck.unpool5", "wavelet_unpool", {stage_out[2]});
    add_op("neck.cat4", "concat", {"neck.unpool5", stage_out[1]});
    node(0, "n4", c5 / 4 + c4);
    const std::string n4 = prev;
    add_op("neck.unpool4", "wavelet_unpool", {n4});
    add_op("neck.cat3", "concat", {"neck.unpool4", stage_out[0]});
    node(1, "out3", n / 4 + c3);
    add(neck_down_[0], "neck.down4", "wavelet_pool", dims(n, n) + " " + aggregate, wpool(n, n));
    add_op("neck.cat4b", "concat", {"neck.down4", n4});
    node(2, "out4", 2 * n);
    add(neck_down_[1], "neck.down5", "wavelet_pool", dims(n, n) + " " + aggregate, wpool(n, n));
    add_op("neck.cat5", "concat", {"neck.down5", stage_out[2]});
    node(3, "out5", n + c5);
    level_channels = {n, n, n};
  } else {
    const auto node = [&](std::size_t k, const std::string& name, std::int64_t cin, std::int64_t cout) {
      for (std::int64_t b = 0; b < c.neck_blocks; ++b) {
        const std::int64_t in = b == 0 ? cin : cout;
        add(neck_[k], "neck." + name + ".c2f" + std::to_string(b), "c2f-lite", dims(in, cout), c2f(in, cout, false));
      }
    };
    add_op("neck.up5", "upsample_nearest", {stage_out[2]});
    add_op("neck.cat4", "concat", {"neck.up5", stage_out[1]});
    node(0, "n4", c5 + c4, c4);
    const std::string n4 = prev;
    add_op("neck.up4", "upsample_nearest", {n4});
    add_op("neck.cat3", "concat", {"neck.up4", stage_out[0]});
    node(1, "out3", c4 + c3, c3);
    const ConvSpec d4 = cbs(c3, c3, 3, 2);
    add(neck_down_[0], "neck.down4", "conv", conv_cfg(d4), conv_unit(d4));
    add_op("neck.cat4b", "concat", {"neck.down4", n4});
    node(2, "out4", c3 + c4, c4);
    const ConvSpec d5 = cbs(c4, c4, 3, 2);
    add(neck_down_[1], "neck.down5", "conv", conv_cfg(d5), conv_unit(d5));
    add_op("neck.cat5", "concat", {"neck.down5", stage_out[2]});
    node(3, "out5", c4 + c5, c5);
    level_channels = {c3, c4, c5};
  }
  for (const char* t : {"neck.n4", "neck.out3", "neck.out4", "neck.out5"}) graph_.taps.push_back(t);

  const std::size_t first = store_.size();
  head_ = DetectHead<T>("head", HeadConfig{level_channels, c.head_width, c.num_classes, c.head_shared}, store_, rng);
  // The head consumes the last node of out3/out4/out5.
  std::vector<std::string> head_inputs;
  for (std::size_t k = 1; k < 4; ++k) {
    std::string last;
    for (const auto& l : graph_.layers) {
      if (l.name.rfind(k == 1 ? "neck.out3." : k == 2 ? "neck.out4." : "neck.out5.", 0) == 0) last = l.name;
    }
    head_inputs.push_back(last);
  }
  record("head", c.head_shared ? "ls-head" : "head", "hidden " + std::to_string(c.head_width), head_inputs, first);
}

template <typename T>
Var<T> Model<T>::run(const Context<T>& ctx, const Sequence& seq, Var<T> x) const {
  for (const Unit& u : seq.units) {
    x = std::visit([&](const auto& layer) { return layer.forward(ctx, x); }, u);
  }
  return x;
}

template <typename T>
std::vector<LevelRaw<T>> Model<T>::forward(const Context<T>& ctx, Var<T> images) const {
  const Shape s = images.shape();
  if (s.c != config_.input_channels) {
    throw ShapeError("model expects " + std::to_string(config_.input_channels) + " input channels, got " + s.str());
  }
  if (s.h % 32 != 0 || s.w % 32 != 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("input height and width must be positive multiples of 32, got " + s.str());
  }
  Var<T> x = run(ctx, stem_, images);
  ctx.tap("backbone.stem", x);
  std::vector<Var<T>> p;
  for (int i = 0; i < 3; ++i) {
    x = run(ctx, stages_[static_cast<std::size_t>(i)], x);
    ctx.tap("backbone.p" + std::to_string(i + 3), x);
    p.push_back(x);
  }

  Var<T> n4, out3, out4, out5;
  if (config_.neck == NeckKind::WaveletStar) {
    ScopeGuard<T> scope(ctx.tape, "neck");
    n4 = run(ctx, neck_[0], ops::concat_channels<T>({wavelet_unpool(p[2]), p[1]}));
    out3 = run(ctx, neck_[1], ops::concat_channels<T>({wavelet_unpool(n4), p[0]}));
  } else {
    ScopeGuard<T> scope(ctx.tape, "neck");
    n4 = run(ctx, neck_[0], ops::concat_channels<T>({ops::upsample_nearest2x(p[2]), p[1]}));
    out3 = run(ctx, neck_[1], ops::concat_channels<T>({ops::upsample_nearest2x(n4), p[0]}));
  }
  out4 = run(ctx, neck_[2], ops::concat_channels<T>({run(ctx, neck_down_[0], out3), n4}));
  out5 = run(ctx, neck_[3], ops::concat_channels<T>({run(ctx, neck_down_[1], out4), p[2]}));
  ctx.tap("neck.n4", n4);
  ctx.tap("neck.out3", out3);
  ctx.tap("neck.out4", out4);
  ctx.tap("neck.out5", out5);
  return head_.forward(ctx, {out3, out4, out5});
}

template <typename T>
std::vector<LevelMaps<T>> Model<T>::predict(const Tensor<T>& images) const {
  Tape<T> tape(false);
  Context<T> ctx{tape, Mode::Eval, nullptr, nullptr};
  return level_maps(forward(ctx, tape.constant(images)));
}

template <typename T>
Tensor<T> Model<T>::activation(const Tensor<T>& images, const std::string& tap) const {
  if (std::find(graph_.taps.begin(), graph_.taps.end(), tap) == graph_.taps.end()) {
    std::string known;
    for (const auto& t : graph_.taps) known += (known.empty() ? "" : ", ") + t;
    throw UsageError("unknown layer '" + tap + "' (available: " + known + ")");
  }
  Tape<T> tape(false);
  std::map<std::string, Tensor<T>> taps;
  Context<T> ctx{tape, Mode::Eval, nullptr, &taps};
  forward(ctx, tape.constant(images));
  return taps.at(tap);
}

template <typename T>
Shape Model<T>::count_seq(const Sequence& seq, Shape in, CountReport& report) const {
  for (const Unit& u : seq.units) {
    in = std::visit([&](const auto& layer) { return layer.count(in, report); }, u);
  }
  return in;
}

template <typename T>
std::int64_t Model<T>::params_seq(const Sequence& seq) const {
  std::int64_t p = 0;
  for (const Unit& u : seq.units) p += std::visit([](const auto& layer) { return layer.analytic_params(); }, u);
  return p;
}

template <typename T>
CountReport Model<T>::count(std::int64_t input_h, std::int64_t input_w) const {
  if (input_h <= 0 || input_w <= 0 || input_h % 32 != 0 || input_w % 32 != 0) {
    throw UsageError("count input size must be a positive multiple of 32");
  }
  CountReport r;
  r.input_h = input_h;
  r.input_w = input_w;
  Shape x = count_seq(stem_, Shape{1, config_.input_channels, input_h, input_w}, r);
  std::vector<Shape> p;
  for (const auto& s : stages_) {
    x = count_seq(s, x, r);
    p.push_back(x);
  }
  const auto concat = [](Shape a, const Shape& b) {
    a.c += b.c;
    return a;
  };
  Shape up5, up4;
  if (config_.neck == NeckKind::WaveletStar) {
    up5 = Shape{1, p[2].c / 4, p[2].h * 2, p[2].w * 2};
    r.rows.push_back(CountRow{"neck.unpool5", "wavelet_unpool", 0, p[2].numel() * 4, up5, {}});
  } else {
    up5 = Shape{1, p[2].c, p[2].h * 2, p[2].w * 2};
    r.rows.push_back(CountRow{"neck.up5", "upsample_nearest", 0, 0, up5, {}});
  }
  const Shape n4 = count_seq(neck_[0], concat(up5, p[1]), r);
  if (config_.neck == NeckKind::WaveletStar) {
    up4 = Shape{1, n4.c / 4, n4.h * 2, n4.w * 2};
    r.rows.push_back(CountRow{"neck.unpool4", "wavelet_unpool", 0, n4.numel() * 4, up4, {}});
  } else {
    up4 = Shape{1, n4.c, n4.h * 2, n4.w * 2};
    r.rows.push_back(CountRow{"neck.up4", "upsample_nearest", 0, 0, up4, {}});
  }
  const Shape out3 = count_seq(neck_[1], concat(up4, p[0]), r);
  const Shape out4 = count_seq(neck_[2], concat(count_seq(neck_down_[0], out3, r), n4), r);
  const Shape out5 = count_seq(neck_[3], concat(count_seq(neck_down_[1], out4, r), p[2]), r);
  head_.count({out3, out4, out5}, r);
  return r;
}

template <typename T>
std::int64_t Model<T>::analytic_params() const {
  std::int64_t p = params_seq(stem_);
  for (const auto& s : stages_) p += params_seq(s);
  for (const auto& s : neck_) p += params_seq(s);
  for (const auto& s : neck_down_) p += params_seq(s);
  return p + head_.analytic_params();
}

template <typename T>
std::vector<std::uint8_t> heatmap(const Tensor<T>& a, std::int64_t out_h, std::int64_t out_w) {
  const Shape s = a.shape();
  if (s.n != 1) throw ShapeError("heat map needs a single image, got " + s.str());
  std::vector<double> norm(static_cast<std::size_t>(s.plane()), 0.0);
  for (std::int64_t c = 0; c < s.c; ++c) {
    const T* p = a.plane(0, c);
    for (std::int64_t i = 0; i < s.plane(); ++i) norm[static_cast<std::size_t>(i)] += double(p[i]) * double(p[i]);
  }
  for (double& v : norm) v = std::sqrt(v);
  const auto [lo, hi] = std::minmax_element(norm.begin(), norm.end());
  const double low = *lo, range = *hi - *lo;
  std::vector<double> scaled(norm.size(), 0.0);
  if (range > 0) {
    for (std::size_t i = 0; i < norm.size(); ++i) scaled[i] = (norm[i] - low) / range;
  }
  // Bilinear, half-pixel centers, edge clamped.
  std::vector<std::uint8_t> out(static_cast<std::size_t>(out_h * out_w));
  const double sy = double(s.h) / double(out_h), sx = double(s.w) / double(out_w);
  for (std::int64_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(s.h - 1));
    const std::int64_t y0 = static_cast<std::int64_t>(fy), y1 = std::min(y0 + 1, s.h - 1);
    const double wy = fy - double(y0);
    for (std::int64_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(s.w - 1));
      const std::int64_t x0 = static_cast<std::int64_t>(fx), x1 = std::min(x0 + 1, s.w - 1);
      const double wx = fx - double(x0);
      const auto at = [&](std::int64_t yy, std::int64_t xx) { return scaled[static_cast<std::size_t>(yy * s.w + xx)]; };
      const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) + wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
      out[static_cast<std::size_t>(y * out_w + x)] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

template <typename T>
std::vector<std::uint8_t> export_heatmap(const Model<T>& model, const Tensor<T>& image, const std::string& tap,
                                         const std::string& path) {
  const Shape s = image.shape();
  auto map = heatmap(model.activation(image, tap), s.h, s.w);
  if (path.empty()) throw DataError("heat map: empty output path");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("heat map: cannot write '" + path + "'");
  out << "P5\n" << s.w << " " << s.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(map.data()), static_cast<std::streamsize>(map.size()));
  if (!out) throw DataError("heat map: write failed for '" + path + "'");
  return map;
}

std::vector<TuneCandidate> tune_widths(const ArchConfig& base, std::int64_t target_params, std::int64_t target_flops,
                                       double flops_tolerance) {
  std::vector<TuneCandidate> out;
  const std::vector<std::vector<std::int64_t>> stages{
      {32, 64, 128}, {48, 96, 192}, {64, 128, 256}, {80, 160, 320}, {96, 192, 384}, {128, 256, 512}};
  const std::vector<std::int64_t> necks{32, 48, 64, 80, 96, 128};
  const std::vector<std::int64_t> heads{32, 48, 64, 80, 96, 128};
  const std::vector<std::vector<std::int64_t>> stems{{16, 32}, {16, 48}, {32, 64}};
  for (const auto& stem : stems) {
    for (const auto& st : stages) {
      for (auto n : necks) {
        for (auto h : heads) {
          ArchConfig c = base;
          c.stem_widths = stem;
          c.stage_widths = st;
          c.neck_width = n;
          c.head_width = h;
          try {
            c.validate();
          } catch (const UsageError&) {
            continue;
          }
          // Counting only needs shapes; build in float for speed.
          const Model<float> m(c, 0);
          const CountReport r = m.count();
          TuneCandidate t{c, r.total_params(), r.total_flops(), false};
          t.within_flops = std::abs(double(t.flops) - double(target_flops)) <= flops_tolerance * double(target_flops);
          out.push_back(std::move(t));
        }
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [&](const TuneCandidate& a, const TuneCandidate& b) {
    if (a.within_flops != b.within_flops) return a.within_flops;
    return std::llabs(a.params - target_params) < std::llabs(b.params - target_params);
  });
  return out;
}

template class Model<float>;
template class Model<double>;
template std::vector<std::uint8_t> heatmap(const Tensor<float>&, std::int64_t, std::int64_t);
template std::vector<std::uint8_t> heatmap(const Tensor<double>&, std::int64_t, std::int64_t);
template std::vector<std::uint8_t> export_heatmap(const Model<float>&, const Tensor<float>&, const std::string&,
                                                  const std::string&);
template std::vector<std::uint8_t> export_heatmap(const Model<double>&, const Tensor<double>&, const std::string&,
                                                  const std::string&);

}  // namespace rsnet
