#include "rsnet/check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "rsnet/checkpoint.hpp"
#include "rsnet/data.hpp"
#include "rsnet/detect.hpp"
#include "rsnet/error.hpp"
#include "rsnet/layers.hpp"
#include "rsnet/model.hpp"
#include "rsnet/ops.hpp"

namespace rsnet {

namespace {

using D = double;

Tensor<D> random_tensor(Rng& rng, Shape s, double scale = 1.0) {
  Tensor<D> t(s);
  rng.fill_normal(t.data(), 0.0, scale);
  return t;
}

// Keeps values at least `gap` away from each kink.
Tensor<D> away_from(Tensor<D> t, std::initializer_list<double> kinks, double gap = 1e-3) {
  for (auto& v : t.data()) {
    for (double k : kinks) {
      if (std::abs(v - k) < gap) v = k + (v < k ? -gap : gap);
    }
  }
  return t;
}

std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) { return rng.uniform_int(lo, hi); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

WaveletFilterBank corrupted_haar() {
  WaveletFilterBank b = WaveletFilterBank::haar();
  b.kernels[0][0] += std::ldexp(1.0, -20);
  return b;
}

template <typename T>
ReconstructionStats wavelet_reconstruction(const WaveletFilterBank& bank, int trials, std::uint64_t seed) {
  ReconstructionStats st;
  Rng rng(seed);
  for (int i = 0; i < trials; ++i) {
    const Shape s{rng.uniform_int(1, 2), rng.uniform_int(1, 4), rng.uniform_int(1, 17), rng.uniform_int(1, 17)};
    Tensor<T> x(s);
    rng.fill_normal(x.data(), 0.0, 1.0);
    Tape<T> tape(false);
    const Subbands<T> sb = haar_analysis(tape.constant(x), bank);
    const Tensor<T>& y = haar_synthesis(sb.bands, bank, std::make_pair(s.h, s.w)).value();
    st.max_rel_error = std::max(st.max_rel_error, max_rel_diff(y, x));
    const double ex = sum_squares(x), eb = sum_squares(sb.bands.value());
    st.max_energy_error = std::max(st.max_energy_error, std::abs(ex - eb) / ex);
  }
  return st;
}

template ReconstructionStats wavelet_reconstruction<float>(const WaveletFilterBank&, int, std::uint64_t);
template ReconstructionStats wavelet_reconstruction<double>(const WaveletFilterBank&, int, std::uint64_t);

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  const auto add = [&](std::string name, std::function<GradCheckResult(Rng&)> f) {
    cases.push_back(GradCase{std::move(name), std::move(f)});
  };
  const auto small = [](Rng& rng, std::int64_t c_lo = 1, std::int64_t c_hi = 3) {
    return Shape{pick(rng, 1, 2), pick(rng, c_lo, c_hi), pick(rng, 2, 6), pick(rng, 2, 6)};
  };

  add("conv2d", [=](Rng& rng) {
    const int groups = static_cast<int>(pick(rng, 1, 2));
    const std::int64_t cin = groups * pick(rng, 1, 2), cout = groups * pick(rng, 1, 2);
    const int k = static_cast<int>(pick(rng, 1, 3));
    const ops::ConvOptions o{static_cast<int>(pick(rng, 1, 2)), static_cast<int>(pick(rng, 0, 1)),
                             static_cast<int>(pick(rng, 1, 2)), groups};
    const std::int64_t ext = (k - 1) * o.dilation + 1;
    const Shape xs{pick(rng, 1, 2), cin, pick(rng, ext, ext + 4), pick(rng, ext, ext + 4)};
    return grad_check(
        [o](Tape<D>&, const std::vector<Var<D>>& v) { return ops::conv2d(v[0], v[1], std::optional<Var<D>>(v[2]), o); },
        {random_tensor(rng, xs), random_tensor(rng, Shape{cout, cin / groups, k, k}),
         random_tensor(rng, Shape{1, cout, 1, 1})});
  });
  add("conv2d_depthwise", [=](Rng& rng) {
    const std::int64_t c = pick(rng, 1, 4);
    const int d = static_cast<int>(pick(rng, 1, 2));
    const ops::ConvOptions o{1, d, d, static_cast<int>(c)};
    const Shape xs{pick(rng, 1, 2), c, pick(rng, 3, 7), pick(rng, 3, 7)};
    return grad_check(
        [o](Tape<D>&, const std::vector<Var<D>>& v) { return ops::conv2d<D>(v[0], v[1], std::nullopt, o); },
        {random_tensor(rng, xs), random_tensor(rng, Shape{c, 1, 3, 3})});
  });
  add("conv_transpose2d", [=](Rng& rng) {
    const std::int64_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
    const int k = static_cast<int>(pick(rng, 1, 3)), stride = static_cast<int>(pick(rng, 1, 2));
    return grad_check(
        [stride](Tape<D>&, const std::vector<Var<D>>& v) { return ops::conv_transpose2d(v[0], v[1], stride); },
        {random_tensor(rng, Shape{pick(rng, 1, 2), cin, pick(rng, 1, 4), pick(rng, 1, 4)}),
         random_tensor(rng, Shape{cin, cout, k, k})});
  });
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    add(mode == Mode::Train ? "batch_norm_train" : "batch_norm_eval", [=](Rng& rng) {
      const Shape s = small(rng);
      Tensor<D> rm = random_tensor(rng, Shape{1, s.c, 1, 1}, 0.1);
      Tensor<D> rv(Shape{1, s.c, 1, 1});
      for (auto& v : rv.data()) v = rng.uniform(0.5, 2.0);
      return grad_check(
          [=](Tape<D>&, const std::vector<Var<D>>& v) {
            Tensor<D> m = rm, var = rv;  // running statistics stay fixed across evaluations
            return ops::batch_norm(v[0], v[1], v[2], m, var, mode);
          },
          {random_tensor(rng, s), random_tensor(rng, Shape{1, s.c, 1, 1}), random_tensor(rng, Shape{1, s.c, 1, 1})});
    });
  }
  add("group_norm", [=](Rng& rng) {
    const int groups = static_cast<int>(pick(rng, 1, 2));
    const Shape s{pick(rng, 1, 2), groups * pick(rng, 1, 2), pick(rng, 2, 4), pick(rng, 2, 4)};
    return grad_check(
        [groups](Tape<D>&, const std::vector<Var<D>>& v) { return ops::group_norm(v[0], groups, v[1], v[2]); },
        {random_tensor(rng, s), random_tensor(rng, Shape{1, s.c, 1, 1}), random_tensor(rng, Shape{1, s.c, 1, 1})});
  });
  add("relu6", [=](Rng& rng) {
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return ops::relu6(v[0]); },
                      {away_from(random_tensor(rng, small(rng), 4.0), {0.0, 6.0})});
  });
  add("sigmoid", [=](Rng& rng) {
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return ops::sigmoid(v[0]); },
                      {random_tensor(rng, small(rng), 2.0)});
  });
  add("silu", [=](Rng& rng) {
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return ops::silu(v[0]); },
                      {random_tensor(rng, small(rng), 2.0)});
  });
  add("exp_capped", [=](Rng& rng) {
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return ops::exp_capped(v[0], 1.0); },
                      {away_from(random_tensor(rng, small(rng)), {1.0})});
  });
  add("add_mul", [=](Rng& rng) {
    const Shape s = small(rng);
    return grad_check(
        [](Tape<D>&, const std::vector<Var<D>>& v) { return ops::mul(ops::add(v[0], v[1]), v[1]); },
        {random_tensor(rng, s), random_tensor(rng, s)});
  });
  add("mul_channel", [=](Rng& rng) {
    const Shape s = small(rng);
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return ops::mul_channel(v[0], v[1]); },
                      {random_tensor(rng, s), random_tensor(rng, Shape{s.n, s.c, 1, 1})});
  });
  add("mul_scalar", [=](Rng& rng) {
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return ops::mul_scalar(v[0], v[1]); },
                      {random_tensor(rng, small(rng)), random_tensor(rng, Shape{1, 1, 1, 1})});
  });
  add("concat_slice", [=](Rng& rng) {
    Shape a = small(rng), b = a;
    b.c = pick(rng, 1, 3);
    const std::int64_t begin = pick(rng, 0, a.c + b.c - 1);
    const std::int64_t count = pick(rng, 1, a.c + b.c - begin);
    return grad_check(
        [=](Tape<D>&, const std::vector<Var<D>>& v) {
          return ops::slice_channels(ops::concat_channels<D>({v[0], v[1]}), begin, count);
        },
        {random_tensor(rng, a), random_tensor(rng, b)});
  });
  add("global_avg_pool", [=](Rng& rng) {
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return ops::global_avg_pool(v[0]); },
                      {random_tensor(rng, small(rng))});
  });
  add("upsample_nearest2x", [=](Rng& rng) {
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return ops::upsample_nearest2x(v[0]); },
                      {random_tensor(rng, small(rng))});
  });
  add("dropout", [=](Rng& rng) {
    const double p = rng.uniform(0.1, 0.6);
    const std::uint64_t mask_seed = rng();
    return grad_check(
        [=](Tape<D>&, const std::vector<Var<D>>& v) {
          Rng r(mask_seed);  // same mask on every evaluation
          return ops::dropout(v[0], p, Mode::Train, r);
        },
        {random_tensor(rng, small(rng))});
  });
  add("sum", [=](Rng& rng) {
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return ops::sum(v[0]); },
                      {random_tensor(rng, small(rng))});
  });
  add("bce_with_logits_sum", [=](Rng& rng) {
    const Shape s = small(rng);
    Tensor<D> target(s);
    for (auto& t : target.data()) t = rng.uniform() < 0.3 ? 1.0 : rng.uniform() * 0.5;
    return grad_check(
        [target](Tape<D>&, const std::vector<Var<D>>& v) { return ops::bce_with_logits_sum(v[0], target); },
        {random_tensor(rng, s, 3.0)});
  });
  add("haar_analysis", [=](Rng& rng) {
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return haar_analysis(v[0]).bands; },
                      {random_tensor(rng, Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 7), pick(rng, 1, 7)})});
  });
  add("haar_synthesis", [=](Rng& rng) {
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return haar_synthesis(v[0]); },
                      {random_tensor(rng, Shape{pick(rng, 1, 2), 4 * pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 4)})});
  });
  add("wavelet_unpool", [=](Rng& rng) {
    return grad_check([](Tape<D>&, const std::vector<Var<D>>& v) { return wavelet_unpool(v[0]); },
                      {random_tensor(rng, Shape{pick(rng, 1, 2), 4 * pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 4)})});
  });
  for (WaveletAggregate agg : {WaveletAggregate::Stack, WaveletAggregate::Sum}) {
    add(agg == WaveletAggregate::Stack ? "wavelet_pool_stack" : "wavelet_pool_sum", [=](Rng& rng) {
      const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 7), pick(rng, 2, 7)};
      const std::int64_t cout = pick(rng, 1, 4);
      const std::int64_t mixed = agg == WaveletAggregate::Stack ? 4 * s.c : s.c;
      return grad_check(
          [agg](Tape<D>&, const std::vector<Var<D>>& v) {
            return wavelet_pool(v[0], v[1], std::optional<Var<D>>(v[2]), agg);
          },
          {random_tensor(rng, s), random_tensor(rng, Shape{cout, mixed, 1, 1}), random_tensor(rng, Shape{1, cout, 1, 1})});
    });
  }
  add("detection_loss", [=](Rng& rng) {
    // Single level at stride 8; every box contains its center cell's center.
    const std::int64_t n = pick(rng, 1, 2), g = 4;
    std::vector<std::vector<GroundTruth>> gt(static_cast<std::size_t>(n));
    for (auto& image : gt) {
      for (int k = 0, count = static_cast<int>(pick(rng, 0, 2)); k < count; ++k) {
        const double w = rng.uniform(8, 20), h = rng.uniform(8, 20);
        const double cx = rng.uniform(w / 2 + 0.5, 32 - w / 2 - 0.5), cy = rng.uniform(h / 2 + 0.5, 32 - h / 2 - 0.5);
        image.push_back(GroundTruth{0, Box{cx / 32, cy / 32, w / 32, h / 32}});
      }
    }
    return grad_check(
        [gt](Tape<D>&, const std::vector<Var<D>>& v) {
          return detection_loss<D>({LevelRaw<D>{v[0], v[1]}}, gt, {8}, 32, 32).total;
        },
        {random_tensor(rng, Shape{n, 4, g, g}, 0.3), random_tensor(rng, Shape{n, 1, g, g})});
  });

  // Blocks, checked through their inputs and every trainable parameter.
  const auto block = [](Rng& rng, Shape in, auto make) {
    ParameterStore<D> store;
    Rng init = rng.split("init");
    auto layer = make(store, init);
    // Move norm params away from their identity initialisation.
    for (auto& p : store) {
      if (p->trainable) rng.fill_normal(p->value.data(), 0.0, 0.5);
    }
    return grad_check(
        [&](Tape<D>& t, const std::vector<Var<D>>& v) {
          Context<D> ctx{t, Mode::Train, nullptr, nullptr};
          return layer.forward(ctx, v[0]);
        },
        {random_tensor(rng, in)}, &store);
  };
  add("block_conv_unit", [=](Rng& rng) {
    ConvSpec s;
    s.cin = pick(rng, 1, 3);
    s.cout = 2 * pick(rng, 1, 2);
    s.kernel = 3;
    s.stride = static_cast<int>(pick(rng, 1, 2));
    s.norm = Norm::Batch;
    s.act = Act::SiLU;
    return block(rng, Shape{2, s.cin, pick(rng, 3, 6), pick(rng, 3, 6)},
                 [&](ParameterStore<D>& st, Rng& r) { return ConvUnit<D>("conv", s, st, r); });
  });
  add("block_c2f_lite", [=](Rng& rng) {
    const std::int64_t cin = pick(rng, 1, 4), cout = 2 * pick(rng, 1, 2);
    return block(rng, Shape{2, cin, pick(rng, 3, 5), pick(rng, 3, 5)},
                 [&](ParameterStore<D>& st, Rng& r) { return C2fLite<D>("c2f", cin, cout, true, st, r); });
  });
  add("block_context_guided", [=](Rng& rng) {
    const std::int64_t cout = 2 * pick(rng, 2, 4);
    const std::int64_t cin = rng.uniform() < 0.5 ? cout : pick(rng, 2, 6);
    const ContextGuidedConfig cfg{cin, cout, 2, 4};
    return block(rng, Shape{2, cin, pick(rng, 3, 6), pick(rng, 3, 6)},
                 [&](ParameterStore<D>& st, Rng& r) { return ContextGuided<D>("cgb", cfg, st, r); });
  });
  add("block_star", [=](Rng& rng) {
    const StarConfig cfg{pick(rng, 1, 3), static_cast<int>(pick(rng, 1, 3)), 0.0};
    return block(rng, Shape{2, cfg.channels, pick(rng, 3, 6), pick(rng, 3, 6)},
                 [&](ParameterStore<D>& st, Rng& r) { return Star<D>("star", cfg, st, r); });
  });
  add("block_wavelet_pool", [=](Rng& rng) {
    const std::int64_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 4);
    const WaveletAggregate agg = rng.uniform() < 0.5 ? WaveletAggregate::Stack : WaveletAggregate::Sum;
    return block(rng, Shape{2, cin, pick(rng, 2, 7), pick(rng, 2, 7)}, [&](ParameterStore<D>& st, Rng& r) {
      return WaveletPoolLayer<D>("pool", cin, cout, agg, st, r);
    });
  });
  add("block_ls_head", [=](Rng& rng) {
    // Three levels; the check sums box and class maps of every level.
    const bool shared = rng.uniform() < 0.7;
    const std::int64_t hidden = 2 * pick(rng, 1, 2);
    const std::vector<std::int64_t> chans{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    ParameterStore<D> store;
    Rng init = rng.split("init");
    DetectHead<D> head("head", HeadConfig{chans, hidden, 2, shared}, store, init);
    for (auto& p : store) {
      if (p->trainable) rng.fill_normal(p->value.data(), 0.0, 0.5);
    }
    const std::int64_t n = 2, h = pick(rng, 2, 4);
    return grad_check(
        [&](Tape<D>& t, const std::vector<Var<D>>& v) {
          Context<D> ctx{t, Mode::Train, nullptr, nullptr};
          const auto raw = head.forward(ctx, v);
          std::vector<Var<D>> parts;
          for (const auto& r : raw) parts.push_back(ops::global_avg_pool(ops::concat_channels<D>({r.box, r.cls})));
          return ops::concat_channels<D>(parts);
        },
        {random_tensor(rng, Shape{n, chans[0], 2 * h, 2 * h}), random_tensor(rng, Shape{n, chans[1], h, h}),
         random_tensor(rng, Shape{n, chans[2], (h + 1) / 2, (h + 1) / 2})},
        &store);
  });
  return cases;
}

namespace {

// Cutoff enumeration: for every distinct confidence, precision and recall of
// the detections at or above it; AP integrates the envelope over recall.
double cutoff_ap(const std::vector<EvalImage>& images, int cls, double thr) {
  std::vector<double> cuts;
  std::int64_t num_gt = 0;
  for (const auto& im : images) {
    for (const auto& d : im.detections)
      if (d.cls == cls) cuts.push_back(d.conf);
    for (const auto& g : im.gt) num_gt += g.cls == cls;
  }
  if (num_gt == 0) return 0.0;
  std::sort(cuts.begin(), cuts.end(), std::greater<>());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<std::pair<double, double>> pr;  // recall, precision
  for (double cut : cuts) {
    std::int64_t tp = 0, kept = 0;
    for (const auto& im : images) {
      std::vector<const Detection*> ds;
      for (const auto& d : im.detections)
        if (d.cls == cls && d.conf >= cut) ds.push_back(&d);
      std::stable_sort(ds.begin(), ds.end(), [](auto* a, auto* b) { return a->conf > b->conf; });
      std::vector<bool> used(im.gt.size(), false);
      for (const Detection* d : ds) {
        ++kept;
        std::ptrdiff_t best = -1;
        double best_iou = -1;
        for (std::size_t k = 0; k < im.gt.size(); ++k) {
          if (im.gt[k].cls != cls || used[k]) continue;
          const double o = iou(d->box, im.gt[k].box);
          if (o >= thr && o > best_iou) {
            best_iou = o;
            best = static_cast<std::ptrdiff_t>(k);
          }
        }
        if (best >= 0) {
          used[static_cast<std::size_t>(best)] = true;
          ++tp;
        }
      }
    }
    pr.emplace_back(double(tp) / double(num_gt), double(tp) / double(kept));
  }
  double ap = 0, prev = 0;
  for (std::size_t i = 0; i < pr.size(); ++i) {
    double best = 0;
    for (std::size_t j = i; j < pr.size(); ++j) best = std::max(best, pr[j].second);
    if (pr[i].first > prev) {
      ap += (pr[i].first - prev) * best;
      prev = pr[i].first;
    }
  }
  return ap;
}

}  // namespace

std::vector<CheckResult> run_checks(const CheckOptions& options,
                                    const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> results;
  const auto report = [&](std::string name, bool ok, std::string detail) {
    results.push_back(CheckResult{std::move(name), ok, std::move(detail)});
    if (on_result) on_result(results.back());
  };
  const auto guarded = [&](const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      report(name, false, std::string("exception: ") + e.what());
    }
  };
  const WaveletFilterBank bank = options.corrupt_filter ? corrupted_haar() : WaveletFilterBank::haar();

  guarded("wavelet.orthonormal", [&] {
    const bool ok = bank.orthonormal();
    report("wavelet.orthonormal", ok, ok ? "Gram matrix equals identity" : "Gram matrix differs from identity");
  });
  guarded("wavelet.reconstruction", [&] {
    const auto f = wavelet_reconstruction<float>(bank, 100, options.seed);
    const auto d = wavelet_reconstruction<double>(bank, 100, options.seed);
    const bool ok = f.max_rel_error <= 1e-6 && f.max_energy_error <= 1e-6 && d.max_rel_error <= 1e-12 &&
                    d.max_energy_error <= 1e-12;
    report("wavelet.reconstruction", ok,
           "f32 " + fmt("%.2e", f.max_rel_error) + "/" + fmt("%.2e", f.max_energy_error) + ", f64 " +
               fmt("%.2e", d.max_rel_error) + "/" + fmt("%.2e", d.max_energy_error));
  });

  for (const auto& c : gradient_cases()) {
    guarded("grad." + c.name, [&] {
      Rng rng = Rng(options.seed).split(c.name);
      double worst = 0;
      std::string where;
      for (int i = 0; i < options.gradient_shapes; ++i) {
        const GradCheckResult r = c.run(rng);
        if (r.max_rel_error >= worst) {
          worst = r.max_rel_error;
          where = r.worst;
        }
      }
      report("grad." + c.name, worst < 1e-4, "max rel error " + fmt("%.2e", worst) + " at " + where);
    });
  }

  guarded("count.enumeration", [&] {
    bool ok = true;
    std::string detail;
    for (const auto& name : ArchConfig::preset_names()) {
      const Model<float> m(ArchConfig::preset(name), 0);
      const CountReport r = m.count();
      std::int64_t rows = 0;
      std::set<std::string> named;
      for (const auto& row : r.rows) {
        rows += row.params;
        named.insert(row.param_names.begin(), row.param_names.end());
      }
      std::int64_t enumerated = 0;
      bool all_named = true;
      for (const auto& p : m.params()) {
        if (!p->trainable) continue;
        enumerated += p->value.numel();
        all_named = all_named && named.count(p->name);
      }
      const bool good = enumerated == m.analytic_params() && enumerated == r.total_params() && rows == enumerated &&
                        all_named && m.graph().acyclic();
      ok = ok && good;
      detail += name + " " + std::to_string(enumerated) + (good ? "" : " MISMATCH") + "; ";
    }
    report("count.enumeration", ok, detail);
  });
  guarded("count.head_sharing", [&] {
    ArchConfig a = ArchConfig::preset("rsnet-ref"), b = a;
    b.head_shared = false;
    const Model<float> ma(a, 0), mb(b, 0);
    const std::int64_t pa = ma.count().total_params(), pb = mb.count().total_params();
    std::int64_t unpool = 0;
    for (const auto& row : ma.count().rows)
      if (row.kind == "wavelet_unpool") unpool += row.params;
    report("count.head_sharing", pa < pb && unpool == 0,
           "shared " + std::to_string(pa) + " < unshared " + std::to_string(pb) + ", unpool params " +
               std::to_string(unpool));
  });
  guarded("count.ablation_order", [&] {
    std::vector<std::int64_t> p;
    std::string detail;
    for (const char* n : {"ablation-baseline", "ablation-wcg", "ablation-wcg-wsf", "rsnet-ref"}) {
      p.push_back(Model<float>(ArchConfig::preset(n), 0).count().total_params());
      detail += std::string(n) + " " + std::to_string(p.back()) + "; ";
    }
    report("count.ablation_order", p[0] > p[1] && p[1] > p[2] && p[2] > p[3], detail);
  });
  guarded("count.reference_budget", [&] {
    const CountReport r = Model<float>(ArchConfig::preset("rsnet-ref"), 0).count(640, 640);
    const double params = double(r.total_params()), flops = double(r.total_flops());
    const bool ok = std::abs(params / 1.49e6 - 1) <= 0.25 && std::abs(flops / 5.1e9 - 1) <= 0.25;
    report("count.reference_budget", ok,
           fmt("params %.3fM", params / 1e6) + fmt(", FLOPs %.3fG", flops / 1e9) + " (targets 1.49M, 5.1G, +-25%)");
  });

  guarded("checkpoint.round_trip", [&] {
    namespace fs = std::filesystem;
    const fs::path dir = options.scratch_dir.empty() ? fs::temp_directory_path() : fs::path(options.scratch_dir);
    const fs::path path = dir / ("rsnet_check_" + std::to_string(options.seed) + ".rsnt");
    const Model<float> m(ArchConfig::preset("rsnet-desk"), options.seed);
    save_checkpoint(m, path.string());
    const Model<float> back = load_checkpoint<float>(path.string());
    Tensor<float> x(Shape{1, 1, 64, 64});
    Rng(options.seed).fill_normal(x.data(), 0.5, 0.2);
    const auto a = m.predict(x), b = back.predict(x);
    bool same = true;
    for (std::size_t l = 0; l < a.size(); ++l) {
      same = same && std::equal(a[l].box.data().begin(), a[l].box.data().end(), b[l].box.data().begin()) &&
             std::equal(a[l].cls.data().begin(), a[l].cls.data().end(), b[l].cls.data().begin());
    }
    // A flipped byte must be rejected.
    auto bytes = encode_checkpoint(read_checkpoint_file(path.string()));
    bytes[bytes.size() / 2] ^= 0x10;
    bool rejected = false;
    try {
      decode_checkpoint(bytes);
    } catch (const DataError&) {
      rejected = true;
    }
    fs::remove(path);
    report("checkpoint.round_trip", same && rejected,
           std::string(same ? "bit-identical outputs" : "outputs differ") + (rejected ? ", corruption rejected" : ", corruption accepted"));
  });

  guarded("eval.oracle", [&] {
    Rng rng = Rng(options.seed).split("eval");
    double worst = 0;
    bool ordered = true;
    for (int t = 0; t < 50; ++t) {
      std::vector<EvalImage> images;
      for (int i = 0, n = static_cast<int>(rng.uniform_int(1, 3)); i < n; ++i) {
        EvalImage im{std::to_string(i), {}, {}};
        for (int k = 0, g = static_cast<int>(rng.uniform_int(0, 3)); k < g; ++k) {
          im.gt.push_back(GroundTruth{0, Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3),
                                             rng.uniform(0.05, 0.3)}});
        }
        for (int k = 0, d = static_cast<int>(rng.uniform_int(0, 4)); k < d; ++k) {
          Box b = im.gt.empty() || rng.uniform() < 0.3 ? Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.1, 0.1}
                                                       : im.gt[static_cast<std::size_t>(rng.uniform_int(
                                                             0, static_cast<std::int64_t>(im.gt.size()) - 1))].box;
          b.cx += rng.normal(0, 0.01);
          b.cy += rng.normal(0, 0.01);
          im.detections.push_back(Detection{0, rng.uniform(), b});
        }
        images.push_back(std::move(im));
      }
      const APResult r = evaluate(images);
      ordered = ordered && r.map50_95 <= r.map50 + 1e-12;
      if (r.classes.empty()) continue;
      for (std::size_t k = 0; k < kIouThresholds.size(); ++k) {
        worst = std::max(worst, std::abs(r.classes[0].ap[k] - cutoff_ap(images, 0, kIouThresholds[k])));
      }
    }
    report("eval.oracle", worst <= 1e-9 && ordered, "max |AP - cutoff oracle| " + fmt("%.2e", worst));
  });

  guarded("determinism", [&] {
    SyntheticSceneSpec spec;
    spec.seed = options.seed;
    const Scene a = render_scene(spec, 3), b = render_scene(spec, 3);
    const Model<float> m1(ArchConfig::preset("rsnet-desk"), options.seed), m2(ArchConfig::preset("rsnet-desk"), options.seed);
    bool same_params = true;
    for (std::size_t i = 0; i < m1.params().size(); ++i) {
      const auto x = m1.params()[i].value.data(), y = m2.params()[i].value.data();
      same_params = same_params && std::equal(x.begin(), x.end(), y.begin());
    }
    const bool ok = a.image.pixels == b.image.pixels && format_labels(a.gt) == format_labels(b.gt) && same_params;
    report("determinism", ok, ok ? "scenes and initial parameters repeat exactly" : "runs differ");
  });

  guarded("heatmap.degenerate", [&] {
    const auto map = heatmap(Tensor<float>(Shape{1, 4, 5, 5}, 3.0f), 20, 20);
    const bool ok = map.size() == 400 && std::all_of(map.begin(), map.end(), [](std::uint8_t v) { return v == 0; });
    report("heatmap.degenerate", ok, "constant activation gives an all-zero map");
  });
  return results;
}

}  // namespace rsnet
