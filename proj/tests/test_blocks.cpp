#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "oracles.hpp"
#include "rsnet/detect.hpp"
#include "rsnet/gradcheck.hpp"
#include "rsnet/layers.hpp"

using namespace rsnet;
using D = double;

namespace {

template <typename T, typename Layer>
Tensor<T> eval_forward(const Layer& layer, const Tensor<T>& x, Mode mode = Mode::Eval) {
  Tape<T> t(false);
  Rng rng(99);
  Context<T> ctx{t, mode, &rng, nullptr};
  return layer.forward(ctx, t.constant(x)).value();
}

std::vector<LevelMaps<float>> head_maps(const DetectHead<float>& head, const std::vector<Tensor<float>>& feats) {
  Tape<float> t(false);
  Context<float> ctx{t, Mode::Eval, nullptr, nullptr};
  std::vector<Var<float>> vars;
  for (const auto& f : feats) vars.push_back(t.constant(f));
  return level_maps(head.forward(ctx, vars));
}

void copy_param(ParameterStore<float>& s, const std::string& from, const std::string& to) {
  s.at(to).value = s.at(from).value;
}

}  // namespace

TEST_SUITE("context guided block") {
  TEST_CASE("shape contract") {
    ParameterStore<float> s;
    Rng rng(1);
    ContextGuided<float> cgb("cgb", {32, 32, 2, 16}, s, rng);
    Rng data(2);
    const auto y = eval_forward(cgb, th::randnf(data, Shape{2, 32, 40, 40}));
    CHECK(y.shape() == Shape{2, 32, 40, 40});
    for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(std::isfinite(y[i]));
  }

  TEST_CASE("projection shortcut when widths differ") {
    ParameterStore<float> s;
    Rng rng(3);
    ContextGuided<float> cgb("cgb", {16, 32, 2, 16}, s, rng);
    CHECK(s.find("cgb.shortcut.weight") != nullptr);
    Rng data(4);
    CHECK(eval_forward(cgb, th::randnf(data, Shape{1, 16, 8, 8})).shape() == Shape{1, 32, 8, 8});
  }

  TEST_CASE("closed gate leaves the residual input") {
    ParameterStore<float> s;
    Rng rng(5);
    ContextGuided<float> cgb("cgb", {8, 8, 2, 4}, s, rng);
    cgb.gate_expand().bias->value.fill(-1e30f);
    Rng data(6);
    const auto x = th::randnf(data, Shape{2, 8, 6, 6});
    CHECK(th::bit_equal(eval_forward(cgb, x), x));
  }

  TEST_CASE("invalid configuration") {
    ParameterStore<float> s;
    Rng rng(7);
    CHECK_THROWS_AS(ContextGuided<float>("a", {8, 7, 2, 4}, s, rng), Error);
    CHECK_THROWS_AS(ContextGuided<float>("b", {8, 8, 0, 4}, s, rng), Error);
  }

  TEST_CASE("analytic count equals enumeration") {
    for (auto cfg : {ContextGuidedConfig{32, 32, 2, 16}, ContextGuidedConfig{16, 64, 2, 16}, ContextGuidedConfig{8, 6, 3, 4}}) {
      ParameterStore<float> s;
      Rng rng(8);
      ContextGuided<float> cgb("cgb", cfg, s, rng);
      CHECK(cgb.analytic_params() == s.trainable_count());
    }
  }

  TEST_CASE("full block gradient, identity and projection shortcuts") {
    for (auto cfg : {ContextGuidedConfig{4, 4, 2, 2}, ContextGuidedConfig{3, 6, 2, 2}}) {
      ParameterStore<D> s;
      Rng rng(9);
      ContextGuided<D> cgb("cgb", cfg, s, rng);
      for (auto& p : s)
        if (p->trainable) rng.fill_normal(p->value.data(), 0.0, 0.5);
      const auto r = grad_check(
          [&](Tape<D>& t, const std::vector<Var<D>>& v) {
            Context<D> ctx{t, Mode::Train, nullptr, nullptr};
            return cgb.forward(ctx, v[0]);
          },
          {th::randn(rng, Shape{2, cfg.c_in, 5, 5})}, &s);
      INFO(r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_SUITE("star block") {
  TEST_CASE("output shape equals input shape") {
    ParameterStore<float> s;
    Rng rng(10);
    Star<float> star("star", {16, 3, 0.1}, s, rng);
    Rng data(11);
    CHECK(eval_forward(star, th::randnf(data, Shape{2, 16, 9, 9})).shape() == Shape{2, 16, 9, 9});
  }

  TEST_CASE("dropout is the identity in eval mode") {
    ParameterStore<float> a, b;
    Rng r1(12), r2(12);
    Star<float> with("star", {8, 3, 0.5}, a, r1), without("star", {8, 3, 0.0}, b, r2);
    Rng data(13);
    const auto x = th::randnf(data, Shape{1, 8, 7, 7});
    CHECK(th::bit_equal(eval_forward(with, x), eval_forward(without, x)));
    // In train mode the residual branch is thinned.
    CHECK_FALSE(th::bit_equal(eval_forward(with, x, Mode::Train), eval_forward(without, x, Mode::Train)));
  }

  TEST_CASE("zero pointwise projection gives the pure residual") {
    ParameterStore<float> s;
    Rng rng(14);
    Star<float> star("star", {8, 3, 0.0}, s, rng);
    star.pointwise_out().weight->value.fill(0.0f);
    Rng data(15);
    const auto x = th::randnf(data, Shape{2, 8, 5, 5});
    CHECK(th::bit_equal(eval_forward(star, x), x));
  }

  TEST_CASE("gradient through the product reaches both branches") {
    ParameterStore<D> s;
    Rng rng(16);
    Star<D> star("star", {2, 2, 0.0}, s, rng);
    for (auto& p : s)
      if (p->trainable) rng.fill_normal(p->value.data(), 0.0, 0.5);
    const auto r = grad_check(
        [&](Tape<D>& t, const std::vector<Var<D>>& v) {
          Context<D> ctx{t, Mode::Train, nullptr, nullptr};
          return star.forward(ctx, v[0]);
        },
        {th::randn(rng, Shape{2, 2, 4, 4})}, &s);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.checked > 0);
    // Both branch weights received a nonzero gradient on a real tape.
    s.zero_grads();
    Tape<D> t;
    Context<D> ctx{t, Mode::Train, nullptr, nullptr};
    t.backward(ops::sum(ops::mul(star.forward(ctx, t.constant(th::randn(rng, Shape{2, 2, 4, 4}))),
                                 t.constant(th::randn(rng, Shape{2, 2, 4, 4})))));
    double g1 = 0, g2 = 0;
    for (std::int64_t i = 0; i < s.at("star.f1.weight").grad.numel(); ++i) {
      g1 += std::abs(s.at("star.f1.weight").grad[i]);
      g2 += std::abs(s.at("star.f2.weight").grad[i]);
    }
    CHECK(g1 > 0);
    CHECK(g2 > 0);
  }
}

TEST_SUITE("LS head") {
  TEST_CASE("sharing is real: shared total below unshared, tower counted once") {
    ParameterStore<float> a, b;
    Rng r1(17), r2(17);
    DetectHead<float> shared("head", {{32, 64, 128}, 64, 1, true}, a, r1);
    DetectHead<float> unshared("head", {{32, 64, 128}, 64, 1, false}, b, r2);
    const std::int64_t pa = a.trainable_count(), pb = b.trainable_count();
    CHECK(shared.analytic_params() == pa);
    CHECK(unshared.analytic_params() == pb);
    CHECK(pa < pb);
    // Tower + projections: 2 x (64*64*9 + 2*64) + (4*64 + 4) + (64 + 1) per copy.
    const std::int64_t tower = 2 * (64 * 64 * 9 + 2 * 64) + (4 * 64 + 4) + (64 + 1);
    CHECK(pb - pa == 2 * tower);
    CHECK(&shared.tower(0, 0) == &shared.tower(2, 0));
    CHECK(&unshared.tower(0, 0) != &unshared.tower(2, 0));
  }

  TEST_CASE("identical inputs at two levels give identical maps") {
    ParameterStore<float> s;
    Rng rng(18);
    DetectHead<float> head("head", {{16, 16, 16}, 16, 1, true}, s, rng);
    for (const char* p : {"adapter.weight", "adapter.gn.gamma", "adapter.gn.beta"})
      copy_param(s, std::string("head.level0.") + p, std::string("head.level1.") + p);
    Rng data(19);
    const auto f = th::randnf(data, Shape{1, 16, 6, 6});
    const auto maps = head_maps(head, {f, f, th::randnf(data, Shape{1, 16, 3, 3})});
    CHECK(th::bit_equal(maps[0].box, maps[1].box));
    CHECK(th::bit_equal(maps[0].cls, maps[1].cls));
    head.scale(1).value.fill(2.0f);
    const auto scaled = head_maps(head, {f, f, th::randnf(data, Shape{1, 16, 3, 3})});
    CHECK_FALSE(th::bit_equal(scaled[0].box, scaled[1].box));
    CHECK(th::bit_equal(scaled[0].cls, scaled[1].cls));
  }

  TEST_CASE("shared weights affect every level, a scale only its own") {
    ParameterStore<float> s;
    Rng rng(20);
    DetectHead<float> head("head", {{8, 16, 32}, 16, 1, true}, s, rng);
    Rng data(21);
    const std::vector<Tensor<float>> feats{th::randnf(data, Shape{1, 8, 8, 8}), th::randnf(data, Shape{1, 16, 4, 4}),
                                           th::randnf(data, Shape{1, 32, 2, 2})};
    const auto base = head_maps(head, feats);
    s.at("head.shared.conv0.weight").value[0] += 0.5f;
    const auto tower = head_maps(head, feats);
    for (int l = 0; l < 3; ++l) CHECK_FALSE(th::bit_equal(base[l].box, tower[l].box));
    s.at("head.shared.conv0.weight").value[0] -= 0.5f;
    head.scale(2).value.fill(3.0f);
    const auto scaled = head_maps(head, feats);
    CHECK(th::bit_equal(base[0].box, scaled[0].box));
    CHECK(th::bit_equal(base[1].box, scaled[1].box));
    CHECK_FALSE(th::bit_equal(base[2].box, scaled[2].box));
  }

  TEST_CASE("finite difference on a scale parameter") {
    ParameterStore<D> s;
    Rng rng(22);
    DetectHead<D> head("head", {{2, 2, 2}, 4, 1, true}, s, rng);
    const std::vector<Tensor<D>> feats{th::randn(rng, Shape{1, 2, 4, 4}), th::randn(rng, Shape{1, 2, 2, 2}),
                                       th::randn(rng, Shape{1, 2, 1, 1})};
    const auto weights = th::randn(rng, Shape{1, 4, 2, 2});
    const auto loss = [&](Tape<D>& t) {
      Context<D> ctx{t, Mode::Train, nullptr, nullptr};
      std::vector<Var<D>> v;
      for (const auto& f : feats) v.push_back(t.constant(f));
      return ops::weighted_sum(head.forward(ctx, v)[1].box, weights);
    };
    Tape<D> t;
    t.backward(loss(t));
    const double analytic = head.scale(1).grad[0];
    const std::function<double(const Tensor<D>&)> f = [&](const Tensor<D>& v) {
      head.scale(1).value = v;
      Tape<D> tt(false);
      return loss(tt).value()[0];
    };
    const Tensor<D> keep = head.scale(1).value;
    const double numeric = oracle::central_difference(f, keep, 0);
    head.scale(1).value = keep;
    CHECK(analytic != 0.0);
    CHECK(std::abs(analytic - numeric) <= 1e-4 * std::abs(numeric));
  }

  TEST_CASE("level count must match") {
    ParameterStore<float> s;
    Rng rng(23);
    DetectHead<float> head("head", {{8, 8, 8}, 16, 1, true}, s, rng);
    CHECK_THROWS_AS(head_maps(head, {Tensor<float>(Shape{1, 8, 4, 4})}), Error);
  }
}

TEST_SUITE("box decoding") {
  TEST_CASE("unit distances at stride 8, cell center (12, 12)") {
    LevelMaps<float> m{Tensor<float>(Shape{1, 4, 8, 8}, 0.0f), Tensor<float>(Shape{1, 1, 8, 8}, -1e30f)};
    m.cls.at(0, 0, 1, 1) = 10.0f;
    const auto dets = decode_boxes<float>({m}, {8}, 64, 64, 0.5);
    REQUIRE(dets.size() == 1);
    REQUIRE(dets[0].size() == 1);
    const Box& b = dets[0][0].box;
    CHECK(b.cx == doctest::Approx(0.1875));
    CHECK(b.cy == doctest::Approx(0.1875));
    CHECK(b.w == doctest::Approx(0.25));
    CHECK(b.h == doctest::Approx(0.25));
    CHECK(dets[0][0].conf == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))));
  }

  TEST_CASE("all logits at -inf give no detections") {
    const float ninf = -std::numeric_limits<float>::infinity();
    std::vector<LevelMaps<float>> maps;
    for (std::int64_t g : {8, 4, 2}) maps.push_back({Tensor<float>(Shape{2, 4, g, g}), Tensor<float>(Shape{2, 1, g, g}, ninf)});
    const auto dets = decode_boxes(maps, {8, 16, 32}, 64, 64, 0.0);
    CHECK(dets.size() == 2);
    CHECK(dets[0].empty());
    CHECK(dets[1].empty());
  }

  TEST_CASE("threshold 0 keeps one detection per cell and class") {
    std::vector<LevelMaps<float>> maps;
    Rng data(24);
    for (std::int64_t g : {8, 4, 2}) maps.push_back({th::randnf(data, Shape{1, 4, g, g}), th::randnf(data, Shape{1, 2, g, g})});
    const auto dets = decode_boxes(maps, {8, 16, 32}, 64, 64, 0.0);
    CHECK(dets[0].size() == 2 * (64 + 16 + 4));
    for (const auto& d : dets[0]) {
      CHECK(d.box.x1() >= 0.0);
      CHECK(d.box.y1() >= 0.0);
      CHECK(d.box.x2() <= 1.0 + 1e-12);
      CHECK(d.box.y2() <= 1.0 + 1e-12);
    }
  }

  TEST_CASE("decode inverts encode at the assigned cell") {
    Rng rng(25);
    for (int trial = 0; trial < 100; ++trial) {
      const int stride = trial % 3 == 0 ? 8 : trial % 3 == 1 ? 16 : 32;
      const double w = rng.uniform(0.1, 0.5), h = rng.uniform(0.1, 0.5);
      const Box gt{rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h};
      const std::int64_t size = 256, g = size / stride;
      const std::int64_t cx = static_cast<std::int64_t>(gt.cx * size) / stride;
      const std::int64_t cy = static_cast<std::int64_t>(gt.cy * size) / stride;
      const auto logits = encode_box(gt, cx, cy, stride, size, size);
      LevelMaps<double> m{Tensor<double>(Shape{1, 4, g, g}), Tensor<double>(Shape{1, 1, g, g}, -1e300)};
      for (int k = 0; k < 4; ++k) m.box.at(0, k, cy, cx) = logits[static_cast<std::size_t>(k)];
      m.cls.at(0, 0, cy, cx) = 5.0;
      const auto dets = decode_boxes<double>({m}, {stride}, size, size, 0.5);
      REQUIRE(dets[0].size() == 1);
      const Box& b = dets[0][0].box;
      CHECK(std::abs(b.cx - gt.cx) <= 1e-5);
      CHECK(std::abs(b.cy - gt.cy) <= 1e-5);
      CHECK(std::abs(b.w - gt.w) <= 1e-5);
      CHECK(std::abs(b.h - gt.h) <= 1e-5);
    }
  }
}

TEST_SUITE("detection loss") {
  TEST_CASE("perfect predictions give a near-zero loss") {
    const std::int64_t size = 64;
    const std::vector<int> strides{8, 16, 32};
    const std::vector<std::vector<GroundTruth>> gt{{{0, Box{0.3, 0.4, 0.2, 0.15}}, {0, Box{0.7, 0.6, 0.6, 0.5}}}};
    std::vector<std::array<std::int64_t, 2>> grid;
    for (int s : strides) grid.push_back({size / s, size / s});
    const auto assigned = assign_targets(gt, strides, grid, size, size);
    REQUIRE(assigned.size() == 2);
    Tape<D> t(false);
    std::vector<LevelRaw<D>> raw;
    std::vector<Tensor<D>> box, cls;
    for (int l = 0; l < 3; ++l) {
      box.emplace_back(Shape{1, 4, grid[l][0], grid[l][1]});
      cls.emplace_back(Shape{1, 1, grid[l][0], grid[l][1]}, -40.0);
    }
    for (const auto& a : assigned) {
      const auto logits = encode_box(gt[0][a.gt].box, a.cell_x, a.cell_y, strides[a.level], size, size);
      for (int k = 0; k < 4; ++k) box[a.level].at(0, k, a.cell_y, a.cell_x) = logits[k];
      cls[a.level].at(0, 0, a.cell_y, a.cell_x) = 40.0;
    }
    for (int l = 0; l < 3; ++l) raw.push_back({t.constant(box[l]), t.constant(cls[l])});
    const auto loss = detection_loss(raw, gt, strides, size, size);
    CHECK(loss.total.value()[0] < 1e-3);
    CHECK(loss.positives == 2);
  }

  TEST_CASE("an image without ships gives a finite positive background loss") {
    Rng rng(26);
    Tape<D> t(false);
    std::vector<LevelRaw<D>> raw;
    for (std::int64_t g : {8, 4, 2}) raw.push_back({t.constant(th::randn(rng, Shape{1, 4, g, g})), t.constant(th::randn(rng, Shape{1, 1, g, g}))});
    const auto loss = detection_loss(raw, {{}}, {8, 16, 32}, 64, 64);
    CHECK(std::isfinite(loss.total.value()[0]));
    CHECK(loss.total.value()[0] > 0);
    CHECK(loss.box == 0.0);
    CHECK(loss.positives == 0);
  }

  TEST_CASE("assignment picks the level by size and the cell by center") {
    const std::vector<std::vector<GroundTruth>> gt{{{0, Box{0.1, 0.1, 0.05, 0.05}},    // 32 px -> stride 8
                                                    {0, Box{0.5, 0.5, 0.18, 0.1}},     // 115 px -> stride 16
                                                    {0, Box{0.5, 0.5, 0.9, 0.9}}}};    // 576 px -> stride 32
    const auto a = assign_targets(gt, {8, 16, 32}, {{{80, 80}}, {{40, 40}}, {{20, 20}}}, 640, 640);
    REQUIRE(a.size() == 3);
    CHECK(a[0].level == 0);
    CHECK(a[0].cell_x == 8);
    CHECK(a[1].level == 1);
    CHECK(a[1].cell_x == 20);
    CHECK(a[2].level == 2);
    CHECK(a[2].cell_y == 10);
  }
}

TEST_SUITE("conv unit accounting") {
  TEST_CASE("pointwise 32 to 64 with bias") {
    ParameterStore<float> s;
    Rng rng(27);
    ConvUnit<float> c("pw", {.cin = 32, .cout = 64, .kernel = 1, .bias = true}, s, rng);
    CHECK(c.analytic_params() == 2112);
    CHECK(s.trainable_count() == 2112);
  }

  TEST_CASE("depthwise 3x3 over 64 channels at 40x40") {
    ParameterStore<float> s;
    Rng rng(28);
    ConvUnit<float> c("dw", {.cin = 64, .cout = 64, .kernel = 3, .groups = 64}, s, rng);
    CHECK(c.analytic_params() == 640 - 64);  // no bias: 576 weights
    CHECK(c.macs(Shape{1, 64, 40, 40}) == 921600);
    ParameterStore<float> s2;
    ConvUnit<float> b("dw", {.cin = 64, .cout = 64, .kernel = 3, .groups = 64, .bias = true}, s2, rng);
    CHECK(b.analytic_params() == 640);
    CHECK(b.out_shape(Shape{1, 64, 40, 40}) == Shape{1, 64, 40, 40});
  }

  TEST_CASE("batch norm adds two trainable vectors and two buffers") {
    ParameterStore<float> s;
    Rng rng(29);
    ConvUnit<float> c("cv", {.cin = 8, .cout = 16, .kernel = 3, .norm = Norm::Batch, .act = Act::SiLU}, s, rng);
    CHECK(s.trainable_count() == 8 * 16 * 9 + 32);
    CHECK(s.size() == 5);
    CHECK_FALSE(s.at("cv.bn.running_mean").trainable);
  }
}
