#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "rsnet/check.hpp"
#include "rsnet/ops.hpp"
#include "rsnet/optim.hpp"

using namespace rsnet;
using D = double;

namespace {

Tensor<D> run_conv(const Tensor<D>& x, const Tensor<D>& w, const Tensor<D>* b, ops::ConvOptions o) {
  Tape<D> t(false);
  std::optional<Var<D>> bias;
  if (b) bias = t.constant(*b);
  return ops::conv2d(t.constant(x), t.constant(w), bias, o).value();
}

Tensor<D> run_convt(const Tensor<D>& x, const Tensor<D>& w, int stride) {
  Tape<D> t(false);
  return ops::conv_transpose2d(t.constant(x), t.constant(w), stride).value();
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and storage") {
    Tensor<float> t(Shape{2, 3, 4, 5}, 1.5f);
    CHECK(t.numel() == 120);
    CHECK(t.data().size() == 120);
    t.at(1, 2, 3, 4) = 7.0f;
    CHECK(t[119] == 7.0f);
    CHECK_THROWS_AS(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), Error);
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("2x2 kernel of halves on ones gives 2") {
    const Tensor<D> x(Shape{1, 1, 2, 2}, 1.0), w(Shape{1, 1, 2, 2}, 0.5);
    const auto y = run_conv(x, w, nullptr, {2, 0, 1, 1});
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 2.0);
  }

  TEST_CASE("1x1 identity kernel") {
    Rng rng(1);
    const auto x = th::randn(rng, Shape{2, 1, 3, 4});
    const Tensor<D> w(Shape{1, 1, 1, 1}, 1.0), b(Shape{1, 1, 1, 1}, 0.0);
    CHECK(th::bit_equal(run_conv(x, w, &b, {}), x));
  }

  TEST_CASE("dilated 3x3 matches the loop oracle") {
    Rng rng(2);
    const auto x = th::randn(rng, Shape{2, 3, 5, 5});
    const auto w = th::randn(rng, Shape{4, 3, 3, 3});
    const auto b = th::randn(rng, Shape{1, 4, 1, 1});
    for (int pad : {0, 2}) {
      const auto y = run_conv(x, w, &b, {1, pad, 2, 1});
      const auto ref = oracle::conv2d(x, w, &b, 1, pad, 2, 1);
      REQUIRE(y.shape() == ref.shape());
      CHECK(max_rel_diff(y, ref) <= 1e-6);
    }
  }

  TEST_CASE("random stride, pad, dilation and groups match the loop oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 40; ++trial) {
      const int groups = static_cast<int>(rng.uniform_int(1, 3));
      const std::int64_t cin = groups * rng.uniform_int(1, 2), cout = groups * rng.uniform_int(1, 3);
      const int k = static_cast<int>(rng.uniform_int(1, 3)), d = static_cast<int>(rng.uniform_int(1, 2));
      const ops::ConvOptions o{static_cast<int>(rng.uniform_int(1, 3)), static_cast<int>(rng.uniform_int(0, 2)), d,
                               groups};
      const std::int64_t ext = (k - 1) * d + 1;
      const auto x = th::randn(rng, Shape{rng.uniform_int(1, 2), cin, rng.uniform_int(ext, 9), rng.uniform_int(ext, 9)});
      const auto w = th::randn(rng, Shape{cout, cin / groups, k, k});
      const auto y = run_conv(x, w, nullptr, o);
      const auto ref = oracle::conv2d(x, w, nullptr, o.stride, o.pad, o.dilation, o.groups);
      REQUIRE(y.shape() == ref.shape());
      CHECK(max_rel_diff(y, ref) <= 1e-12);
      CHECK(y.shape().h == ops::conv_out_size(x.shape().h, k, o));
    }
  }

  TEST_CASE("linear in the input") {
    Rng rng(4);
    const auto x = th::randn(rng, Shape{1, 2, 6, 6}), y = th::randn(rng, Shape{1, 2, 6, 6});
    const auto w = th::randn(rng, Shape{3, 2, 3, 3});
    const ops::ConvOptions o{2, 1, 1, 1};
    Tensor<D> mix = x;
    for (std::int64_t i = 0; i < mix.numel(); ++i) mix[i] = 0.7 * x[i] - 1.3 * y[i];
    Tensor<D> expect = run_conv(x, w, nullptr, o);
    const auto cy = run_conv(y, w, nullptr, o);
    for (std::int64_t i = 0; i < expect.numel(); ++i) expect[i] = 0.7 * expect[i] - 1.3 * cy[i];
    CHECK(max_rel_diff(run_conv(mix, w, nullptr, o), expect) <= 1e-6);
  }

  TEST_CASE("invalid arguments") {
    const Tensor<D> x(Shape{1, 4, 5, 5});
    CHECK_THROWS_AS(run_conv(x, Tensor<D>(Shape{2, 3, 3, 3}), nullptr, {}), Error);    // channel mismatch
    CHECK_THROWS_AS(run_conv(x, Tensor<D>(Shape{3, 4, 3, 3}), nullptr, {1, 0, 1, 3}), Error);  // groups
    CHECK_THROWS_AS(run_conv(x, Tensor<D>(Shape{2, 4, 3, 3}), nullptr, {0, 0, 1, 1}), Error);  // stride
    CHECK_THROWS_AS(run_conv(x, Tensor<D>(Shape{2, 4, 7, 7}), nullptr, {}), Error);            // kernel > input
  }
}

TEST_SUITE("conv_transpose2d") {
  TEST_CASE("kernel stamping") {
    const auto y = run_convt(Tensor<D>(Shape{1, 1, 1, 1}, 1.0), Tensor<D>(Shape{1, 1, 2, 2}, 0.5), 2);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    for (std::int64_t i = 0; i < 4; ++i) CHECK(y[i] == 0.5);
  }

  TEST_CASE("adjoint of conv2d") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const int stride = static_cast<int>(rng.uniform_int(1, 3)), k = static_cast<int>(rng.uniform_int(1, 3));
      const auto x = th::randn(rng, Shape{1, 2, 4, 4});
      const auto w = th::randn(rng, Shape{3, 2, k, k});
      const auto cx = run_conv(x, w, nullptr, {stride, 0, 1, 1});
      const auto y = th::randn(rng, cx.shape());
      // Transpose weights are (C_in, C_out, k, k) of the forward conv, i.e. w read as (3 -> 2).
      auto ty = run_convt(y, w, stride);
      // Output extent (H-1)*s+k may exceed the input when the forward conv dropped a border.
      Tensor<D> cropped(x.shape());
      for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t i = 0; i < 4; ++i)
          for (std::int64_t j = 0; j < 4; ++j) cropped.at(0, c, i, j) = i < ty.shape().h && j < ty.shape().w ? ty.at(0, c, i, j) : 0.0;
      const double lhs = oracle::inner(cx, y), rhs = oracle::inner(x, cropped);
      CHECK(std::abs(lhs - rhs) <= 1e-6 * std::max(1.0, std::abs(lhs)));
    }
  }

  TEST_CASE("zero input gives zero output") {
    Rng rng(6);
    const auto y = run_convt(Tensor<D>(Shape{1, 2, 3, 3}), th::randn(rng, Shape{2, 3, 2, 2}), 2);
    CHECK(y.shape() == Shape{1, 3, 6, 6});
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
  }
}

TEST_SUITE("normalization") {
  TEST_CASE("batch norm eval with unit statistics is the identity") {
    Rng rng(7);
    const auto x = th::randn(rng, Shape{2, 3, 4, 4});
    Tensor<D> mean(Shape{1, 3, 1, 1}, 0.0), var(Shape{1, 3, 1, 1}, 1.0);
    Tape<D> t(false);
    const auto y = ops::batch_norm(t.constant(x), t.constant(Tensor<D>(Shape{1, 3, 1, 1}, 1.0)),
                                   t.constant(Tensor<D>(Shape{1, 3, 1, 1}, 0.0)), mean, var, Mode::Eval, {0.1, 0.0})
                       .value();
    CHECK(max_rel_diff(y, x) <= 1e-15);
  }

  TEST_CASE("batch norm train normalizes each channel and updates running stats") {
    Rng rng(8);
    auto x = th::randn(rng, Shape{3, 2, 5, 5}, 3.0);
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] += 4.0;
    Tensor<D> mean(Shape{1, 2, 1, 1}, 0.0), var(Shape{1, 2, 1, 1}, 1.0);
    Tape<D> t(false);
    const auto y = ops::batch_norm(t.constant(x), t.constant(Tensor<D>(Shape{1, 2, 1, 1}, 1.0)),
                                   t.constant(Tensor<D>(Shape{1, 2, 1, 1}, 0.0)), mean, var, Mode::Train)
                       .value();
    for (std::int64_t c = 0; c < 2; ++c) {
      double s = 0, ss = 0, xs = 0;
      const double n = 3 * 25;
      for (std::int64_t b = 0; b < 3; ++b)
        for (std::int64_t i = 0; i < 25; ++i) {
          s += y.plane(b, c)[i];
          xs += x.plane(b, c)[i];
        }
      for (std::int64_t b = 0; b < 3; ++b)
        for (std::int64_t i = 0; i < 25; ++i) ss += std::pow(y.plane(b, c)[i] - s / n, 2);
      CHECK(std::abs(s / n) <= 1e-5);
      CHECK(std::abs(ss / n - 1.0) <= 1e-4);
      CHECK(mean[c] == doctest::Approx(0.1 * xs / n).epsilon(1e-12));
    }
  }

  TEST_CASE("batch norm on a constant channel stays finite") {
    Tensor<D> mean(Shape{1, 1, 1, 1}, 0.0), var(Shape{1, 1, 1, 1}, 1.0);
    Tape<D> t(false);
    const auto y = ops::batch_norm(t.constant(Tensor<D>(Shape{2, 1, 3, 3}, 5.0)),
                                   t.constant(Tensor<D>(Shape{1, 1, 1, 1}, 1.0)),
                                   t.constant(Tensor<D>(Shape{1, 1, 1, 1}, 0.25)), mean, var, Mode::Train)
                       .value();
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.25);
  }

  TEST_CASE("batch norm in eval mode is deterministic") {
    Rng rng(9);
    const auto x = th::randn(rng, Shape{2, 2, 3, 3});
    Tensor<D> mean = th::randn(rng, Shape{1, 2, 1, 1}), var(Shape{1, 2, 1, 1}, 2.0);
    const auto once = [&] {
      Tape<D> t(false);
      return ops::batch_norm(t.constant(x), t.constant(Tensor<D>(Shape{1, 2, 1, 1}, 1.5)),
                             t.constant(Tensor<D>(Shape{1, 2, 1, 1}, 0.1)), mean, var, Mode::Eval)
          .value();
    };
    const auto a = once(), b = once();
    CHECK(th::bit_equal(a, b));
  }

  TEST_CASE("group norm with one channel per group and 1x1 maps returns beta") {
    Rng rng(10);
    const auto x = th::randn(rng, Shape{2, 4, 1, 1});
    const auto beta = th::randn(rng, Shape{1, 4, 1, 1});
    Tape<D> t(false);
    const auto y = ops::group_norm(t.constant(x), 4, t.constant(th::randn(rng, Shape{1, 4, 1, 1})), t.constant(beta)).value();
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t c = 0; c < 4; ++c) CHECK(y.at(n, c, 0, 0) == beta[c]);
  }

  TEST_CASE("group norm depends only on its own sample") {
    Rng rng(11);
    const auto a = th::randn(rng, Shape{1, 4, 3, 3}), b = th::randn(rng, Shape{1, 4, 3, 3});
    const auto gamma = th::randn(rng, Shape{1, 4, 1, 1}), beta = th::randn(rng, Shape{1, 4, 1, 1});
    Tape<D> t(false);
    const auto single = ops::group_norm(t.constant(a), 2, t.constant(gamma), t.constant(beta)).value();
    // Batch of (a, b, a): the first and last slices equal the single-sample output.
    Tensor<D> batch(Shape{3, 4, 3, 3});
    std::copy(a.data().begin(), a.data().end(), batch.data().begin());
    std::copy(b.data().begin(), b.data().end(), batch.data().begin() + 36);
    std::copy(a.data().begin(), a.data().end(), batch.data().begin() + 72);
    const auto y = ops::group_norm(t.constant(batch), 2, t.constant(gamma), t.constant(beta)).value();
    for (std::int64_t i = 0; i < 36; ++i) {
      CHECK(y[i] == single[i]);
      CHECK(y[72 + i] == single[i]);
    }
    CHECK_THROWS_AS(ops::group_norm(t.constant(a), 3, t.constant(gamma), t.constant(beta)), Error);
  }
}

TEST_SUITE("elementwise") {
  TEST_CASE("relu6 clamp") {
    Tape<D> t(false);
    const auto y = ops::relu6(t.constant(Tensor<D>(Shape{1, 1, 1, 5}, {-1.0, 3.0, 9.0, 0.5, 5.9}))).value();
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 3.0);
    CHECK(y[2] == 6.0);
    CHECK(y[3] == 0.5);
    CHECK(y[4] == 5.9);
  }

  TEST_CASE("relu6 subgradient is zero at the kinks") {
    Tape<D> t;
    const auto x = t.input(Tensor<D>(Shape{1, 1, 1, 4}, {0.0, 6.0, 2.0, 7.0}));
    t.backward(ops::sum(ops::relu6(x)));
    const auto& g = *t.grad(x);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
    CHECK(g[2] == 1.0);
    CHECK(g[3] == 0.0);
  }

  TEST_CASE("dropout") {
    Rng rng(12);
    const Tensor<D> x(Shape{4, 8, 16, 16}, 1.0);
    Tape<D> t(false);
    const auto v = t.constant(x);
    CHECK(th::bit_equal(ops::dropout(v, 0.0, Mode::Train, rng).value(), x));
    CHECK(th::bit_equal(ops::dropout(v, 0.5, Mode::Eval, rng).value(), x));
    const auto y = ops::dropout(v, 0.25, Mode::Train, rng).value();
    std::int64_t zeros = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      if (y[i] == 0.0) {
        ++zeros;
      } else {
        CHECK(y[i] == doctest::Approx(1.0 / 0.75));
      }
    }
    CHECK(double(zeros) / double(y.numel()) == doctest::Approx(0.25).epsilon(0.1));
    CHECK_THROWS_AS(ops::dropout(v, 1.0, Mode::Train, rng), Error);
  }

  TEST_CASE("concat then slice recovers the parts") {
    Rng rng(13);
    const auto a = th::randn(rng, Shape{2, 2, 3, 3}), b = th::randn(rng, Shape{2, 3, 3, 3});
    Tape<D> t(false);
    const auto c = ops::concat_channels<D>({t.constant(a), t.constant(b)});
    CHECK(c.shape() == Shape{2, 5, 3, 3});
    CHECK(th::bit_equal(ops::slice_channels(c, 0, 2).value(), a));
    CHECK(th::bit_equal(ops::slice_channels(c, 2, 3).value(), b));
    CHECK_THROWS_AS(ops::concat_channels<D>({t.constant(a), t.constant(Tensor<D>(Shape{2, 1, 4, 3}))}), Error);
    CHECK_THROWS_AS(ops::add(t.constant(a), t.constant(b)), Error);
  }

  TEST_CASE("global average pool of constant maps") {
    Tensor<D> x(Shape{1, 2, 3, 5});
    for (std::int64_t i = 0; i < 15; ++i) {
      x[i] = 2.5;
      x[15 + i] = -1.0;
    }
    Tape<D> t(false);
    const auto y = ops::global_avg_pool(t.constant(x)).value();
    CHECK(y[0] == doctest::Approx(2.5));
    CHECK(y[1] == doctest::Approx(-1.0));
  }

  TEST_CASE("non-finite output raises NumericError naming the scope") {
    Tape<float> t(false);
    ScopeGuard<float> g(t, "backbone.stage1.block0");
    const auto big = t.constant(Tensor<float>(Shape{1, 1, 1, 1}, 1e30f));
    try {
      ops::mul(big, big);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("backbone.stage1.block0") != std::string::npos);
    }
  }
}

TEST_SUITE("backward") {
  TEST_CASE("linear form gives the constant as gradient") {
    Rng rng(14);
    ParameterStore<D> store;
    auto& w = store.create("w", th::randn(rng, Shape{1, 2, 3, 3}));
    const auto x = th::randn(rng, Shape{1, 2, 3, 3});
    Tape<D> t;
    t.backward(ops::sum(ops::mul(t.param(w), t.constant(x))));
    CHECK(th::bit_equal(w.grad, x));
  }

  TEST_CASE("unreachable parameters keep a zero gradient") {
    ParameterStore<D> store;
    auto& used = store.create("used", Tensor<D>(Shape{1, 1, 1, 1}, 2.0));
    auto& unused = store.create("unused", Tensor<D>(Shape{1, 1, 1, 1}, 3.0));
    Tape<D> t;
    t.param(unused);
    t.backward(ops::sum(t.param(used)));
    CHECK(used.grad[0] == 1.0);
    CHECK(unused.grad[0] == 0.0);
  }

  TEST_CASE("gradients accumulate across tapes until zero_grads") {
    ParameterStore<D> store;
    auto& w = store.create("w", Tensor<D>(Shape{1, 1, 1, 1}, 2.0));
    for (int i = 0; i < 2; ++i) {
      Tape<D> t;
      t.backward(ops::mul(t.param(w), t.param(w)));
    }
    CHECK(w.grad[0] == 8.0);
    store.zero_grads();
    CHECK(w.grad[0] == 0.0);
  }

  TEST_CASE("a tape can run backward once; the loss must be scalar") {
    ParameterStore<D> store;
    auto& w = store.create("w", Tensor<D>(Shape{1, 1, 2, 2}, 1.0));
    Tape<D> t;
    const auto loss = ops::sum(t.param(w));
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), UsageError);
    Tape<D> t2;
    CHECK_THROWS_AS(t2.backward(t2.param(w)), Error);
  }

  TEST_CASE("independent finite differences through conv, batch norm and the product") {
    // f(x) = sum(w2 * relu6(bn(conv(x))) * conv(x)), written against the
    // oracle's central difference rather than the library gradient checker.
    Rng rng(15);
    const auto w = th::randn(rng, Shape{3, 2, 3, 3}, 0.5);
    const auto x0 = th::randn(rng, Shape{2, 2, 5, 5});
    const auto weights = th::randn(rng, Shape{2, 3, 5, 5});
    const Tensor<D> gamma(Shape{1, 3, 1, 1}, 1.2), beta(Shape{1, 3, 1, 1}, 2.0);
    const auto build = [&](Tape<D>& t, Var<D> x) {
      Tensor<D> m(Shape{1, 3, 1, 1}), v(Shape{1, 3, 1, 1}, 1.0);
      const auto c = ops::conv2d<D>(x, t.constant(w), std::nullopt, {1, 1, 1, 1});
      const auto n = ops::batch_norm(c, t.constant(gamma), t.constant(beta), m, v, Mode::Train);
      return ops::weighted_sum(ops::mul(ops::relu6(n), c), weights);
    };
    const std::function<double(const Tensor<D>&)> f = [&](const Tensor<D>& x) {
      Tape<D> t(false);
      return build(t, t.constant(x)).value()[0];
    };
    Tape<D> t;
    const auto x = t.input(x0);
    t.backward(build(t, x));
    const auto& g = *t.grad(x);
    double worst = 0;
    for (std::int64_t k = 0; k < x0.numel(); ++k) {
      const double n = oracle::central_difference(f, x0, k);
      worst = std::max(worst, std::abs(g[k] - n) / std::max({std::abs(g[k]), std::abs(n), 1e-5}));
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("every op and block passes the finite-difference suite on 5 shapes") {
    for (const auto& c : gradient_cases()) {
      Rng rng = Rng(2024).split(c.name);
      for (int s = 0; s < 5; ++s) {
        const GradCheckResult r = c.run(rng);
        INFO(c.name << " shape " << s << " worst " << r.worst);
        CHECK(r.max_rel_error < 1e-4);
        CHECK(r.checked > 0);
      }
    }
  }
}

TEST_SUITE("adamw") {
  TEST_CASE("zero gradient and zero decay leaves the parameter") {
    ParameterStore<D> store;
    auto& p = store.create("p", Tensor<D>(Shape{1, 1, 1, 3}, 0.7));
    AdamW<D> opt(store, {0.002, 0.937, 0.999, 1e-8, 0.0});
    opt.step();
    for (std::int64_t i = 0; i < 3; ++i) CHECK(p.value[i] == 0.7);
    CHECK(opt.step_count() == 1);
  }

  TEST_CASE("first step moves by lr after bias correction") {
    ParameterStore<D> store;
    auto& p = store.create("p", Tensor<D>(Shape{1, 1, 1, 1}, 1.0));
    p.grad[0] = 1.0;
    AdamW<D> opt(store, {0.002, 0.937, 0.999, 1e-8, 0.0});
    opt.step();
    // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps).
    const double expect = 1.0 - 0.002 / (1.0 + 1e-8);
    CHECK(std::abs((1.0 - p.value[0]) / 0.002 - 1.0) <= 1e-6);
    CHECK(p.value[0] == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("decoupled weight decay") {
    ParameterStore<D> store;
    auto& p = store.create("p", Tensor<D>(Shape{1, 1, 1, 1}, 3.0));
    auto& frozen = store.create("buffer", Tensor<D>(Shape{1, 1, 1, 1}, 3.0), false);
    AdamW<D> opt(store, {0.002, 0.937, 0.999, 1e-8, 5e-4});
    opt.step();
    CHECK(p.value[0] == doctest::Approx(3.0 * (1 - 0.002 * 5e-4)).epsilon(1e-15));
    CHECK(frozen.value[0] == 3.0);
    opt.step();
    CHECK(opt.step_count() == 2);
  }

  TEST_CASE("non-positive learning rate is rejected") {
    ParameterStore<D> store;
    store.create("p", Tensor<D>(Shape{1, 1, 1, 1}));
    CHECK_THROWS_AS(AdamW<D>(store, {0.0}), UsageError);
    AdamW<D> opt(store, {});
    CHECK_THROWS_AS(opt.set_lr(-1), UsageError);
  }
}
