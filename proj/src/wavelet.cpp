#include "rsnet/wavelet.hpp"

namespace rsnet {

const WaveletFilterBank& WaveletFilterBank::haar() {
  static const WaveletFilterBank bank{{{
      {0.5, 0.5, 0.5, 0.5},     // LL
      {-0.5, -0.5, 0.5, 0.5},   // LH
      {-0.5, 0.5, -0.5, 0.5},   // HL
      {0.5, -0.5, -0.5, 0.5},   // HH
  }}};
  return bank;
}

std::array<std::array<double, 4>, 4> WaveletFilterBank::gram() const {
  std::array<std::array<double, 4>, 4> g{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) g[i][j] += kernels[i][k] * kernels[j][k];
  return g;
}

bool WaveletFilterBank::orthonormal() const {
  const auto g = gram();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (g[i][j] != (i == j ? 1.0 : 0.0)) return false;
  return true;
}

template <typename T>
bool Subbands<T>::padded() const {
  const Shape s = bands.shape();
  return 2 * s.h != source_h || 2 * s.w != source_w;
}

namespace {

// bands (n, 4c, h2, w2) from x (n, c, h, w) where h2 = ceil(h/2).
template <typename T>
void analysis_kernel(const Tensor<T>& x, const WaveletFilterBank& bank, Tensor<T>& bands) {
  const Shape xs = x.shape();
  const Shape bs = bands.shape();
  const std::int64_t c = xs.c;
  std::array<std::array<T, 4>, 4> k{};
  for (int j = 0; j < 4; ++j)
    for (int t = 0; t < 4; ++t) k[j][t] = static_cast<T>(bank.kernels[j][t]);
  for (std::int64_t n = 0; n < xs.n; ++n) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* src = x.plane(n, ch);
      T* out[4];
      for (int j = 0; j < 4; ++j) out[j] = bands.plane(n, j * c + ch);
      for (std::int64_t oy = 0; oy < bs.h; ++oy) {
        const std::int64_t y0 = 2 * oy, y1 = 2 * oy + 1;
        for (std::int64_t ox = 0; ox < bs.w; ++ox) {
          const std::int64_t x0 = 2 * ox, x1 = 2 * ox + 1;
          const T a = src[y0 * xs.w + x0];
          const T b = x1 < xs.w ? src[y0 * xs.w + x1] : T(0);
          const T cc = y1 < xs.h ? src[y1 * xs.w + x0] : T(0);
          const T d = (y1 < xs.h && x1 < xs.w) ? src[y1 * xs.w + x1] : T(0);
          const std::int64_t o = oy * bs.w + ox;
          for (int j = 0; j < 4; ++j) out[j][o] += k[j][0] * a + k[j][1] * b + k[j][2] * cc + k[j][3] * d;
        }
      }
    }
  }
}

// x (n, c, h, w) += synthesis of bands (n, 4c, h2, w2), cropped to x extent.
template <typename T>
void synthesis_kernel(const Tensor<T>& bands, const WaveletFilterBank& bank, Tensor<T>& x) {
  const Shape xs = x.shape();
  const Shape bs = bands.shape();
  const std::int64_t c = xs.c;
  std::array<std::array<T, 4>, 4> k{};
  for (int j = 0; j < 4; ++j)
    for (int t = 0; t < 4; ++t) k[j][t] = static_cast<T>(bank.kernels[j][t]);
  for (std::int64_t n = 0; n < xs.n; ++n) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T* dst = x.plane(n, ch);
      const T* in[4];
      for (int j = 0; j < 4; ++j) in[j] = bands.plane(n, j * c + ch);
      for (std::int64_t oy = 0; oy < bs.h; ++oy) {
        const std::int64_t y0 = 2 * oy, y1 = 2 * oy + 1;
        for (std::int64_t ox = 0; ox < bs.w; ++ox) {
          const std::int64_t x0 = 2 * ox, x1 = 2 * ox + 1;
          const std::int64_t o = oy * bs.w + ox;
          T cell[4] = {0, 0, 0, 0};
          for (int j = 0; j < 4; ++j) {
            const T s = in[j][o];
            for (int t = 0; t < 4; ++t) cell[t] += s * k[j][t];
          }
          dst[y0 * xs.w + x0] += cell[0];
          if (x1 < xs.w) dst[y0 * xs.w + x1] += cell[1];
          if (y1 < xs.h) dst[y1 * xs.w + x0] += cell[2];
          if (y1 < xs.h && x1 < xs.w) dst[y1 * xs.w + x1] += cell[3];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Subbands<T> haar_analysis(Var<T> x, const WaveletFilterBank& bank) {
  const Shape s = x.shape();
  if (s.h <= 0 || s.w <= 0) throw ShapeError("haar_analysis: empty spatial dims in " + s.str());
  const Shape bs{s.n, 4 * s.c, (s.h + 1) / 2, (s.w + 1) / 2};
  Tensor<T> bands(bs);
  analysis_kernel(x.value(), bank, bands);
  x.tape->add_macs(bs.numel() * 4);
  Var<T> out = x.tape->record("haar_analysis", std::move(bands), {x}, [x, bank](Tape<T>& t, const Tensor<T>& gout) {
    if (Tensor<T>* gx = t.grad_buffer(x)) synthesis_kernel(gout, bank, *gx);
  });
  return Subbands<T>{out, s.h, s.w};
}

template <typename T>
Var<T> haar_synthesis(Var<T> bands, const WaveletFilterBank& bank,
                      std::optional<std::pair<std::int64_t, std::int64_t>> crop) {
  const Shape bs = bands.shape();
  if (bs.c % 4 != 0) throw ShapeError("haar_synthesis: channels " + std::to_string(bs.c) + " not divisible by 4");
  std::int64_t h = 2 * bs.h, w = 2 * bs.w;
  if (crop) {
    if (crop->first > h || crop->second > w || crop->first < h - 1 || crop->second < w - 1) {
      throw ShapeError("haar_synthesis: crop target incompatible with " + bs.str());
    }
    h = crop->first;
    w = crop->second;
  }
  Tensor<T> out(Shape{bs.n, bs.c / 4, h, w});
  synthesis_kernel(bands.value(), bank, out);
  bands.tape->add_macs(bs.numel() * 4);
  return bands.tape->record("haar_synthesis", std::move(out), {bands},
                            [bands, bank](Tape<T>& t, const Tensor<T>& gout) {
                              if (Tensor<T>* gb = t.grad_buffer(bands)) analysis_kernel(gout, bank, *gb);
                            });
}

template <typename T>
Var<T> wavelet_pool(Var<T> x, Var<T> pointwise, std::optional<Var<T>> bias, WaveletAggregate aggregate) {
  const Shape s = x.shape();
  const Shape ws = pointwise.shape();
  const std::int64_t expect_in = aggregate == WaveletAggregate::Stack ? 4 * s.c : s.c;
  if (ws.c != expect_in || ws.h != 1 || ws.w != 1) {
    throw ShapeError("wavelet_pool: pointwise weight " + ws.str() + " expected (c_out, " + std::to_string(expect_in) +
                     ", 1, 1)");
  }
  Var<T> bands = haar_analysis(x).bands;
  if (aggregate == WaveletAggregate::Sum) {
    Var<T> acc = ops::slice_channels(bands, 0, s.c);
    for (int j = 1; j < 4; ++j) acc = ops::add(acc, ops::slice_channels(bands, j * s.c, s.c));
    bands = acc;
  }
  return ops::conv2d(bands, pointwise, bias, ops::ConvOptions{});
}

template <typename T>
Var<T> wavelet_unpool(Var<T> x) {
  return haar_synthesis(x);
}

#define RSNET_INSTANTIATE_WAVELET(T)                                                                       \
  template struct Subbands<T>;                                                                             \
  template Subbands<T> haar_analysis(Var<T>, const WaveletFilterBank&);                                    \
  template Var<T> haar_synthesis(Var<T>, const WaveletFilterBank&,                                         \
                                 std::optional<std::pair<std::int64_t, std::int64_t>>);                    \
  template Var<T> wavelet_pool(Var<T>, Var<T>, std::optional<Var<T>>, WaveletAggregate);                   \
  template Var<T> wavelet_unpool(Var<T>);

RSNET_INSTANTIATE_WAVELET(float)
RSNET_INSTANTIATE_WAVELET(double)

}  // namespace rsnet
