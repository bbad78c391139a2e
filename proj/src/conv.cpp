#include <algorithm>
#include <vector>

#include "rsnet/ops.hpp"

namespace rsnet::ops {

namespace {

struct Geometry {
  std::int64_t n, cin, h, w;
  std::int64_t cout, kh, kw;
  std::int64_t ho, wo;
  int stride, pad, dil, groups;

  std::int64_t cin_g() const { return cin / groups; }
  std::int64_t cout_g() const { return cout / groups; }
  std::int64_t patch() const { return cin_g() * kh * kw; }
  std::int64_t pixels() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  bool depthwise() const { return groups == cin && cout == cin && groups > 1; }
  std::int64_t macs() const { return n * cout * patch() * pixels(); }
};

// Valid output range [lo, hi) along one axis for kernel tap offset `off`.
inline void tap_range(std::int64_t in, std::int64_t out, int stride, std::int64_t off, std::int64_t& lo,
                      std::int64_t& hi) {
  // need 0 <= o * stride + off < in
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  std::int64_t last = in - 1 - off;
  hi = last < 0 ? 0 : std::min<std::int64_t>(out, last / stride + 1);
  if (hi < lo) hi = lo;
}

template <typename T>
void im2col(const T* img, const Geometry& g, T* col) {
  const std::int64_t plane = g.h * g.w;
  for (std::int64_t c = 0; c < g.cin_g(); ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        T* dst = col + ((c * g.kh + ky) * g.kw + kx) * g.pixels();
        const T* src = img + c * plane;
        const std::int64_t offy = ky * g.dil - g.pad;
        const std::int64_t offx = kx * g.dil - g.pad;
        std::int64_t xlo, xhi;
        tap_range(g.w, g.wo, g.stride, offx, xlo, xhi);
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          T* row = dst + oy * g.wo;
          const std::int64_t iy = oy * g.stride + offy;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.wo, T(0));
            continue;
          }
          const T* srow = src + iy * g.w + offx;
          std::fill(row, row + xlo, T(0));
          if (g.stride == 1) {
            std::copy(srow + xlo, srow + xhi, row + xlo);
          } else {
            for (std::int64_t ox = xlo; ox < xhi; ++ox) row[ox] = srow[ox * g.stride];
          }
          std::fill(row + xhi, row + g.wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const Geometry& g, T* img) {
  const std::int64_t plane = g.h * g.w;
  for (std::int64_t c = 0; c < g.cin_g(); ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const T* src = col + ((c * g.kh + ky) * g.kw + kx) * g.pixels();
        T* dst = img + c * plane;
        const std::int64_t offy = ky * g.dil - g.pad;
        const std::int64_t offx = kx * g.dil - g.pad;
        std::int64_t xlo, xhi;
        tap_range(g.w, g.wo, g.stride, offx, xlo, xhi);
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride + offy;
          if (iy < 0 || iy >= g.h) continue;
          const T* row = src + oy * g.wo;
          T* drow = dst + iy * g.w + offx;
          if (g.stride == 1) {
            for (std::int64_t ox = xlo; ox < xhi; ++ox) drow[ox] += row[ox];
          } else {
            for (std::int64_t ox = xlo; ox < xhi; ++ox) drow[ox * g.stride] += row[ox];
          }
        }
      }
    }
  }
}

constexpr std::int64_t kTileN = 512;

// out[M x N] += a[M x K] * b[K x N], all row-major with leading dims K, N.
template <typename T>
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* out) {
  for (std::int64_t n0 = 0; n0 < n; n0 += kTileN) {
    const std::int64_t nn = std::min(kTileN, n - n0);
    std::int64_t i = 0;
    for (; i + 4 <= m; i += 4) {
      T* o0 = out + (i + 0) * n + n0;
      T* o1 = out + (i + 1) * n + n0;
      T* o2 = out + (i + 2) * n + n0;
      T* o3 = out + (i + 3) * n + n0;
      for (std::int64_t p = 0; p < k; ++p) {
        const T a0 = a[(i + 0) * k + p], a1 = a[(i + 1) * k + p];
        const T a2 = a[(i + 2) * k + p], a3 = a[(i + 3) * k + p];
        const T* row = b + p * n + n0;
#pragma omp simd
        for (std::int64_t j = 0; j < nn; ++j) {
          const T v = row[j];
          o0[j] += a0 * v;
          o1[j] += a1 * v;
          o2[j] += a2 * v;
          o3[j] += a3 * v;
        }
      }
    }
    for (; i < m; ++i) {
      T* o = out + i * n + n0;
      for (std::int64_t p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        const T* row = b + p * n + n0;
#pragma omp simd
        for (std::int64_t j = 0; j < nn; ++j) o[j] += av * row[j];
      }
    }
  }
}

// out[K x N] += a[M x K]^T * b[M x N].
template <typename T>
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* out) {
  for (std::int64_t n0 = 0; n0 < n; n0 += kTileN) {
    const std::int64_t nn = std::min(kTileN, n - n0);
    for (std::int64_t p = 0; p < k; ++p) {
      T* o = out + p * n + n0;
      std::int64_t i = 0;
      for (; i + 4 <= m; i += 4) {
        const T a0 = a[(i + 0) * k + p], a1 = a[(i + 1) * k + p];
        const T a2 = a[(i + 2) * k + p], a3 = a[(i + 3) * k + p];
        const T* b0 = b + (i + 0) * n + n0;
        const T* b1 = b + (i + 1) * n + n0;
        const T* b2 = b + (i + 2) * n + n0;
        const T* b3 = b + (i + 3) * n + n0;
#pragma omp simd
        for (std::int64_t j = 0; j < nn; ++j) o[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
      for (; i < m; ++i) {
        const T av = a[i * k + p];
        const T* bi = b + i * n + n0;
#pragma omp simd
        for (std::int64_t j = 0; j < nn; ++j) o[j] += av * bi[j];
      }
    }
  }
}

// out[M x K] += a[M x N] * b[K x N]^T.
template <typename T>
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* out) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const T* bp = b + p * n;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (std::int64_t j = 0; j < n; ++j) s += ai[j] * bp[j];
      out[i * k + p] += s;
    }
  }
}

template <typename T>
void depthwise_forward(const T* x, const T* w, const Geometry& g, T* out) {
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (std::int64_t c = 0; c < g.cin; ++c) {
      const T* src = x + (b * g.cin + c) * g.h * g.w;
      T* dst = out + (b * g.cout + c) * g.pixels();
      const T* wk = w + c * g.kh * g.kw;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        const std::int64_t offy = ky * g.dil - g.pad;
        std::int64_t ylo, yhi;
        tap_range(g.h, g.ho, g.stride, offy, ylo, yhi);
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const T wv = wk[ky * g.kw + kx];
          const std::int64_t offx = kx * g.dil - g.pad;
          std::int64_t xlo, xhi;
          tap_range(g.w, g.wo, g.stride, offx, xlo, xhi);
          for (std::int64_t oy = ylo; oy < yhi; ++oy) {
            const T* srow = src + (oy * g.stride + offy) * g.w + offx;
            T* drow = dst + oy * g.wo;
            if (g.stride == 1) {
#pragma omp simd
              for (std::int64_t ox = xlo; ox < xhi; ++ox) drow[ox] += wv * srow[ox];
            } else {
              for (std::int64_t ox = xlo; ox < xhi; ++ox) drow[ox] += wv * srow[ox * g.stride];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* dout, const Geometry& g, T* dx, T* dw) {
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (std::int64_t c = 0; c < g.cin; ++c) {
      const T* src = x + (b * g.cin + c) * g.h * g.w;
      const T* go = dout + (b * g.cout + c) * g.pixels();
      T* gx = dx ? dx + (b * g.cin + c) * g.h * g.w : nullptr;
      const T* wk = w + c * g.kh * g.kw;
      T* gw = dw ? dw + c * g.kh * g.kw : nullptr;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        const std::int64_t offy = ky * g.dil - g.pad;
        std::int64_t ylo, yhi;
        tap_range(g.h, g.ho, g.stride, offy, ylo, yhi);
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const T wv = wk[ky * g.kw + kx];
          const std::int64_t offx = kx * g.dil - g.pad;
          std::int64_t xlo, xhi;
          tap_range(g.w, g.wo, g.stride, offx, xlo, xhi);
          T acc = 0;
          for (std::int64_t oy = ylo; oy < yhi; ++oy) {
            const std::int64_t row = (oy * g.stride + offy) * g.w + offx;
            const T* grow = go + oy * g.wo;
            if (g.stride == 1) {
              if (gw) {
                const T* srow = src + row;
#pragma omp simd reduction(+ : acc)
                for (std::int64_t ox = xlo; ox < xhi; ++ox) acc += grow[ox] * srow[ox];
              }
              if (gx) {
                T* xrow = gx + row;
#pragma omp simd
                for (std::int64_t ox = xlo; ox < xhi; ++ox) xrow[ox] += wv * grow[ox];
              }
            } else {
              for (std::int64_t ox = xlo; ox < xhi; ++ox) {
                if (gw) acc += grow[ox] * src[row + ox * g.stride];
                if (gx) gx[row + ox * g.stride] += wv * grow[ox];
              }
            }
          }
          if (gw) gw[ky * g.kw + kx] += acc;
        }
      }
    }
  }
}

// out (n, cout, ho, wo) = conv(x, w); out must be zero or hold the bias.
template <typename T>
void conv_forward_kernel(const T* x, const T* w, const Geometry& g, T* out) {
  if (g.depthwise()) {
    depthwise_forward(x, w, g, out);
    return;
  }
  const std::int64_t plane_in = g.h * g.w;
  std::vector<T> col;
  if (!g.pointwise()) col.resize(static_cast<std::size_t>(g.patch() * g.pixels()));
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const T* img = x + (b * g.cin + grp * g.cin_g()) * plane_in;
      const T* cols = img;
      if (!g.pointwise()) {
        im2col(img, g, col.data());
        cols = col.data();
      }
      gemm_nn(g.cout_g(), g.pixels(), g.patch(), w + grp * g.cout_g() * g.patch(), cols,
              out + (b * g.cout + grp * g.cout_g()) * g.pixels());
    }
  }
}

// dx += conv^T(dout, w)
template <typename T>
void conv_backward_data_kernel(const T* dout, const T* w, const Geometry& g, T* dx) {
  if (g.depthwise()) {
    // depthwise_backward needs x only for dw; pass dout as a dummy pointer.
    depthwise_backward<T>(dout, w, dout, g, dx, nullptr);
    return;
  }
  const std::int64_t plane_in = g.h * g.w;
  std::vector<T> col(static_cast<std::size_t>(g.pointwise() ? 0 : g.patch() * g.pixels()));
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      T* img = dx + (b * g.cin + grp * g.cin_g()) * plane_in;
      const T* go = dout + (b * g.cout + grp * g.cout_g()) * g.pixels();
      const T* wg = w + grp * g.cout_g() * g.patch();
      if (g.pointwise()) {
        gemm_tn(g.cout_g(), g.pixels(), g.patch(), wg, go, img);
      } else {
        std::fill(col.begin(), col.end(), T(0));
        gemm_tn(g.cout_g(), g.pixels(), g.patch(), wg, go, col.data());
        col2im_add(col.data(), g, img);
      }
    }
  }
}

// dw += dconv/dw given input x and output gradient dout.
template <typename T>
void conv_backward_weight_kernel(const T* x, const T* dout, const Geometry& g, T* dw) {
  if (g.depthwise()) {
    depthwise_backward<T>(x, dw, dout, g, nullptr, dw);
    return;
  }
  const std::int64_t plane_in = g.h * g.w;
  std::vector<T> col(static_cast<std::size_t>(g.pointwise() ? 0 : g.patch() * g.pixels()));
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const T* img = x + (b * g.cin + grp * g.cin_g()) * plane_in;
      const T* cols = img;
      if (!g.pointwise()) {
        im2col(img, g, col.data());
        cols = col.data();
      }
      gemm_nt(g.cout_g(), g.pixels(), g.patch(), dout + (b * g.cout + grp * g.cout_g()) * g.pixels(), cols,
              dw + grp * g.cout_g() * g.patch());
    }
  }
}

Geometry conv_geometry(const Shape& x, const Shape& w, const ConvOptions& o) {
  if (o.stride < 1) throw ShapeError("conv2d: stride must be positive, got " + std::to_string(o.stride));
  if (o.dilation < 1) throw ShapeError("conv2d: dilation must be positive");
  if (o.pad < 0) throw ShapeError("conv2d: negative padding");
  if (o.groups < 1 || x.c % o.groups != 0 || w.n % o.groups != 0) {
    throw ShapeError("conv2d: groups " + std::to_string(o.groups) + " must divide channels in=" + std::to_string(x.c) +
                     " out=" + std::to_string(w.n));
  }
  if (w.c != x.c / o.groups) {
    throw ShapeError("conv2d: weight " + w.str() + " does not match input " + x.str() + " with groups " +
                     std::to_string(o.groups));
  }
  Geometry g{x.n, x.c, x.h, x.w, w.n, w.h, w.w, conv_out_size(x.h, static_cast<int>(w.h), o),
             conv_out_size(x.w, static_cast<int>(w.w), o), o.stride, o.pad, o.dilation, o.groups};
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: empty output for input " + x.str() + " kernel " + w.str());
  return g;
}

}  // namespace

std::int64_t conv_out_size(std::int64_t in, int kernel, const ConvOptions& o) {
  const std::int64_t span = static_cast<std::int64_t>(o.dilation) * (kernel - 1) + 1;
  const std::int64_t padded = in + 2 * o.pad - span;
  if (padded < 0) return 0;
  return padded / o.stride + 1;
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, const ConvOptions& opt) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Geometry g = conv_geometry(xv.shape(), wv.shape(), opt);
  Tensor<T> out(Shape{g.n, g.cout, g.ho, g.wo});
  if (bias) {
    const Tensor<T>& bv = bias->value();
    if (bv.numel() != g.cout) throw ShapeError("conv2d: bias " + bv.shape().str() + " for " + std::to_string(g.cout) + " outputs");
    for (std::int64_t b = 0; b < g.n; ++b)
      for (std::int64_t c = 0; c < g.cout; ++c) std::fill_n(out.plane(b, c), g.pixels(), bv[c]);
  }
  conv_forward_kernel(xv.ptr(), wv.ptr(), g, out.ptr());
  tape.add_macs(g.macs());

  std::vector<Var<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return tape.record("conv2d", std::move(out), inputs, [x, w, bias, g](Tape<T>& t, const Tensor<T>& gout) {
    if (Tensor<T>* gx = t.grad_buffer(x)) conv_backward_data_kernel(gout.ptr(), w.value().ptr(), g, gx->ptr());
    if (Tensor<T>* gw = t.grad_buffer(w)) conv_backward_weight_kernel(x.value().ptr(), gout.ptr(), g, gw->ptr());
    if (bias) {
      if (Tensor<T>* gb = t.grad_buffer(*bias)) {
        for (std::int64_t b = 0; b < g.n; ++b) {
          for (std::int64_t c = 0; c < g.cout; ++c) {
            const T* p = gout.plane(b, c);
            T s = 0;
            for (std::int64_t i = 0; i < g.pixels(); ++i) s += p[i];
            (*gb)[c] += s;
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, int stride, int groups) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Shape xs = xv.shape();
  const Shape ws = wv.shape();
  if (stride < 1) throw ShapeError("conv_transpose2d: stride must be positive");
  if (groups < 1 || xs.c % groups != 0) throw ShapeError("conv_transpose2d: groups must divide input channels");
  if (ws.n != xs.c) throw ShapeError("conv_transpose2d: weight " + ws.str() + " does not match input " + xs.str());
  // Equivalent forward convolution maps the (larger) output back onto x.
  const Shape out_shape{xs.n, ws.c * groups, (xs.h - 1) * stride + ws.h, (xs.w - 1) * stride + ws.w};
  ConvOptions fwd{stride, 0, 1, groups};
  const Geometry g = conv_geometry(out_shape, ws, fwd);
  if (g.ho != xs.h || g.wo != xs.w) throw ShapeError("conv_transpose2d: inconsistent geometry");
  Tensor<T> out(out_shape);
  conv_backward_data_kernel(xv.ptr(), wv.ptr(), g, out.ptr());
  tape.add_macs(g.macs());
  return tape.record("conv_transpose2d", std::move(out), {x, w}, [x, w, g](Tape<T>& t, const Tensor<T>& gout) {
    if (Tensor<T>* gx = t.grad_buffer(x)) conv_forward_kernel(gout.ptr(), w.value().ptr(), g, gx->ptr());
    if (Tensor<T>* gw = t.grad_buffer(w)) conv_backward_weight_kernel(gout.ptr(), x.value().ptr(), g, gw->ptr());
  });
}

template Var<float> conv2d(Var<float>, Var<float>, std::optional<Var<float>>, const ConvOptions&);
template Var<double> conv2d(Var<double>, Var<double>, std::optional<Var<double>>, const ConvOptions&);
template Var<float> conv_transpose2d(Var<float>, Var<float>, int, int);
template Var<double> conv_transpose2d(Var<double>, Var<double>, int, int);

}  // namespace rsnet::ops
