#include <algorithm>
#include <cmath>

#include "rsnet/ops.hpp"

namespace rsnet::ops {

namespace {

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

void require_channel_vector(const Shape& v, std::int64_t c, const char* op, const char* what) {
  if (v.numel() != c) {
    throw ShapeError(std::string(op) + ": " + what + " " + v.str() + " does not hold " + std::to_string(c) + " channels");
  }
}

// Elementwise op helper: out = f(x), dx = gout * df(x, out).
template <typename T, typename F, typename DF>
Var<T> unary(const char* name, Var<T> x, F f, DF df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  const T* xp = xv.ptr();
  T* op = out.ptr();
  for (std::int64_t i = 0; i < xv.numel(); ++i) op[i] = f(xp[i]);
  const std::int32_t out_id = static_cast<std::int32_t>(x.tape->size());
  return x.tape->record(name, std::move(out), {x}, [x, df, out_id](Tape<T>& t, const Tensor<T>& gout) {
    Tensor<T>* gx = t.grad_buffer(x);
    if (!gx) return;
    const T* xp = x.value().ptr();
    const T* yp = t.value(Var<T>{&t, out_id}).ptr();
    const T* gp = gout.ptr();
    T* dp = gx->ptr();
    for (std::int64_t i = 0; i < gout.numel(); ++i) dp[i] += gp[i] * df(xp[i], yp[i]);
  });
}

template <typename T>
T stable_sigmoid(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                  const BatchNormOptions& opt) {
  const Tensor<T>& xv = x.value();
  const Shape s = xv.shape();
  require_channel_vector(gamma.shape(), s.c, "batch_norm", "gamma");
  require_channel_vector(beta.shape(), s.c, "batch_norm", "beta");
  require_channel_vector(running_mean.shape(), s.c, "batch_norm", "running mean");
  require_channel_vector(running_var.shape(), s.c, "batch_norm", "running var");
  const std::int64_t plane = s.plane();
  const std::int64_t count = s.n * plane;
  if (count == 0) throw ShapeError("batch_norm: empty input");

  Tensor<T> mean(Shape{1, s.c, 1, 1});
  Tensor<T> inv_std(Shape{1, s.c, 1, 1});
  if (mode == Mode::Train) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      double acc = 0;
      for (std::int64_t b = 0; b < s.n; ++b) {
        const T* p = xv.plane(b, c);
        for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0;
      for (std::int64_t b = 0; b < s.n; ++b) {
        const T* p = xv.plane(b, c);
        for (std::int64_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean[c] = static_cast<T>((1.0 - opt.momentum) * running_mean[c] + opt.momentum * mu);
      running_var[c] = static_cast<T>((1.0 - opt.momentum) * running_var[c] + opt.momentum * unbiased);
    }
  } else {
    for (std::int64_t c = 0; c < s.c; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + opt.eps));
    }
  }

  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  Tensor<T> xhat(s);
  Tensor<T> out(s);
  for (std::int64_t b = 0; b < s.n; ++b) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* p = xv.plane(b, c);
      T* h = xhat.plane(b, c);
      T* o = out.plane(b, c);
      const T mu = mean[c], is = inv_std[c], g = gv[c], be = bv[c];
      for (std::int64_t i = 0; i < plane; ++i) {
        h[i] = (p[i] - mu) * is;
        o[i] = g * h[i] + be;
      }
    }
  }
  const bool train = mode == Mode::Train;
  x.tape->add_macs(s.numel());
  return x.tape->record(
      "batch_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), train](Tape<T>& t, const Tensor<T>& gout) {
        const Shape s = gout.shape();
        const std::int64_t plane = s.plane();
        const double count = static_cast<double>(s.n * plane);
        Tensor<T>* gx = t.grad_buffer(x);
        Tensor<T>* gg = t.grad_buffer(gamma);
        Tensor<T>* gb = t.grad_buffer(beta);
        const Tensor<T>& gv = gamma.value();
        for (std::int64_t c = 0; c < s.c; ++c) {
          double sum_g = 0, sum_gh = 0;
          for (std::int64_t b = 0; b < s.n; ++b) {
            const T* go = gout.plane(b, c);
            const T* h = xhat.plane(b, c);
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_g += go[i];
              sum_gh += go[i] * h[i];
            }
          }
          if (gg) (*gg)[c] += static_cast<T>(sum_gh);
          if (gb) (*gb)[c] += static_cast<T>(sum_g);
          if (!gx) continue;
          const T scale = gv[c] * inv_std[c];
          const T mean_g = static_cast<T>(sum_g / count);
          const T mean_gh = static_cast<T>(sum_gh / count);
          for (std::int64_t b = 0; b < s.n; ++b) {
            const T* go = gout.plane(b, c);
            const T* h = xhat.plane(b, c);
            T* d = gx->plane(b, c);
            if (train) {
              for (std::int64_t i = 0; i < plane; ++i) d[i] += scale * (go[i] - mean_g - h[i] * mean_gh);
            } else {
              for (std::int64_t i = 0; i < plane; ++i) d[i] += scale * go[i];
            }
          }
        }
      });
}

template <typename T>
Var<T> group_norm(Var<T> x, int num_groups, Var<T> gamma, Var<T> beta, double eps) {
  const Tensor<T>& xv = x.value();
  const Shape s = xv.shape();
  if (num_groups < 1 || s.c % num_groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(num_groups) + " groups do not divide " + std::to_string(s.c) +
                     " channels");
  }
  require_channel_vector(gamma.shape(), s.c, "group_norm", "gamma");
  require_channel_vector(beta.shape(), s.c, "group_norm", "beta");
  const std::int64_t cpg = s.c / num_groups;
  const std::int64_t slice = cpg * s.plane();
  Tensor<T> xhat(s);
  Tensor<T> inv_std(Shape{s.n, num_groups, 1, 1});
  Tensor<T> out(s);
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::int64_t b = 0; b < s.n; ++b) {
    for (std::int64_t grp = 0; grp < num_groups; ++grp) {
      const T* p = xv.plane(b, grp * cpg);
      double acc = 0;
      for (std::int64_t i = 0; i < slice; ++i) acc += p[i];
      const double mu = acc / static_cast<double>(slice);
      double sq = 0;
      for (std::int64_t i = 0; i < slice; ++i) sq += (p[i] - mu) * (p[i] - mu);
      const T is = static_cast<T>(1.0 / std::sqrt(sq / static_cast<double>(slice) + eps));
      inv_std[b * num_groups + grp] = is;
      T* h = xhat.plane(b, grp * cpg);
      T* o = out.plane(b, grp * cpg);
      for (std::int64_t c = 0; c < cpg; ++c) {
        const std::int64_t ch = grp * cpg + c;
        for (std::int64_t i = 0; i < s.plane(); ++i) {
          const std::int64_t k = c * s.plane() + i;
          h[k] = static_cast<T>((p[k] - mu) * is);
          o[k] = gv[ch] * h[k] + bv[ch];
        }
      }
    }
  }
  x.tape->add_macs(s.numel());
  return x.tape->record(
      "group_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, num_groups, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                                         const Tensor<T>& gout) {
        const Shape s = gout.shape();
        const std::int64_t cpg = s.c / num_groups;
        const std::int64_t plane = s.plane();
        Tensor<T>* gx = t.grad_buffer(x);
        Tensor<T>* gg = t.grad_buffer(gamma);
        Tensor<T>* gb = t.grad_buffer(beta);
        const Tensor<T>& gv = gamma.value();
        for (std::int64_t b = 0; b < s.n; ++b) {
          for (std::int64_t c = 0; c < s.c; ++c) {
            const T* go = gout.plane(b, c);
            const T* h = xhat.plane(b, c);
            double sg = 0, sgh = 0;
            for (std::int64_t i = 0; i < plane; ++i) {
              sg += go[i];
              sgh += go[i] * h[i];
            }
            if (gg) (*gg)[c] += static_cast<T>(sgh);
            if (gb) (*gb)[c] += static_cast<T>(sg);
          }
          if (!gx) continue;
          for (std::int64_t grp = 0; grp < num_groups; ++grp) {
            // dxhat = gout * gamma; dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
            double m1 = 0, m2 = 0;
            for (std::int64_t c = grp * cpg; c < (grp + 1) * cpg; ++c) {
              const T* go = gout.plane(b, c);
              const T* h = xhat.plane(b, c);
              for (std::int64_t i = 0; i < plane; ++i) {
                const double d = static_cast<double>(go[i]) * gv[c];
                m1 += d;
                m2 += d * h[i];
              }
            }
            const double count = static_cast<double>(cpg * plane);
            m1 /= count;
            m2 /= count;
            const T is = inv_std[b * num_groups + grp];
            for (std::int64_t c = grp * cpg; c < (grp + 1) * cpg; ++c) {
              const T* go = gout.plane(b, c);
              const T* h = xhat.plane(b, c);
              T* d = gx->plane(b, c);
              for (std::int64_t i = 0; i < plane; ++i) {
                d[i] += static_cast<T>(is * (go[i] * gv[c] - m1 - h[i] * m2));
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> relu6(Var<T> x) {
  return unary<T>(
      "relu6", x, [](T v) { return std::min(std::max(v, T(0)), T(6)); },
      [](T v, T) { return (v > T(0) && v < T(6)) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary<T>(
      "sigmoid", x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> silu(Var<T> x) {
  return unary<T>(
      "silu", x, [](T v) { return v * stable_sigmoid(v); },
      [](T v, T) {
        const T s = stable_sigmoid(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Var<T> exp_capped(Var<T> x, T cap) {
  return unary<T>(
      "exp", x, [cap](T v) { return std::exp(std::min(v, cap)); }, [cap](T v, T y) { return v < cap ? y : T(0); });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same(av.shape(), bv.shape(), "add");
  Tensor<T> out = av;
  out.add_(bv);
  return a.tape->record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& gout) {
    if (Tensor<T>* ga = t.grad_buffer(a)) ga->add_(gout);
    if (Tensor<T>* gb = t.grad_buffer(b)) gb->add_(gout);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same(av.shape(), bv.shape(), "mul");
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return a.tape->record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& gout) {
    if (Tensor<T>* ga = t.grad_buffer(a)) {
      const Tensor<T>& bv = b.value();
      for (std::int64_t i = 0; i < gout.numel(); ++i) (*ga)[i] += gout[i] * bv[i];
    }
    if (Tensor<T>* gb = t.grad_buffer(b)) {
      const Tensor<T>& av = a.value();
      for (std::int64_t i = 0; i < gout.numel(); ++i) (*gb)[i] += gout[i] * av[i];
    }
  });
}

template <typename T>
Var<T> mul_channel(Var<T> x, Var<T> g) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& gv = g.value();
  const Shape s = xv.shape();
  if (gv.shape() != Shape{s.n, s.c, 1, 1}) throw ShapeError("mul_channel: gate " + gv.shape().str() + " for " + s.str());
  Tensor<T> out(s);
  for (std::int64_t b = 0; b < s.n; ++b) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T k = gv[b * s.c + c];
      const T* p = xv.plane(b, c);
      T* o = out.plane(b, c);
      for (std::int64_t i = 0; i < s.plane(); ++i) o[i] = p[i] * k;
    }
  }
  return x.tape->record("mul_channel", std::move(out), {x, g}, [x, g](Tape<T>& t, const Tensor<T>& gout) {
    const Shape s = gout.shape();
    Tensor<T>* gx = t.grad_buffer(x);
    Tensor<T>* gg = t.grad_buffer(g);
    const Tensor<T>& xv = x.value();
    const Tensor<T>& gv = g.value();
    for (std::int64_t b = 0; b < s.n; ++b) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        const T* go = gout.plane(b, c);
        if (gx) {
          const T k = gv[b * s.c + c];
          T* d = gx->plane(b, c);
          for (std::int64_t i = 0; i < s.plane(); ++i) d[i] += go[i] * k;
        }
        if (gg) {
          const T* p = xv.plane(b, c);
          T acc = 0;
          for (std::int64_t i = 0; i < s.plane(); ++i) acc += go[i] * p[i];
          (*gg)[b * s.c + c] += acc;
        }
      }
    }
  });
}

template <typename T>
Var<T> mul_scalar(Var<T> x, Var<T> s) {
  const Tensor<T>& xv = x.value();
  if (s.value().numel() != 1) throw ShapeError("mul_scalar: scale must be 1x1x1x1, got " + s.shape().str());
  const T k = s.value()[0];
  Tensor<T> out(xv.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * k;
  return x.tape->record("mul_scalar", std::move(out), {x, s}, [x, s](Tape<T>& t, const Tensor<T>& gout) {
    if (Tensor<T>* gx = t.grad_buffer(x)) gx->add_(gout, s.value()[0]);
    if (Tensor<T>* gs = t.grad_buffer(s)) (*gs)[0] += static_cast<T>(dot(gout, x.value()));
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + s.str() + " incompatible with " + first.str());
    }
    channels += s.c;
  }
  Tensor<T> out(Shape{first.n, channels, first.h, first.w});
  const std::int64_t plane = first.plane();
  for (std::int64_t b = 0; b < first.n; ++b) {
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      const Tensor<T>& v = p.value();
      std::copy_n(v.plane(b, 0), v.shape().c * plane, out.plane(b, offset));
      offset += v.shape().c;
    }
  }
  return parts.front().tape->record("concat", std::move(out), parts, [parts](Tape<T>& t, const Tensor<T>& gout) {
    const Shape s = gout.shape();
    for (std::int64_t b = 0; b < s.n; ++b) {
      std::int64_t offset = 0;
      for (const auto& p : parts) {
        const std::int64_t c = p.shape().c;
        if (Tensor<T>* g = t.grad_buffer(p)) {
          const T* src = gout.plane(b, offset);
          T* dst = g->plane(b, 0);
          for (std::int64_t i = 0; i < c * s.plane(); ++i) dst[i] += src[i];
        }
        offset += c;
      }
    }
  });
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::int64_t begin, std::int64_t count) {
  const Shape s = x.shape();
  if (begin < 0 || count <= 0 || begin + count > s.c) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + s.str());
  }
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  for (std::int64_t b = 0; b < s.n; ++b) std::copy_n(x.value().plane(b, begin), count * s.plane(), out.plane(b, 0));
  return x.tape->record("slice", std::move(out), {x}, [x, begin, count](Tape<T>& t, const Tensor<T>& gout) {
    Tensor<T>* gx = t.grad_buffer(x);
    if (!gx) return;
    const Shape s = gout.shape();
    for (std::int64_t b = 0; b < s.n; ++b) {
      const T* src = gout.plane(b, 0);
      T* dst = gx->plane(b, begin);
      for (std::int64_t i = 0; i < count * s.plane(); ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const Shape s = xv.shape();
  if (s.plane() == 0) throw ShapeError("global_avg_pool: empty spatial dims");
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  for (std::int64_t b = 0; b < s.n; ++b) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* p = xv.plane(b, c);
      double acc = 0;
      for (std::int64_t i = 0; i < s.plane(); ++i) acc += p[i];
      out[b * s.c + c] = static_cast<T>(acc / static_cast<double>(s.plane()));
    }
  }
  return x.tape->record("global_avg_pool", std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& gout) {
    Tensor<T>* gx = t.grad_buffer(x);
    if (!gx) return;
    const Shape s = gx->shape();
    const T inv = T(1) / static_cast<T>(s.plane());
    for (std::int64_t b = 0; b < s.n; ++b) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        const T g = gout[b * s.c + c] * inv;
        T* d = gx->plane(b, c);
        for (std::int64_t i = 0; i < s.plane(); ++i) d[i] += g;
      }
    }
  });
}

template <typename T>
Var<T> upsample_nearest2x(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const Shape s = xv.shape();
  Tensor<T> out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  for (std::int64_t b = 0; b < s.n; ++b)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t y = 0; y < 2 * s.h; ++y)
        for (std::int64_t xx = 0; xx < 2 * s.w; ++xx) out.at(b, c, y, xx) = xv.at(b, c, y / 2, xx / 2);
  return x.tape->record("upsample_nearest2x", std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& gout) {
    Tensor<T>* gx = t.grad_buffer(x);
    if (!gx) return;
    const Shape s = gout.shape();
    for (std::int64_t b = 0; b < s.n; ++b)
      for (std::int64_t c = 0; c < s.c; ++c)
        for (std::int64_t y = 0; y < s.h; ++y)
          for (std::int64_t xx = 0; xx < s.w; ++xx) gx->at(b, c, y / 2, xx / 2) += gout.at(b, c, y, xx);
  });
}

template <typename T>
Var<T> dropout(Var<T> x, double p, Mode mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw UsageError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::Eval || p == 0.0) return x;
  const Tensor<T>& xv = x.value();
  Tensor<T> mask(xv.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < p ? T(0) : keep_scale;
  Tensor<T> out(xv.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * mask[i];
  return x.tape->record("dropout", std::move(out), {x}, [x, mask = std::move(mask)](Tape<T>& t, const Tensor<T>& gout) {
    Tensor<T>* gx = t.grad_buffer(x);
    if (!gx) return;
    for (std::int64_t i = 0; i < gout.numel(); ++i) (*gx)[i] += gout[i] * mask[i];
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  double acc = 0;
  for (T v : x.value().data()) acc += v;
  return x.tape->record("sum", Tensor<T>::scalar(static_cast<T>(acc)), {x}, [x](Tape<T>& t, const Tensor<T>& gout) {
    Tensor<T>* gx = t.grad_buffer(x);
    if (!gx) return;
    const T g = gout[0];
    for (T& v : gx->data()) v += g;
  });
}

template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights) {
  require_same(x.shape(), weights.shape(), "weighted_sum");
  const T value = static_cast<T>(dot(x.value(), weights));
  return x.tape->record("weighted_sum", Tensor<T>::scalar(value), {x}, [x, weights](Tape<T>& t, const Tensor<T>& gout) {
    if (Tensor<T>* gx = t.grad_buffer(x)) gx->add_(weights, gout[0]);
  });
}

template <typename T>
Var<T> bce_with_logits_sum(Var<T> logits, const Tensor<T>& targets) {
  const Tensor<T>& lv = logits.value();
  require_same(lv.shape(), targets.shape(), "bce_with_logits_sum");
  double acc = 0;
  for (std::int64_t i = 0; i < lv.numel(); ++i) {
    const double v = lv[i];
    acc += std::max(v, 0.0) - v * targets[i] + std::log1p(std::exp(-std::abs(v)));
  }
  return logits.tape->record(
      "bce_with_logits", Tensor<T>::scalar(static_cast<T>(acc)), {logits},
      [logits, targets](Tape<T>& t, const Tensor<T>& gout) {
        Tensor<T>* gl = t.grad_buffer(logits);
        if (!gl) return;
        const Tensor<T>& lv = logits.value();
        const T g = gout[0];
        for (std::int64_t i = 0; i < lv.numel(); ++i) (*gl)[i] += g * (stable_sigmoid(lv[i]) - targets[i]);
      });
}

#define RSNET_INSTANTIATE_OPS(T)                                                                                  \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&, Mode, const BatchNormOptions&);      \
  template Var<T> group_norm(Var<T>, int, Var<T>, Var<T>, double);                                                \
  template Var<T> relu6(Var<T>);                                                                                  \
  template Var<T> sigmoid(Var<T>);                                                                                \
  template Var<T> silu(Var<T>);                                                                                   \
  template Var<T> exp_capped(Var<T>, T);                                                                          \
  template Var<T> add(Var<T>, Var<T>);                                                                            \
  template Var<T> mul(Var<T>, Var<T>);                                                                            \
  template Var<T> mul_channel(Var<T>, Var<T>);                                                                    \
  template Var<T> mul_scalar(Var<T>, Var<T>);                                                                     \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                                    \
  template Var<T> slice_channels(Var<T>, std::int64_t, std::int64_t);                                             \
  template Var<T> global_avg_pool(Var<T>);                                                                        \
  template Var<T> upsample_nearest2x(Var<T>);                                                                     \
  template Var<T> dropout(Var<T>, double, Mode, Rng&);                                                            \
  template Var<T> sum(Var<T>);                                                                                    \
  template Var<T> weighted_sum(Var<T>, const Tensor<T>&);                                                         \
  template Var<T> bce_with_logits_sum(Var<T>, const Tensor<T>&);

RSNET_INSTANTIATE_OPS(float)
RSNET_INSTANTIATE_OPS(double)

}  // namespace rsnet::ops
