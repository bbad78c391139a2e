#pragma once

#include <array>
#include <optional>

#include "rsnet/autodiff.hpp"
#include "rsnet/ops.hpp"

namespace rsnet {

// Four 2x2 analysis kernels, each stored row-major as {k00, k01, k10, k11}.
// Order is LL, LH, HL, HH; subband tensors stack channel blocks in the same
// order, and the checkpoint layout depends on it.
struct WaveletFilterBank {
  std::array<std::array<double, 4>, 4> kernels;

  // The fixed Haar bank with entries +-0.5.
  static const WaveletFilterBank& haar();

  // Gram matrix of the flattened kernels.
  std::array<std::array<double, 4>, 4> gram() const;
  // Exact comparison of the Gram matrix against the identity.
  bool orthonormal() const;
};

enum class WaveletAggregate { Stack, Sum };

// Result of an analysis step. `bands` is B x 4C x ceil(H/2) x ceil(W/2);
// source_h/source_w remember the pre-padding extent.
template <typename T>
struct Subbands {
  Var<T> bands;
  std::int64_t source_h = 0;
  std::int64_t source_w = 0;
  bool padded() const;
};

// Stride-2 correlation of every channel with each kernel. Odd extents are
// zero-padded on the right/bottom first.
template <typename T>
Subbands<T> haar_analysis(Var<T> x, const WaveletFilterBank& bank = WaveletFilterBank::haar());

// Transpose-convolution synthesis: sum over subbands of the stride-2 stamp of
// each kernel. The adjoint of haar_analysis; its inverse for an orthonormal
// bank. When crop is given the output is cropped to that extent.
template <typename T>
Var<T> haar_synthesis(Var<T> bands, const WaveletFilterBank& bank = WaveletFilterBank::haar(),
                      std::optional<std::pair<std::int64_t, std::int64_t>> crop = std::nullopt);

// Analysis followed by learned 1x1 channel mixing. With Stack the pointwise
// weight is (c_out, 4C, 1, 1); with Sum the four subbands are added first and
// the weight is (c_out, C, 1, 1).
template <typename T>
Var<T> wavelet_pool(Var<T> x, Var<T> pointwise, std::optional<Var<T>> bias,
                    WaveletAggregate aggregate = WaveletAggregate::Stack);

// Parameter-free synthesis: B x 4k x H x W -> B x k x 2H x 2W.
template <typename T>
Var<T> wavelet_unpool(Var<T> x);

}  // namespace rsnet
