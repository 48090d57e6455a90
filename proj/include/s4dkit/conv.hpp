#pragma once

#include <stdexcept>
#include <vector>

#include "s4dkit/fft.hpp"
#include "s4dkit/tensor.hpp"

namespace s4dkit {

enum class ConvPath { Direct, Fft };
enum class Context { Online, Offline };

namespace detail {

// out[t] = sum_{j=0..min(t,L-1)} kernel[j] * input[t-j], accumulated j ascending.
// Strides let this run on one channel of a row-major [T x H] block.
inline void causal_conv_direct_strided(const double* x, std::size_t t_len, std::size_t xs,
                                       const double* k, std::size_t k_len, std::size_t ks,
                                       double* y, std::size_t ys) {
  for (std::size_t t = 0; t < t_len; ++t) {
    double acc = 0.0;
    const std::size_t jmax = std::min(t, k_len - 1);
    for (std::size_t j = 0; j <= jmax; ++j) acc += k[j * ks] * x[(t - j) * xs];
    y[t * ys] = acc;
  }
}

inline void causal_conv_fft(const double* x, std::size_t t_len, const double* k,
                            std::size_t k_len, double* y) {
  const std::size_t n = next_pow2(t_len + k_len - 1);
  std::vector<cplx> fa(n, cplx(0, 0)), fb(n, cplx(0, 0));
  for (std::size_t i = 0; i < t_len; ++i) fa[i] = cplx(x[i], 0.0);
  for (std::size_t i = 0; i < k_len; ++i) fb[i] = cplx(k[i], 0.0);
  fft_inplace(fa, false);
  fft_inplace(fb, false);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  fft_inplace(fa, true);
  for (std::size_t t = 0; t < t_len; ++t) y[t] = fa[t].real();
}

}  // namespace detail

// Causal 1-D convolution of a [T] input with an [L] kernel; kernel[0] multiplies
// the current step. Both paths compute the same left-zero-padded sum.
inline Tensor causal_conv1d(const Tensor& input, const Tensor& kernel,
                            ConvPath path = ConvPath::Direct) {
  if (input.numel() == 0) throw std::invalid_argument("causal_conv1d: empty input");
  if (kernel.numel() == 0) throw std::invalid_argument("causal_conv1d: empty kernel");
  if (input.is_complex() || kernel.is_complex())
    throw std::invalid_argument("causal_conv1d: real arrays expected");
  const std::size_t t_len = input.numel(), k_len = kernel.numel();
  Tensor out = Tensor::zeros(t_len);
  if (path == ConvPath::Direct) {
    detail::causal_conv_direct_strided(input.data(), t_len, 1, kernel.data(), k_len, 1,
                                       out.data(), 1);
  } else {
    detail::causal_conv_fft(input.data(), t_len, kernel.data(), k_len, out.data());
  }
  return out;
}

// Per-channel convolution of x [T x H] with kernels [H x k]. Online pads k-1 on the
// left; offline splits the padding ceil((k-1)/2) left / floor((k-1)/2) right.
// batch > 1 treats x as stacked [batch*T x H] blocks that must not mix.
S4DKIT_NOINLINE inline Tensor depthwise_conv(const Tensor& x, const Tensor& kernels,
                                             Context context, std::size_t batch = 1) {
  if (x.numel() == 0 || kernels.numel() == 0)
    throw std::invalid_argument("depthwise_conv: empty input or kernels");
  const std::size_t h = x.cols(), k = kernels.cols();
  if (kernels.rows() != h) throw std::invalid_argument("depthwise_conv: channel mismatch");
  if (x.rows() % batch != 0) throw std::invalid_argument("depthwise_conv: bad batch");
  const std::size_t t_len = x.rows() / batch;
  const std::size_t rshift = (context == Context::Online) ? 0 : (k - 1) / 2;
  Tensor out = Tensor::zeros2d(x.rows(), h);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data() + b * t_len * h;
    double* yb = out.data() + b * t_len * h;
    for (std::size_t c = 0; c < h; ++c) {
      for (std::size_t t = 0; t < t_len; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t s = std::ptrdiff_t(t + rshift) - std::ptrdiff_t(j);
          if (s >= 0 && s < std::ptrdiff_t(t_len)) acc += kernels(c, j) * xb[s * h + c];
        }
        yb[t * h + c] = acc;
      }
    }
  }
  return out;
}

}  // namespace s4dkit
