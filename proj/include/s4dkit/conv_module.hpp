#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "s4dkit/s4d.hpp"

namespace s4dkit {

enum class Approach { Baseline, DIR, COM, REP };

inline const char* approach_name(Approach a) {
  switch (a) {
    case Approach::Baseline: return "baseline";
    case Approach::DIR: return "dir";
    case Approach::COM: return "com";
    default: return "rep";
  }
}

struct ConvModuleSpec {
  Approach approach = Approach::Baseline;
  std::size_t h = 64;
  std::size_t kernel_size = 4;       // Baseline convolution / COM pre-S4 convolution
  std::size_t rep_left_context = 0;  // REP kernel length L
  std::optional<S4DConfig> s4d;
  Context context = Context::Online;
};

inline void validate(const ConvModuleSpec& spec) {
  if (spec.h == 0) throw std::invalid_argument("model.h: must be >= 1");
  const bool needs_s4 = spec.approach != Approach::Baseline;
  if (needs_s4 && !spec.s4d.has_value())
    throw std::invalid_argument("model.s4d: required for dir/com/rep");
  if (!needs_s4 && spec.s4d.has_value())
    throw std::invalid_argument("model.s4d: baseline forbids an S4 configuration");
  if (spec.s4d && spec.s4d->n_state == 0)
    throw std::invalid_argument("model.n_state: must be >= 1");
  if ((spec.approach == Approach::Baseline || spec.approach == Approach::COM) &&
      spec.kernel_size == 0)
    throw std::invalid_argument("model.kernel_size: must be >= 1");
  if (spec.approach == Approach::REP && spec.rep_left_context == 0)
    throw std::invalid_argument("model.rep_left_context: must be >= 1");
}

// Weights of one convolution module: LN -> H->2H projection -> GLU -> core ->
// BN -> swish -> H->H projection, with a residual around the whole block.
struct ConvModule {
  ConvModuleSpec spec;
  Tensor ln_g, ln_b;    // [H]
  Tensor glu_w, glu_b;  // [H x 2H], [2H]
  Tensor conv_kernels;  // [H x k], Baseline and COM
  std::optional<S4DParams> s4;
  Tensor bn_g, bn_b;    // [H]
  Tensor bn_rm, bn_rv;  // running mean/variance buffers
  Tensor post_w, post_b;  // [H x H], [H]
};

inline ConvModule init_conv_module(const ConvModuleSpec& spec, std::uint64_t seed) {
  validate(spec);
  ConvModule m;
  m.spec = spec;
  const std::size_t h = spec.h;
  Rng rng(split_seed(seed, 0x11));
  m.ln_g = Tensor::full(h, 1, 1.0);
  m.ln_b = Tensor::zeros(h);
  m.glu_w = Tensor::randn(h, 2 * h, rng, 1.0 / std::sqrt(double(h)));
  m.glu_b = Tensor::zeros(2 * h);
  if (spec.approach == Approach::Baseline || spec.approach == Approach::COM)
    m.conv_kernels =
        Tensor::randn(h, spec.kernel_size, rng, 1.0 / std::sqrt(double(spec.kernel_size)));
  if (spec.s4d)
    m.s4 = init_s4d(spec.s4d->scheme, spec.s4d->n_state, h, split_seed(seed, 0x12));
  m.bn_g = Tensor::full(h, 1, 1.0);
  m.bn_b = Tensor::zeros(h);
  m.bn_rm = Tensor::zeros(h);
  m.bn_rv = Tensor::full(h, 1, 1.0);
  m.post_w = Tensor::randn(h, h, rng, 1.0 / std::sqrt(double(h)));
  m.post_b = Tensor::zeros(h);
  return m;
}

// Channel split followed by sigmoid gating: (a, b) -> a ⊙ sigmoid(b).
S4DKIT_NOINLINE inline Tensor glu(const Tensor& x) {
  if (x.cols() % 2 != 0) throw std::invalid_argument("glu: odd channel count");
  const std::size_t rows = x.rows(), h = x.cols() / 2;
  Tensor out = Tensor::zeros2d(rows, h);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < h; ++c)
      out(r, c) = x(r, c) * detail::sigmoid(x(r, c + h));
  return out;
}

namespace detail {

S4DKIT_NOINLINE inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out;
  matmul_into(out, x, w, false, false, false);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b(c);
  return out;
}

S4DKIT_NOINLINE inline Tensor layer_norm_rows(const Tensor& x, const Tensor& g,
                                              const Tensor& b, double eps = 1e-5) {
  Tensor out = Tensor::zeros2d(x.rows(), x.cols());
  const std::size_t cols = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += x(r, c);
    mean /= double(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = x(r, c) - mean;
      var += d * d;
    }
    var /= double(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = g(c) * (x(r, c) - mean) * is + b(c);
  }
  return out;
}

S4DKIT_NOINLINE inline void swish_inplace(Tensor& x) {
  for (auto& v : x.raw()) v = v * sigmoid(v);
}

S4DKIT_NOINLINE inline void bn_eval_inplace(Tensor& z, const Tensor& g, const Tensor& b,
                                            const Tensor& rm, const Tensor& rv,
                                            double eps = 1e-5) {
  for (std::size_t c = 0; c < z.cols(); ++c) {
    const double is = 1.0 / std::sqrt(rv(c) + eps);
    for (std::size_t r = 0; r < z.rows(); ++r) z(r, c) = g(c) * (z(r, c) - rm(c)) * is + b(c);
  }
}

}  // namespace detail

// Variant-specific inner computation between GLU and batch norm.
inline Tensor module_core(const ConvModule& m, const Tensor& x, std::size_t batch = 1) {
  switch (m.spec.approach) {
    case Approach::Baseline:
      return depthwise_conv(x, m.conv_kernels, m.spec.context, batch);
    case Approach::DIR: {
      Tensor out = Tensor::zeros2d(x.rows(), x.cols());
      const std::size_t t_len = x.rows() / batch;
      for (std::size_t b = 0; b < batch; ++b) {
        Tensor xe = Tensor::zeros2d(t_len, x.cols());
        std::copy(x.raw().begin() + b * t_len * x.cols(),
                  x.raw().begin() + (b + 1) * t_len * x.cols(), xe.raw().begin());
        Tensor ye = s4d_forward(*m.s4, xe, S4DMode::ScanSequential);
        std::copy(ye.raw().begin(), ye.raw().end(), out.raw().begin() + b * t_len * x.cols());
      }
      return out;
    }
    case Approach::COM: {
      Tensor pre = depthwise_conv(x, m.conv_kernels, m.spec.context, batch);
      ConvModule tmp;  // reuse the DIR path on the pre-convolved signal
      tmp.spec = m.spec;
      tmp.spec.approach = Approach::DIR;
      tmp.s4 = m.s4;
      return module_core(tmp, pre, batch);
    }
    default: {  // REP: finite kernel reparameterized by the S4, recomputed here
      Tensor kernel = rep_effective_kernel(*m.s4, m.spec.rep_left_context);
      return depthwise_conv(x, kernel, m.spec.context, batch);
    }
  }
}

// Forward pass of the module. Training mode uses batch statistics over all rows
// (batch x time) and updates the running buffers; eval mode uses frozen stats.
inline Tensor module_forward(ConvModule& m, const Tensor& x, bool training,
                             std::size_t batch = 1, double bn_momentum = 0.99,
                             double bn_eps = 1e-5) {
  if (x.cols() != m.spec.h) throw std::invalid_argument("module_forward: width mismatch");
  if (x.rows() == 0) throw std::invalid_argument("module_forward: empty batch");
  Tensor z = detail::layer_norm_rows(x, m.ln_g, m.ln_b);
  z = detail::affine(z, m.glu_w, m.glu_b);
  z = glu(z);
  z = module_core(m, z, batch);
  const std::size_t rows = z.rows(), cols = z.cols();
  if (training) {
    for (std::size_t c = 0; c < cols; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < rows; ++r) mean += z(r, c);
      mean /= double(rows);
      double var = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = z(r, c) - mean;
        var += d * d;
      }
      var /= double(rows);
      const double is = 1.0 / std::sqrt(var + bn_eps);
      for (std::size_t r = 0; r < rows; ++r)
        z(r, c) = m.bn_g(c) * (z(r, c) - mean) * is + m.bn_b(c);
      m.bn_rm(c) = bn_momentum * m.bn_rm(c) + (1.0 - bn_momentum) * mean;
      m.bn_rv(c) = bn_momentum * m.bn_rv(c) + (1.0 - bn_momentum) * var;
    }
  } else {
    detail::bn_eval_inplace(z, m.bn_g, m.bn_b, m.bn_rm, m.bn_rv, bn_eps);
  }
  detail::swish_inplace(z);
  z = detail::affine(z, m.post_w, m.post_b);
  for (std::size_t i = 0; i < z.raw().size(); ++i) z.raw()[i] += x.raw()[i];
  return z;
}

}  // namespace s4dkit
