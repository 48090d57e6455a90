#pragma once

#include <stdexcept>

#include "s4dkit/conv.hpp"
#include "s4dkit/scan.hpp"
#include "s4dkit/tape.hpp"
#include "s4dkit/tensor.hpp"
#include "s4dkit/zoh_math.hpp"

namespace s4dkit {

enum class Scheme { Lin, Real };

struct S4DConfig {
  Scheme scheme = Scheme::Real;
  std::size_t n_state = 4;
};

// One S4D layer: diagonal recurrent weights tied across channels, per-channel
// complex readout, per-channel residual scalar and timestep. B is fixed all-ones.
struct S4DParams {
  Scheme scheme = Scheme::Real;
  std::size_t n_state = 0;
  std::size_t n_channels = 0;
  Tensor a_raw_re;  // [N]; Re(A_n) = -exp(a_raw_re[n])
  Tensor a_raw_im;  // [N]; Lin only, Im(A_n) passed through
  Tensor c_re;      // [H x N]
  Tensor c_im;      // [H x N]
  Tensor d;         // [H]
  Tensor log_dt;    // [H]
};

struct DiscreteS4D {
  Tensor a_bar;  // complex [H x N], e^{A_n dt_h}
  Tensor b_bar;  // complex [H x N], (e^{A_n dt_h} - 1)/A_n
};

struct S4DState {
  Tensor x;  // complex [H x N]
};

enum class S4DMode { ScanSequential, ScanParallel, ConvDirect, ConvFft };

inline S4DParams init_s4d(Scheme scheme, std::size_t n, std::size_t h, std::uint64_t seed) {
  if (n == 0 || h == 0) throw std::invalid_argument("init_s4d: N and H must be positive");
  S4DParams p;
  p.scheme = scheme;
  p.n_state = n;
  p.n_channels = h;
  p.a_raw_re = Tensor::zeros(n);
  if (scheme == Scheme::Lin) {
    // A_n = -1/2 + i pi n, reached exactly through the -exp reparameterization
    p.a_raw_im = Tensor::zeros(n);
    for (std::size_t i = 0; i < n; ++i) {
      p.a_raw_re(i) = std::log(0.5);
      p.a_raw_im(i) = 3.14159265358979323846 * double(i);
    }
  } else {
    // A_n = -(n+1)
    for (std::size_t i = 0; i < n; ++i) p.a_raw_re(i) = std::log(double(i + 1));
  }
  Rng rng(seed);
  p.c_re = Tensor::randn(h, n, rng);
  p.c_im = Tensor::randn(h, n, rng);
  p.d = Tensor::full(h, 1, 1.0);
  p.log_dt = Tensor::rand_uniform(h, 1, rng, std::log(1e-3), std::log(1e-1));
  return p;
}

// diag(A) with Re(A_n) = -exp(a_raw_re[n]) < 0 by construction.
inline Tensor constrain_a(const S4DParams& p) {
  Tensor a = Tensor::zeros(p.n_state, 1, true);
  for (std::size_t i = 0; i < p.n_state; ++i) {
    const double im = (p.scheme == Scheme::Lin) ? p.a_raw_im(i) : 0.0;
    a.cx(i) = cplx(-std::exp(p.a_raw_re(i)), im);
  }
  return a;
}

inline Tensor timesteps(const S4DParams& p) {
  Tensor dt = p.log_dt;
  for (auto& v : dt.raw()) v = std::exp(v);
  return dt;
}

// Zero-order hold: a_bar = e^{A dt}, b_bar = dt * phi1(A dt) = (e^{A dt} - 1)/A.
S4DKIT_NOINLINE inline DiscreteS4D discretize_zoh(const Tensor& a, const Tensor& dt) {
  if (!a.all_finite() || !dt.all_finite())
    throw std::invalid_argument("discretize_zoh: non-finite inputs");
  const std::size_t n = a.numel(), h = dt.numel();
  DiscreteS4D out;
  out.a_bar = Tensor::zeros2d(h, n, true);
  out.b_bar = Tensor::zeros2d(h, n, true);
  for (std::size_t ch = 0; ch < h; ++ch)
    for (std::size_t i = 0; i < n; ++i) {
      const cplx z = a.cx(i) * dt(ch);
      out.a_bar.cx(ch, i) = std::exp(z);
      out.b_bar.cx(ch, i) = detail::phi1(z) * dt(ch);
    }
  return out;
}

inline DiscreteS4D discretize(const S4DParams& p) {
  return discretize_zoh(constrain_a(p), timesteps(p));
}

// K[h,k] = Re(sum_n c[h,n] a_bar[h,n]^k b_bar[h,n]); running powers, so a kernel
// of size L is exactly the length-L prefix of any longer kernel.
S4DKIT_NOINLINE inline Tensor kernel_from_discrete(const DiscreteS4D& disc, const Tensor& c_re,
                                                   const Tensor& c_im, std::size_t kernel_len) {
  if (kernel_len == 0) throw std::invalid_argument("materialize_kernel: zero length");
  const std::size_t h = disc.a_bar.rows(), n = disc.a_bar.cols();
  Tensor k = Tensor::zeros2d(h, kernel_len);
  std::vector<cplx> p(n);
  for (std::size_t ch = 0; ch < h; ++ch) {
    for (std::size_t i = 0; i < n; ++i)
      p[i] = cplx(c_re(ch, i), c_im(ch, i)) * disc.b_bar.cx(ch, i);
    for (std::size_t kk = 0; kk < kernel_len; ++kk) {
      cplx acc(0, 0);
      for (std::size_t i = 0; i < n; ++i) acc += p[i];
      k(ch, kk) = acc.real();
      if (kk + 1 < kernel_len)
        for (std::size_t i = 0; i < n; ++i) p[i] *= disc.a_bar.cx(ch, i);
    }
  }
  return k;
}

inline Tensor materialize_kernel(const S4DParams& p, std::size_t kernel_len) {
  return kernel_from_discrete(discretize(p), p.c_re, p.c_im, kernel_len);
}

// Finite kernel used by the reparameterized convolution: the materialized
// kernel with the d-residual folded into tap 0 (d u_t is a delta kernel), so
// the whole layer stays a single plain convolution.
inline Tensor rep_effective_kernel(const S4DParams& p, std::size_t kernel_len) {
  Tensor k = materialize_kernel(p, kernel_len);
  for (std::size_t ch = 0; ch < p.n_channels; ++ch) k(ch, 0) += p.d(ch);
  return k;
}

inline S4DState zero_state(const S4DParams& p) {
  return S4DState{Tensor::zeros2d(p.n_channels, p.n_state, true)};
}

namespace detail {

// One recurrence step on a single channel; shared by s4d_step, the sequential
// forward and the streaming runtime so they are identical bit for bit.
S4DKIT_NOINLINE inline double s4d_step_channel(const cplx* a_bar, const cplx* b_bar,
                                               const cplx* c, std::size_t n, cplx* x, double u,
                                               double d) {
  cplx acc(0, 0);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a_bar[i] * x[i] + b_bar[i] * u;
    acc += c[i] * x[i];
  }
  return acc.real() + d * u;
}

}  // namespace detail

// x' = a_bar ⊙ x + b_bar u;  y = Re(c x') + d u.
inline Tensor s4d_step(const S4DParams& p, const DiscreteS4D& disc, S4DState& state,
                       const Tensor& u) {
  const std::size_t h = p.n_channels, n = p.n_state;
  if (u.numel() != h || state.x.rows() != h || state.x.cols() != n)
    throw std::invalid_argument("s4d_step: shape mismatch");
  Tensor y = Tensor::zeros(h);
  std::vector<cplx> c(n);
  for (std::size_t ch = 0; ch < h; ++ch) {
    for (std::size_t i = 0; i < n; ++i) c[i] = cplx(p.c_re(ch, i), p.c_im(ch, i));
    y(ch) = detail::s4d_step_channel(disc.a_bar.cdata() + ch * n, disc.b_bar.cdata() + ch * n,
                                     c.data(), n, state.x.cdata() + ch * n, u(ch), p.d(ch));
  }
  return y;
}

// Full-sequence forward over [T x H]; scan modes run the recurrence from zero
// state, conv modes convolve with the length-T materialized kernel. All modes
// add the d-residual.
inline Tensor s4d_forward(const S4DParams& p, const Tensor& input,
                          S4DMode mode = S4DMode::ScanSequential) {
  const std::size_t t_len = input.rows(), h = input.cols();
  if (h != p.n_channels) throw std::invalid_argument("s4d_forward: channel mismatch");
  const std::size_t n = p.n_state;
  Tensor y = Tensor::zeros2d(t_len, h);
  if (mode == S4DMode::ScanSequential) {
    const DiscreteS4D disc = discretize(p);
    std::vector<cplx> c(n), x(n);
    for (std::size_t ch = 0; ch < h; ++ch) {
      for (std::size_t i = 0; i < n; ++i) c[i] = cplx(p.c_re(ch, i), p.c_im(ch, i));
      std::fill(x.begin(), x.end(), cplx(0, 0));
      for (std::size_t t = 0; t < t_len; ++t)
        y(t, ch) = detail::s4d_step_channel(disc.a_bar.cdata() + ch * n,
                                            disc.b_bar.cdata() + ch * n, c.data(), n, x.data(),
                                            input(t, ch), p.d(ch));
    }
  } else if (mode == S4DMode::ScanParallel) {
    const DiscreteS4D disc = discretize(p);
    Tensor a = Tensor::zeros(n, 1, true);
    Tensor b_seq = Tensor::zeros2d(t_len, n, true);
    for (std::size_t ch = 0; ch < h; ++ch) {
      for (std::size_t i = 0; i < n; ++i) a.cx(i) = disc.a_bar.cx(ch, i);
      for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t i = 0; i < n; ++i)
          b_seq.cx(t, i) = disc.b_bar.cx(ch, i) * input(t, ch);
      Tensor xs = linear_scan(a, b_seq, ScanMode::Parallel);
      for (std::size_t t = 0; t < t_len; ++t) {
        cplx acc(0, 0);
        for (std::size_t i = 0; i < n; ++i)
          acc += cplx(p.c_re(ch, i), p.c_im(ch, i)) * xs.cx(t, i);
        y(t, ch) = acc.real() + p.d(ch) * input(t, ch);
      }
    }
  } else {
    const Tensor kernel = materialize_kernel(p, t_len);
    const ConvPath path = (mode == S4DMode::ConvDirect) ? ConvPath::Direct : ConvPath::Fft;
    Tensor series = Tensor::zeros(t_len);
    Tensor krow = Tensor::zeros(t_len);
    for (std::size_t ch = 0; ch < h; ++ch) {
      for (std::size_t t = 0; t < t_len; ++t) series(t) = input(t, ch);
      for (std::size_t k = 0; k < t_len; ++k) krow(k) = kernel(ch, k);
      Tensor conv = causal_conv1d(series, krow, path);
      for (std::size_t t = 0; t < t_len; ++t) y(t, ch) = conv(t) + p.d(ch) * input(t, ch);
    }
  }
  return y;
}

struct S4DParamCount {
  long core = 0;  // a_raw (+ imag for Lin) and c, counted as real scalars
  long d = 0;
  long dt = 0;
  long total() const { return core + d + dt; }
};

inline S4DParamCount param_count(const S4DParams& p) {
  S4DParamCount c;
  c.core = long(p.a_raw_re.numel()) + long(p.a_raw_im.numel()) + long(p.c_re.numel()) +
           long(p.c_im.numel());
  c.d = long(p.d.numel());
  c.dt = long(p.log_dt.numel());
  return c;
}

// ---- tape composition ----

struct S4DLeaves {
  Value a_raw_re, a_raw_im, c_re, c_im, d, log_dt;  // a_raw_im invalid for Real
};

struct S4DTapeNodes {
  Value a_bar, b_bar, c;  // complex [H x N]
  Value d;                // real [H]
};

// Records constrain + ZOH + readout assembly on the tape. Matches the plain
// discretize() path operation for operation.
inline S4DTapeNodes s4d_tape_discretize(Tape& t, const S4DLeaves& leaves, std::size_t n_state) {
  Value a_re = t.neg_exp(leaves.a_raw_re);
  Value a_im = leaves.a_raw_im.valid() ? leaves.a_raw_im
                                       : t.constant(Tensor::zeros(n_state));
  Value dt = t.exp_(leaves.log_dt);
  Value z = t.make_complex(t.outer(dt, a_re), t.outer(dt, a_im));
  S4DTapeNodes out;
  out.a_bar = t.cexp(z);
  out.b_bar = t.crow_scale(t.cphi1(z), dt);
  out.c = t.make_complex(leaves.c_re, leaves.c_im);
  out.d = leaves.d;
  return out;
}

// y = s4d_scan(...) + d ⊙ u over stacked [batch*T x H] rows.
inline Value s4d_tape_forward_scan(Tape& t, const S4DTapeNodes& nodes, Value u,
                                   std::size_t batch) {
  Value y0 = t.s4d_scan(nodes.a_bar, nodes.b_bar, nodes.c, u, batch);
  return t.add(y0, t.channel_scale(u, nodes.d));
}

// Conv-mode forward on the tape: materialized kernel, depthwise convolution,
// d-residual. Gradients flow through the kernel.
inline Value s4d_tape_forward_kernel(Tape& t, const S4DTapeNodes& nodes, Value u,
                                     std::size_t kernel_len, Context context,
                                     std::size_t batch) {
  Value k = t.s4d_kernel(nodes.a_bar, nodes.b_bar, nodes.c, kernel_len);
  Value y0 = t.depthwise(u, k, context, batch);
  return t.add(y0, t.channel_scale(u, nodes.d));
}

}  // namespace s4dkit
