#pragma once

#include "s4dkit/encoder.hpp"

namespace s4dkit {

// Carried state for one encoder block during chunked online inference.
struct BlockStream {
  Tensor s4_state;      // complex [H x N], DIR and COM
  DiscreteS4D s4_disc;  // frozen discretization, DIR and COM
  Tensor conv_tail;     // last min(frames seen, kernel_len-1) core input rows
  std::size_t conv_kernel_len = 0;
  Tensor rep_kernel;    // cached [H x L], REP
  Tensor attn_k, attn_v;  // all past keys/values [t x H]
};

struct StreamState {
  std::vector<BlockStream> blocks;
  std::uint64_t fingerprint = 0;
  std::size_t frames_seen = 0;
};

namespace detail {

inline std::uint64_t encoder_fingerprint(Encoder& enc) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& r : registry(enc))
    h = fnv1a64(r.tensor->raw().data(), r.tensor->raw().size() * sizeof(double), h);
  return h;
}

inline Tensor vcat(const Tensor& a, const Tensor& b) {
  if (a.numel() == 0) return b;
  Tensor out = Tensor::zeros2d(a.rows() + b.rows(), b.cols());
  std::copy(a.raw().begin(), a.raw().end(), out.raw().begin());
  std::copy(b.raw().begin(), b.raw().end(), out.raw().begin() + a.raw().size());
  return out;
}

inline Tensor last_rows(const Tensor& x, std::size_t n) {
  const std::size_t keep = std::min(n, x.rows());
  Tensor out = Tensor::zeros2d(keep, x.cols());
  std::copy(x.raw().end() - keep * x.cols(), x.raw().end(), out.raw().begin());
  return out;
}

}  // namespace detail

// Zeroed S4 states, empty tails and caches, REP kernels materialized once.
inline StreamState open_stream(Encoder& enc) {
  if (enc.context != Context::Online)
    throw std::invalid_argument("open_stream: encoder must be built for the online context");
  StreamState st;
  st.fingerprint = detail::encoder_fingerprint(enc);
  for (auto& b : enc.blocks) {
    BlockStream bs;
    const Approach a = b.conv.spec.approach;
    if (a == Approach::DIR || a == Approach::COM) {
      bs.s4_state = Tensor::zeros2d(b.conv.s4->n_channels, b.conv.s4->n_state, true);
      bs.s4_disc = discretize(*b.conv.s4);
    }
    if (a == Approach::Baseline || a == Approach::COM)
      bs.conv_kernel_len = b.conv.spec.kernel_size;
    if (a == Approach::REP) {
      bs.conv_kernel_len = b.conv.spec.rep_left_context;
      bs.rep_kernel = rep_effective_kernel(*b.conv.s4, b.conv.spec.rep_left_context);
    }
    bs.conv_tail = Tensor::zeros2d(0, b.conv.spec.h);
    st.blocks.push_back(std::move(bs));
  }
  return st;
}

namespace detail {

// Stateful depthwise convolution: run on [tail; chunk], emit the chunk rows,
// keep the new tail. Window contents and summation order match the
// full-sequence depthwise_conv call exactly.
inline Tensor stream_conv(BlockStream& bs, const Tensor& z, const Tensor& kernels) {
  Tensor ext = vcat(bs.conv_tail, z);
  Tensor conv = depthwise_conv(ext, kernels, Context::Online);
  Tensor out = last_rows(conv, z.rows());
  if (bs.conv_kernel_len > 0) bs.conv_tail = last_rows(ext, bs.conv_kernel_len - 1);
  return out;
}

// Continues the S4 recurrence over the chunk with the carried state, using the
// same per-channel step kernel as the full-sequence forward.
inline Tensor stream_s4(BlockStream& bs, const S4DParams& p, const Tensor& z) {
  const std::size_t h = p.n_channels, n = p.n_state;
  Tensor out = Tensor::zeros2d(z.rows(), h);
  std::vector<cplx> c(n);
  for (std::size_t ch = 0; ch < h; ++ch) {
    for (std::size_t i = 0; i < n; ++i) c[i] = cplx(p.c_re(ch, i), p.c_im(ch, i));
    cplx* x = bs.s4_state.cdata() + ch * n;
    for (std::size_t t = 0; t < z.rows(); ++t)
      out(t, ch) = s4d_step_channel(bs.s4_disc.a_bar.cdata() + ch * n,
                                    bs.s4_disc.b_bar.cdata() + ch * n, c.data(), n, x,
                                    z(t, ch), p.d(ch));
  }
  return out;
}

}  // namespace detail

// Processes one chunk of t frames; output matches the corresponding slice of the
// full-sequence eval-mode forward over everything seen so far.
inline Tensor process_chunk(Encoder& enc, StreamState& st, const Tensor& chunk) {
  if (chunk.rows() == 0 || chunk.cols() != enc.h)
    throw std::invalid_argument("process_chunk: bad chunk shape");
  if (st.blocks.size() != enc.blocks.size() ||
      st.fingerprint != detail::encoder_fingerprint(enc))
    throw stale_state_error("process_chunk: encoder changed since the stream was opened");
  Tensor x = chunk;
  for (std::size_t bi = 0; bi < enc.blocks.size(); ++bi) {
    EncoderBlock& b = enc.blocks[bi];
    BlockStream& bs = st.blocks[bi];
    // feed-forward half-residual
    Tensor f = detail::layer_norm_rows(x, b.ffn_ln_g, b.ffn_ln_b);
    f = detail::affine(f, b.ffn_w1, b.ffn_b1);
    detail::swish_inplace(f);
    f = detail::affine(f, b.ffn_w2, b.ffn_b2);
    for (std::size_t i = 0; i < x.raw().size(); ++i) x.raw()[i] += 0.5 * f.raw()[i];
    // attention over the full cached left context
    if (b.attn) {
      Tensor zl = detail::layer_norm_rows(x, b.attn->ln_g, b.attn->ln_b);
      Tensor q, k, v;
      detail::matmul_into(q, zl, b.attn->wq, false, false, false);
      detail::matmul_into(k, zl, b.attn->wk, false, false, false);
      detail::matmul_into(v, zl, b.attn->wv, false, false, false);
      bs.attn_k = detail::vcat(bs.attn_k, k);
      bs.attn_v = detail::vcat(bs.attn_v, v);
      Tensor ctxv =
          detail::attend_queries(q, bs.attn_k, bs.attn_v, st.frames_seen, Context::Online);
      Tensor att;
      detail::matmul_into(att, ctxv, b.attn->wo, false, false, false);
      for (std::size_t i = 0; i < x.raw().size(); ++i) x.raw()[i] += att.raw()[i];
    }
    // convolution module with carried core state
    Tensor z = detail::layer_norm_rows(x, b.conv.ln_g, b.conv.ln_b);
    z = detail::affine(z, b.conv.glu_w, b.conv.glu_b);
    z = glu(z);
    switch (b.conv.spec.approach) {
      case Approach::Baseline:
        z = detail::stream_conv(bs, z, b.conv.conv_kernels);
        break;
      case Approach::DIR:
        z = detail::stream_s4(bs, *b.conv.s4, z);
        break;
      case Approach::COM:
        z = detail::stream_conv(bs, z, b.conv.conv_kernels);
        z = detail::stream_s4(bs, *b.conv.s4, z);
        break;
      default:
        z = detail::stream_conv(bs, z, bs.rep_kernel);
        break;
    }
    detail::bn_eval_inplace(z, b.conv.bn_g, b.conv.bn_b, b.conv.bn_rm, b.conv.bn_rv);
    detail::swish_inplace(z);
    z = detail::affine(z, b.conv.post_w, b.conv.post_b);
    for (std::size_t i = 0; i < x.raw().size(); ++i) x.raw()[i] += z.raw()[i];
    x = detail::layer_norm_rows(x, b.out_ln_g, b.out_ln_b);
  }
  st.frames_seen += chunk.rows();
  return x;
}

// Model-level wrapper: pointwise input/readout projections around the encoder stream.
struct ModelStream {
  StreamState enc_state;
};

inline ModelStream open_model_stream(Model& m) { return ModelStream{open_stream(m.enc)}; }

inline Tensor process_model_chunk(Model& m, ModelStream& ms, const Tensor& chunk) {
  Tensor z = detail::affine(chunk, m.in_w, m.in_b);
  z = process_chunk(m.enc, ms.enc_state, z);
  return detail::affine(z, m.out_w, m.out_b);
}

}  // namespace s4dkit
