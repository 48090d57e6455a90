#pragma once

#include <optional>
#include <string>
#include <vector>

#include "s4dkit/conv_module.hpp"

namespace s4dkit {

struct EncoderDims {
  std::size_t ffn_mult = 2;  // hidden width of the feed-forward sublayer, in units of h
};

struct AttentionWeights {
  Tensor ln_g, ln_b;      // [H]
  Tensor wq, wk, wv, wo;  // [H x H]
};

// One encoder block: feed-forward half-residual -> optional causal single-head
// attention -> convolution module -> layer norm.
struct EncoderBlock {
  Tensor ffn_ln_g, ffn_ln_b;  // [H]
  Tensor ffn_w1, ffn_b1;      // [H x mH], [mH]
  Tensor ffn_w2, ffn_b2;      // [mH x H], [H]
  std::optional<AttentionWeights> attn;
  ConvModule conv;
  Tensor out_ln_g, out_ln_b;  // [H]
};

struct Encoder {
  std::vector<EncoderBlock> blocks;
  std::size_t h = 0;
  std::size_t ffn_mult = 2;
  Context context = Context::Online;
  bool with_attention = false;
};

inline Encoder build_encoder(const std::vector<ConvModuleSpec>& specs, bool with_attention,
                             const EncoderDims& dims, std::uint64_t seed) {
  if (specs.empty()) throw std::invalid_argument("model.blocks: need at least one block");
  const std::size_t h = specs[0].h;
  const Context ctx = specs[0].context;
  for (const auto& s : specs) {
    validate(s);
    if (s.h != h) throw std::invalid_argument("model.h: inconsistent widths across blocks");
    if (s.context != ctx)
      throw std::invalid_argument("model.context: inconsistent context across blocks");
  }
  Encoder enc;
  enc.h = h;
  enc.ffn_mult = dims.ffn_mult;
  enc.context = ctx;
  enc.with_attention = with_attention;
  const std::size_t mh = dims.ffn_mult * h;
  for (std::size_t bi = 0; bi < specs.size(); ++bi) {
    Rng rng(split_seed(seed, 0x100 + bi));
    EncoderBlock b;
    b.ffn_ln_g = Tensor::full(h, 1, 1.0);
    b.ffn_ln_b = Tensor::zeros(h);
    b.ffn_w1 = Tensor::randn(h, mh, rng, 1.0 / std::sqrt(double(h)));
    b.ffn_b1 = Tensor::zeros(mh);
    b.ffn_w2 = Tensor::randn(mh, h, rng, 1.0 / std::sqrt(double(mh)));
    b.ffn_b2 = Tensor::zeros(h);
    if (with_attention) {
      AttentionWeights a;
      a.ln_g = Tensor::full(h, 1, 1.0);
      a.ln_b = Tensor::zeros(h);
      const double s = 1.0 / std::sqrt(double(h));
      a.wq = Tensor::randn(h, h, rng, s);
      a.wk = Tensor::randn(h, h, rng, s);
      a.wv = Tensor::randn(h, h, rng, s);
      a.wo = Tensor::randn(h, h, rng, s);
      b.attn = std::move(a);
    }
    b.conv = init_conv_module(specs[bi], split_seed(seed, 0x200 + bi));
    b.out_ln_g = Tensor::full(h, 1, 1.0);
    b.out_ln_b = Tensor::zeros(h);
    enc.blocks.push_back(std::move(b));
  }
  return enc;
}

// Task model: pointwise input projection, encoder, pointwise readout.
struct Model {
  std::size_t input_dim = 0, output_dim = 0;
  Tensor in_w, in_b;
  Encoder enc;
  Tensor out_w, out_b;
};

inline Model make_model(std::size_t input_dim, std::size_t output_dim, Encoder enc,
                        std::uint64_t seed) {
  Model m;
  m.input_dim = input_dim;
  m.output_dim = output_dim;
  Rng rng(split_seed(seed, 0x300));
  m.in_w = Tensor::randn(input_dim, enc.h, rng, 1.0 / std::sqrt(double(input_dim)));
  m.in_b = Tensor::zeros(enc.h);
  m.out_w = Tensor::randn(enc.h, output_dim, rng, 1.0 / std::sqrt(double(enc.h)));
  m.out_b = Tensor::zeros(output_dim);
  m.enc = std::move(enc);
  return m;
}

// ---- named parameter registry ----

struct ParamRef {
  std::string name;
  Tensor* tensor;
  bool trainable;
};

inline void registry_module(ConvModule& m, const std::string& prefix,
                            std::vector<ParamRef>& out) {
  out.push_back({prefix + ".ln_g", &m.ln_g, true});
  out.push_back({prefix + ".ln_b", &m.ln_b, true});
  out.push_back({prefix + ".glu_w", &m.glu_w, true});
  out.push_back({prefix + ".glu_b", &m.glu_b, true});
  if (m.conv_kernels.numel() > 0)
    out.push_back({prefix + ".conv_kernels", &m.conv_kernels, true});
  if (m.s4) {
    out.push_back({prefix + ".s4.a_raw_re", &m.s4->a_raw_re, true});
    if (m.s4->scheme == Scheme::Lin)
      out.push_back({prefix + ".s4.a_raw_im", &m.s4->a_raw_im, true});
    out.push_back({prefix + ".s4.c_re", &m.s4->c_re, true});
    out.push_back({prefix + ".s4.c_im", &m.s4->c_im, true});
    out.push_back({prefix + ".s4.d", &m.s4->d, true});
    out.push_back({prefix + ".s4.log_dt", &m.s4->log_dt, true});
  }
  out.push_back({prefix + ".bn_g", &m.bn_g, true});
  out.push_back({prefix + ".bn_b", &m.bn_b, true});
  out.push_back({prefix + ".bn_rm", &m.bn_rm, false});
  out.push_back({prefix + ".bn_rv", &m.bn_rv, false});
  out.push_back({prefix + ".post_w", &m.post_w, true});
  out.push_back({prefix + ".post_b", &m.post_b, true});
}

inline std::vector<ParamRef> registry(Encoder& enc) {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < enc.blocks.size(); ++i) {
    EncoderBlock& b = enc.blocks[i];
    const std::string p = "blocks[" + std::to_string(i) + "]";
    out.push_back({p + ".ffn_ln_g", &b.ffn_ln_g, true});
    out.push_back({p + ".ffn_ln_b", &b.ffn_ln_b, true});
    out.push_back({p + ".ffn_w1", &b.ffn_w1, true});
    out.push_back({p + ".ffn_b1", &b.ffn_b1, true});
    out.push_back({p + ".ffn_w2", &b.ffn_w2, true});
    out.push_back({p + ".ffn_b2", &b.ffn_b2, true});
    if (b.attn) {
      out.push_back({p + ".attn.ln_g", &b.attn->ln_g, true});
      out.push_back({p + ".attn.ln_b", &b.attn->ln_b, true});
      out.push_back({p + ".attn.wq", &b.attn->wq, true});
      out.push_back({p + ".attn.wk", &b.attn->wk, true});
      out.push_back({p + ".attn.wv", &b.attn->wv, true});
      out.push_back({p + ".attn.wo", &b.attn->wo, true});
    }
    registry_module(b.conv, p + ".conv", out);
    out.push_back({p + ".out_ln_g", &b.out_ln_g, true});
    out.push_back({p + ".out_ln_b", &b.out_ln_b, true});
  }
  return out;
}

inline std::vector<ParamRef> registry(Model& m) {
  std::vector<ParamRef> out;
  out.push_back({"in_w", &m.in_w, true});
  out.push_back({"in_b", &m.in_b, true});
  auto enc = registry(m.enc);
  out.insert(out.end(), enc.begin(), enc.end());
  out.push_back({"out_w", &m.out_w, true});
  out.push_back({"out_b", &m.out_b, true});
  return out;
}

inline long trainable_count(std::vector<ParamRef> refs) {
  long n = 0;
  for (const auto& r : refs)
    if (r.trainable) n += long(r.tensor->numel());
  return n;
}

// ---- plain eval forward (frozen statistics, single example) ----

namespace detail {

// Soft-max attention of queries q (global positions offset..offset+tq-1) over
// keys/values 0..k.rows()-1. Online context restricts row i to keys <= its
// global position. Shared by the eval forward and the streaming runtime.
S4DKIT_NOINLINE inline Tensor attend_queries(const Tensor& q, const Tensor& k, const Tensor& v,
                                             std::size_t offset, Context ctx) {
  const std::size_t tq = q.rows(), tk = k.rows(), h = q.cols();
  const double scale = 1.0 / std::sqrt(double(h));
  Tensor ctxv = Tensor::zeros2d(tq, h);
  std::vector<double> row(tk);
  for (std::size_t i = 0; i < tq; ++i) {
    const std::size_t lim = (ctx == Context::Online) ? std::min(offset + i + 1, tk) : tk;
    double mx = -1e300;
    for (std::size_t j = 0; j < lim; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < h; ++c) s += q(i, c) * k(j, c);
      row[j] = s * scale;
      mx = std::max(mx, row[j]);
    }
    double zsum = 0.0;
    for (std::size_t j = 0; j < lim; ++j) {
      row[j] = std::exp(row[j] - mx);
      zsum += row[j];
    }
    for (std::size_t j = 0; j < lim; ++j) {
      const double w = row[j] / zsum;
      for (std::size_t c = 0; c < h; ++c) ctxv(i, c) += w * v(j, c);
    }
  }
  return ctxv;
}

inline Tensor attention_eval(const AttentionWeights& a, const Tensor& x, Context ctx) {
  Tensor z = layer_norm_rows(x, a.ln_g, a.ln_b);
  Tensor q, k, v;
  matmul_into(q, z, a.wq, false, false, false);
  matmul_into(k, z, a.wk, false, false, false);
  matmul_into(v, z, a.wv, false, false, false);
  Tensor ctxv = attend_queries(q, k, v, 0, ctx);
  Tensor out;
  matmul_into(out, ctxv, a.wo, false, false, false);
  return out;
}

}  // namespace detail

inline Tensor block_forward_eval(EncoderBlock& b, const Tensor& x) {
  Tensor z = detail::layer_norm_rows(x, b.ffn_ln_g, b.ffn_ln_b);
  z = detail::affine(z, b.ffn_w1, b.ffn_b1);
  detail::swish_inplace(z);
  z = detail::affine(z, b.ffn_w2, b.ffn_b2);
  Tensor x1 = x;
  for (std::size_t i = 0; i < x1.raw().size(); ++i) x1.raw()[i] += 0.5 * z.raw()[i];
  if (b.attn) {
    Tensor att = detail::attention_eval(*b.attn, x1, b.conv.spec.context);
    for (std::size_t i = 0; i < x1.raw().size(); ++i) x1.raw()[i] += att.raw()[i];
  }
  Tensor x2 = module_forward(b.conv, x1, /*training=*/false);
  return detail::layer_norm_rows(x2, b.out_ln_g, b.out_ln_b);
}

inline Tensor encoder_forward_eval(Encoder& enc, const Tensor& x) {
  if (x.cols() != enc.h) throw std::invalid_argument("encoder_forward: width mismatch");
  Tensor z = x;
  for (auto& b : enc.blocks) z = block_forward_eval(b, z);
  return z;
}

inline Tensor model_forward_eval(Model& m, const Tensor& x) {
  Tensor z = detail::affine(x, m.in_w, m.in_b);
  z = encoder_forward_eval(m.enc, z);
  return detail::affine(z, m.out_w, m.out_b);
}

// Training-mode forward without a tape: batch statistics, running-stat updates.
// Mirrors model_forward_tape; x is [batch*T x input_dim].
inline Tensor model_forward_train_plain(Model& m, const Tensor& x, std::size_t batch) {
  Tensor z = detail::affine(x, m.in_w, m.in_b);
  const std::size_t t_len = z.rows() / batch;
  for (auto& b : m.enc.blocks) {
    Tensor f = detail::layer_norm_rows(z, b.ffn_ln_g, b.ffn_ln_b);
    f = detail::affine(f, b.ffn_w1, b.ffn_b1);
    detail::swish_inplace(f);
    f = detail::affine(f, b.ffn_w2, b.ffn_b2);
    for (std::size_t i = 0; i < z.raw().size(); ++i) z.raw()[i] += 0.5 * f.raw()[i];
    if (b.attn) {
      for (std::size_t e = 0; e < batch; ++e) {
        Tensor xe = Tensor::zeros2d(t_len, z.cols());
        std::copy(z.raw().begin() + e * t_len * z.cols(),
                  z.raw().begin() + (e + 1) * t_len * z.cols(), xe.raw().begin());
        Tensor att = detail::attention_eval(*b.attn, xe, b.conv.spec.context);
        for (std::size_t i = 0; i < att.raw().size(); ++i)
          z.raw()[e * t_len * z.cols() + i] += att.raw()[i];
      }
    }
    z = module_forward(b.conv, z, /*training=*/true, batch);
    z = detail::layer_norm_rows(z, b.out_ln_g, b.out_ln_b);
  }
  return detail::affine(z, m.out_w, m.out_b);
}

// ---- tape forward (training path) ----

struct ForwardOpts {
  std::size_t batch = 1;  // rows are [batch * T x dim] stacked blocks
  bool update_stats = true;
};

// Binds every trainable tensor as a leaf, in registry order. leaves[i] is
// invalid for non-trainable entries (running statistics).
struct BoundParams {
  std::vector<ParamRef> refs;
  std::vector<Value> leaves;
};

inline BoundParams bind_params(Tape& t, Model& m) {
  BoundParams bp;
  bp.refs = registry(m);
  bp.leaves.resize(bp.refs.size());
  for (std::size_t i = 0; i < bp.refs.size(); ++i)
    if (bp.refs[i].trainable) bp.leaves[i] = t.leaf(*bp.refs[i].tensor);
  return bp;
}

namespace detail {

struct LeafCursor {
  const BoundParams* bp;
  std::size_t next = 0;
  // Consumes the next trainable leaf, which must carry the expected suffix.
  Value take(const std::string& suffix) {
    while (next < bp->refs.size()) {
      const std::size_t i = next++;
      const auto& r = bp->refs[i];
      if (!r.trainable) continue;
      if (r.name.size() >= suffix.size() &&
          r.name.compare(r.name.size() - suffix.size(), suffix.size(), suffix) == 0)
        return bp->leaves[i];
      throw std::logic_error("leaf cursor: expected " + suffix + ", found " + r.name);
    }
    throw std::logic_error("leaf cursor: missing " + suffix);
  }
};

inline Value module_forward_tape(Tape& t, ConvModule& m, LeafCursor& cur, Value x,
                                 const ForwardOpts& opts) {
  Value ln_g = cur.take(".ln_g");
  Value ln_b = cur.take(".ln_b");
  Value glu_w = cur.take(".glu_w");
  Value glu_b = cur.take(".glu_b");
  Value kernels;
  if (m.conv_kernels.numel() > 0) kernels = cur.take(".conv_kernels");
  S4DTapeNodes s4nodes;
  if (m.s4) {
    S4DLeaves lv;
    lv.a_raw_re = cur.take(".s4.a_raw_re");
    if (m.s4->scheme == Scheme::Lin) lv.a_raw_im = cur.take(".s4.a_raw_im");
    lv.c_re = cur.take(".s4.c_re");
    lv.c_im = cur.take(".s4.c_im");
    lv.d = cur.take(".s4.d");
    lv.log_dt = cur.take(".s4.log_dt");
    s4nodes = s4d_tape_discretize(t, lv, m.s4->n_state);
  }
  Value bn_g = cur.take(".bn_g");
  Value bn_b = cur.take(".bn_b");
  Value post_w = cur.take(".post_w");
  Value post_b = cur.take(".post_b");

  Value z = t.layer_norm(x, ln_g, ln_b);
  z = t.bias_add(t.matmul(z, glu_w), glu_b);
  z = t.glu(z);
  switch (m.spec.approach) {
    case Approach::Baseline:
      z = t.depthwise(z, kernels, m.spec.context, opts.batch);
      break;
    case Approach::DIR:
      z = s4d_tape_forward_scan(t, s4nodes, z, opts.batch);
      break;
    case Approach::COM:
      z = t.depthwise(z, kernels, m.spec.context, opts.batch);
      z = s4d_tape_forward_scan(t, s4nodes, z, opts.batch);
      break;
    default:
      z = s4d_tape_forward_kernel(t, s4nodes, z, m.spec.rep_left_context, m.spec.context,
                                  opts.batch);
      break;
  }
  z = t.batch_norm_train(z, bn_g, bn_b, opts.update_stats ? &m.bn_rm : nullptr,
                         opts.update_stats ? &m.bn_rv : nullptr);
  z = t.swish(z);
  z = t.bias_add(t.matmul(z, post_w), post_b);
  return t.add(x, z);
}

inline Value attention_tape(Tape& t, LeafCursor& cur, Value x, Context ctx,
                            const ForwardOpts& opts) {
  Value ln_g = cur.take(".attn.ln_g");
  Value ln_b = cur.take(".attn.ln_b");
  Value wq = cur.take(".attn.wq");
  Value wk = cur.take(".attn.wk");
  Value wv = cur.take(".attn.wv");
  Value wo = cur.take(".attn.wo");
  Value z = t.layer_norm(x, ln_g, ln_b);
  Value q = t.matmul(z, wq);
  Value k = t.matmul(z, wk);
  Value v = t.matmul(z, wv);
  const std::size_t rows = t.value(x).rows();
  const std::size_t h = t.value(x).cols();
  const std::size_t t_len = rows / opts.batch;
  const double sc = 1.0 / std::sqrt(double(h));
  std::vector<Value> parts;
  for (std::size_t b = 0; b < opts.batch; ++b) {
    Value qe = (opts.batch == 1) ? q : t.slice_rows(q, b * t_len, (b + 1) * t_len);
    Value ke = (opts.batch == 1) ? k : t.slice_rows(k, b * t_len, (b + 1) * t_len);
    Value ve = (opts.batch == 1) ? v : t.slice_rows(v, b * t_len, (b + 1) * t_len);
    Value scores = t.scale(t.matmul(qe, ke, false, true), sc);
    Value probs = t.softmax_rows(scores, ctx == Context::Online);
    parts.push_back(t.matmul(probs, ve));
  }
  Value ctxv = (parts.size() == 1) ? parts[0] : t.concat_rows(parts);
  return t.matmul(ctxv, wo);
}

}  // namespace detail

// Training-mode forward over stacked rows [batch*T x input_dim]; returns logits.
inline Value model_forward_tape(Tape& t, Model& m, const BoundParams& bp, Value input,
                                const ForwardOpts& opts) {
  detail::LeafCursor cur{&bp, 0};
  Value in_w = cur.take("in_w");
  Value in_b = cur.take("in_b");
  Value z = t.bias_add(t.matmul(input, in_w), in_b);
  for (auto& b : m.enc.blocks) {
    Value ffn_ln_g = cur.take(".ffn_ln_g");
    Value ffn_ln_b = cur.take(".ffn_ln_b");
    Value w1 = cur.take(".ffn_w1");
    Value b1 = cur.take(".ffn_b1");
    Value w2 = cur.take(".ffn_w2");
    Value b2 = cur.take(".ffn_b2");
    Value f = t.layer_norm(z, ffn_ln_g, ffn_ln_b);
    f = t.swish(t.bias_add(t.matmul(f, w1), b1));
    f = t.bias_add(t.matmul(f, w2), b2);
    z = t.add(z, t.scale(f, 0.5));
    if (b.attn) z = t.add(z, detail::attention_tape(t, cur, z, b.conv.spec.context, opts));
    z = detail::module_forward_tape(t, b.conv, cur, z, opts);
    Value og = cur.take(".out_ln_g");
    Value ob = cur.take(".out_ln_b");
    z = t.layer_norm(z, og, ob);
  }
  Value out_w = cur.take("out_w");
  Value out_b = cur.take("out_b");
  return t.bias_add(t.matmul(z, out_w), out_b);
}

}  // namespace s4dkit
