#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "s4dkit/conv.hpp"
#include "s4dkit/tensor.hpp"
#include "s4dkit/zoh_math.hpp"

namespace s4dkit {

namespace detail {

// C (+)= op(A) * op(B) restricted to output rows [i0, i1).
inline void matmul_rows(double* cd, const double* ad, const double* bd, std::size_t kk,
                        std::size_t n, std::size_t lda, std::size_t ldb, bool ta, bool tb,
                        std::size_t i0, std::size_t i1) {
  if (!ta && !tb) {
    for (std::size_t i = i0; i < i1; ++i) {
      double* crow = cd + i * n;
      for (std::size_t p = 0; p < kk; ++p) {
        const double av = ad[i * lda + p];
        const double* brow = bd + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (std::size_t i = i0; i < i1; ++i) {
      const double* arow = ad + i * lda;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = bd + j * ldb;
        double acc = 0.0;
        for (std::size_t p = 0; p < kk; ++p) acc += arow[p] * brow[p];
        cd[i * n + j] += acc;
      }
    }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < kk; ++p) {
      const double* arow = ad + p * lda;
      const double* brow = bd + p * ldb;
      for (std::size_t i = i0; i < i1; ++i) {
        const double av = arow[i];
        double* crow = cd + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = i0; i < i1; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < kk; ++p) acc += ad[p * lda + i] * bd[j * ldb + p];
        cd[i * n + j] += acc;
      }
  }
}

// C (+)= op(A) * op(B); op(A) is [m x kk], op(B) is [kk x n]. Large products are
// split by output row across two threads; each row is produced by exactly one
// thread with an unchanged accumulation order, so the result is bit-identical
// to the single-threaded one.
inline void matmul_into(Tensor& c, const Tensor& a, const Tensor& b, bool ta, bool tb,
                        bool accumulate) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t kk = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (kk != kb) throw std::invalid_argument("matmul: inner dimension mismatch");
  if (!accumulate) {
    c = Tensor::zeros2d(m, n);
  } else if (c.rows() != m || c.cols() != n) {
    throw std::invalid_argument("matmul: bad accumulator shape");
  }
  double* cd = c.data();
  const double* ad = a.data();
  const double* bd = b.data();
  const std::size_t lda = a.cols(), ldb = b.cols();
  const bool split = m >= 64 && double(m) * double(kk) * double(n) >= 4e5;
  if (split) {
    const std::size_t mid = m / 2;
    std::thread half([&] { matmul_rows(cd, ad, bd, kk, n, lda, ldb, ta, tb, 0, mid); });
    matmul_rows(cd, ad, bd, kk, n, lda, ldb, ta, tb, mid, m);
    half.join();
  } else {
    matmul_rows(cd, ad, bd, kk, n, lda, ldb, ta, tb, 0, m);
  }
}

}  // namespace detail

struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over real and complex f64 arrays. Nodes are recorded in
// topological order by construction; backward() walks them in reverse.
// Complex adjoints follow the convention grad(z) = dL/d(Re z) + i dL/d(Im z),
// i.e. re/im are independent real coordinates.
class Tape {
 public:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    std::function<void(Tape&, int)> backward;
    bool is_leaf = false;
  };

  Value leaf(const Tensor& t) {
    Value v = push(t, {}, nullptr);
    nodes_[v.id].is_leaf = true;
    return v;
  }

  Value constant(const Tensor& t) { return push(t, {}, nullptr); }

  const Tensor& value(Value v) const {
    check(v);
    return nodes_[v.id].value;
  }

  // Zero for nodes the output does not depend on.
  const Tensor& grad(Value v) {
    check(v);
    if (grads_.empty()) throw std::invalid_argument("tape: backward() has not run");
    return grad_buf(v.id);
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Value out) {
    check(out);
    const Tensor& ov = nodes_[out.id].value;
    if (ov.numel() != 1 || ov.is_complex())
      throw std::invalid_argument("tape: backward output must be a real scalar");
    grads_.assign(nodes_.size(), Tensor());
    touched_.assign(nodes_.size(), 0);
    grad_buf(out.id)(0) = 1.0;
    for (int i = out.id; i >= 0; --i)
      if (touched_[i] && nodes_[i].backward) nodes_[i].backward(*this, i);
  }

  // ---- real primitives ----

  Value add(Value a, Value b) {
    binary_shape_check(a, b, "add");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.raw().size(); ++i) out.raw()[i] += bv.raw()[i];
    return push(out, {a.id, b.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      t.accum(t.nodes_[self].inputs[0], g);
      t.accum(t.nodes_[self].inputs[1], g);
    });
  }

  Value sub(Value a, Value b) {
    binary_shape_check(a, b, "sub");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.raw().size(); ++i) out.raw()[i] -= bv.raw()[i];
    return push(out, {a.id, b.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      t.accum(t.nodes_[self].inputs[0], g);
      Tensor& gb = t.grad_buf(t.nodes_[self].inputs[1]);
      for (std::size_t i = 0; i < g.raw().size(); ++i) gb.raw()[i] -= g.raw()[i];
    });
  }

  Value mul(Value a, Value b) {
    binary_shape_check(a, b, "mul");
    if (value(a).is_complex()) throw std::invalid_argument("mul: use cmul for complex");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.raw().size(); ++i) out.raw()[i] *= bv.raw()[i];
    return push(out, {a.id, b.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const auto& in = t.nodes_[self].inputs;
      const Tensor& av = t.nodes_[in[0]].value;
      const Tensor& bv2 = t.nodes_[in[1]].value;
      Tensor& ga = t.grad_buf(in[0]);
      Tensor& gb = t.grad_buf(in[1]);
      for (std::size_t i = 0; i < g.raw().size(); ++i) {
        ga.raw()[i] += g.raw()[i] * bv2.raw()[i];
        gb.raw()[i] += g.raw()[i] * av.raw()[i];
      }
    });
  }

  Value scale(Value a, double s) {
    Tensor out = value(a);
    for (auto& v : out.raw()) v *= s;
    return push(out, {a.id}, [s](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      Tensor& ga = t.grad_buf(t.nodes_[self].inputs[0]);
      for (std::size_t i = 0; i < g.raw().size(); ++i) ga.raw()[i] += s * g.raw()[i];
    });
  }

  Value exp_(Value a) { return unary(a, "exp", [](double x) { return std::exp(x); },
                                     [](double, double y) { return y; }); }
  Value neg_exp(Value a) { return unary(a, "neg_exp", [](double x) { return -std::exp(x); },
                                        [](double, double y) { return y; }); }
  Value cos_(Value a) { return unary(a, "cos", [](double x) { return std::cos(x); },
                                     [](double x, double) { return -std::sin(x); }); }
  Value sin_(Value a) { return unary(a, "sin", [](double x) { return std::sin(x); },
                                     [](double x, double) { return std::cos(x); }); }
  Value sigmoid(Value a) {
    return unary(a, "sigmoid", [](double x) { return detail::sigmoid(x); },
                 [](double, double y) { return y * (1.0 - y); });
  }
  Value swish(Value a) {
    return unary(a, "swish", [](double x) { return x * detail::sigmoid(x); },
                 [](double x, double) {
                   const double s = detail::sigmoid(x);
                   return s * (1.0 + x * (1.0 - s));
                 });
  }

  Value matmul(Value a, Value b, bool ta = false, bool tb = false) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.is_complex() || bv.is_complex())
      throw std::invalid_argument("matmul: real matrices expected");
    Tensor out;
    detail::matmul_into(out, av, bv, ta, tb, false);
    return push(out, {a.id, b.id}, [ta, tb](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const auto& in = t.nodes_[self].inputs;
      const Tensor& av2 = t.nodes_[in[0]].value;
      const Tensor& bv2 = t.nodes_[in[1]].value;
      Tensor& ga = t.grad_buf(in[0]);
      Tensor& gb = t.grad_buf(in[1]);
      if (!ta)
        detail::matmul_into(ga, g, bv2, false, !tb, true);
      else
        detail::matmul_into(ga, bv2, g, tb, true, true);
      if (!tb)
        detail::matmul_into(gb, av2, g, !ta, false, true);
      else
        detail::matmul_into(gb, g, av2, true, ta, true);
    });
  }

  // x [R x C] + b [C] broadcast over rows.
  Value bias_add(Value x, Value b) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(b);
    if (bv.numel() != xv.cols()) throw std::invalid_argument("bias_add: width mismatch");
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(c);
    return push(out, {x.id, b.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const auto& in = t.nodes_[self].inputs;
      t.accum(in[0], g);
      Tensor& gb = t.grad_buf(in[1]);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(c) += g(r, c);
    });
  }

  // y[r,c] = x[r,c] * d[c]  (per-channel scale).
  Value channel_scale(Value x, Value d) {
    const Tensor& xv = value(x);
    const Tensor& dv = value(d);
    if (dv.numel() != xv.cols()) throw std::invalid_argument("channel_scale: width mismatch");
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= dv(c);
    return push(out, {x.id, d.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const auto& in = t.nodes_[self].inputs;
      const Tensor& xv2 = t.nodes_[in[0]].value;
      const Tensor& dv2 = t.nodes_[in[1]].value;
      Tensor& gx = t.grad_buf(in[0]);
      Tensor& gd = t.grad_buf(in[1]);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) {
          gx(r, c) += g(r, c) * dv2(c);
          gd(c) += g(r, c) * xv2(r, c);
        }
    });
  }

  // u [m] ⊗ v [n] -> [m x n].
  Value outer(Value u, Value v) {
    const Tensor& uv = value(u);
    const Tensor& vv = value(v);
    Tensor out = Tensor::zeros2d(uv.numel(), vv.numel());
    for (std::size_t i = 0; i < uv.numel(); ++i)
      for (std::size_t j = 0; j < vv.numel(); ++j) out(i, j) = uv(i) * vv(j);
    return push(out, {u.id, v.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const auto& in = t.nodes_[self].inputs;
      const Tensor& uv2 = t.nodes_[in[0]].value;
      const Tensor& vv2 = t.nodes_[in[1]].value;
      Tensor& gu = t.grad_buf(in[0]);
      Tensor& gv = t.grad_buf(in[1]);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
          gu(i) += g(i, j) * vv2(j);
          gv(j) += g(i, j) * uv2(i);
        }
    });
  }

  Value sum(Value a) {
    const Tensor& av = value(a);
    if (av.is_complex()) throw std::invalid_argument("sum: real array expected");
    double s = 0.0;
    for (double v : av.raw()) s += v;
    return push(Tensor::scalar(s), {a.id}, [](Tape& t, int self) {
      const double g = t.grads_[self](0);
      Tensor& ga = t.grad_buf(t.nodes_[self].inputs[0]);
      for (auto& v : ga.raw()) v += g;
    });
  }

  Value slice_cols(Value x, std::size_t c0, std::size_t c1) {
    const Tensor& xv = value(x);
    if (c1 > xv.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    Tensor out = Tensor::zeros2d(xv.rows(), c1 - c0, xv.is_complex());
    copy_block(xv, out, 0, c0, out.rows(), out.cols(), true);
    return push(out, {x.id}, [c0](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      Tensor& gx = t.grad_buf(t.nodes_[self].inputs[0]);
      add_block(g, gx, 0, c0);
    });
  }

  Value slice_rows(Value x, std::size_t r0, std::size_t r1) {
    const Tensor& xv = value(x);
    if (r1 > xv.rows() || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    Tensor out = Tensor::zeros2d(r1 - r0, xv.cols(), xv.is_complex());
    copy_block(xv, out, r0, 0, out.rows(), out.cols(), true);
    return push(out, {x.id}, [r0](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      Tensor& gx = t.grad_buf(t.nodes_[self].inputs[0]);
      add_block(g, gx, r0, 0);
    });
  }

  Value concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    std::size_t rows = 0;
    const std::size_t cols = value(parts[0]).cols();
    for (Value p : parts) {
      if (value(p).cols() != cols) throw std::invalid_argument("concat_rows: width mismatch");
      rows += value(p).rows();
    }
    Tensor out = Tensor::zeros2d(rows, cols, value(parts[0]).is_complex());
    std::vector<int> ids;
    std::size_t r = 0;
    for (Value p : parts) {
      const Tensor& pv = value(p);
      std::copy(pv.raw().begin(), pv.raw().end(),
                out.raw().begin() + r * cols * (out.is_complex() ? 2 : 1));
      r += pv.rows();
      ids.push_back(p.id);
    }
    return push(out, ids, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      std::size_t r0 = 0;
      for (int in : t.nodes_[self].inputs) {
        Tensor& gp = t.grad_buf(in);
        const std::size_t w = gp.cols() * (gp.is_complex() ? 2 : 1);
        for (std::size_t rr = 0; rr < gp.rows(); ++rr)
          for (std::size_t c = 0; c < w; ++c)
            gp.raw()[rr * w + c] += g.raw()[(r0 + rr) * w + c];
        r0 += gp.rows();
      }
    });
  }

  Value layer_norm(Value x, Value gamma, Value beta, double eps = 1e-5) {
    const Tensor& xv = value(x);
    const std::size_t rows = xv.rows(), cols = xv.cols();
    if (value(gamma).numel() != cols || value(beta).numel() != cols)
      throw std::invalid_argument("layer_norm: affine width mismatch");
    Tensor xhat = Tensor::zeros2d(rows, cols);
    Tensor inv_std = Tensor::zeros(rows);
    Tensor out = Tensor::zeros2d(rows, cols);
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean = 0.0;
      for (std::size_t c = 0; c < cols; ++c) mean += xv(r, c);
      mean /= double(cols);
      double var = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = xv(r, c) - mean;
        var += d * d;
      }
      var /= double(cols);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std(r) = is;
      for (std::size_t c = 0; c < cols; ++c) {
        xhat(r, c) = (xv(r, c) - mean) * is;
        out(r, c) = gv(c) * xhat(r, c) + bv(c);
      }
    }
    return push(out, {x.id, gamma.id, beta.id},
                [xhat, inv_std](Tape& t, int self) {
                  const Tensor& g = t.grads_[self];
                  const auto& in = t.nodes_[self].inputs;
                  const Tensor& gv2 = t.nodes_[in[1]].value;
                  Tensor& gx = t.grad_buf(in[0]);
                  Tensor& gg = t.grad_buf(in[1]);
                  Tensor& gb = t.grad_buf(in[2]);
                  const std::size_t rows = g.rows(), cols = g.cols();
                  for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                      const double gh = g(r, c) * gv2(c);
                      m1 += gh;
                      m2 += gh * xhat(r, c);
                      gg(c) += g(r, c) * xhat(r, c);
                      gb(c) += g(r, c);
                    }
                    m1 /= double(cols);
                    m2 /= double(cols);
                    for (std::size_t c = 0; c < cols; ++c) {
                      const double gh = g(r, c) * gv2(c);
                      gx(r, c) += (gh - m1 - xhat(r, c) * m2) * inv_std(r);
                    }
                  }
                });
  }

  // Batch norm over all rows (batch x time stacked) per column. Training-mode
  // statistics; optionally updates running buffers at forward time.
  Value batch_norm_train(Value x, Value gamma, Value beta, Tensor* run_mean, Tensor* run_var,
                         double momentum = 0.99, double eps = 1e-5) {
    const Tensor& xv = value(x);
    const std::size_t rows = xv.rows(), cols = xv.cols();
    if (rows == 0) throw std::invalid_argument("batch_norm: empty batch");
    if (value(gamma).numel() != cols || value(beta).numel() != cols)
      throw std::invalid_argument("batch_norm: affine width mismatch");
    Tensor xhat = Tensor::zeros2d(rows, cols);
    Tensor inv_std = Tensor::zeros(cols);
    Tensor out = Tensor::zeros2d(rows, cols);
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    for (std::size_t c = 0; c < cols; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < rows; ++r) mean += xv(r, c);
      mean /= double(rows);
      double var = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = xv(r, c) - mean;
        var += d * d;
      }
      var /= double(rows);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std(c) = is;
      for (std::size_t r = 0; r < rows; ++r) {
        xhat(r, c) = (xv(r, c) - mean) * is;
        out(r, c) = gv(c) * xhat(r, c) + bv(c);
      }
      if (run_mean) {
        (*run_mean)(c) = momentum * (*run_mean)(c) + (1.0 - momentum) * mean;
        (*run_var)(c) = momentum * (*run_var)(c) + (1.0 - momentum) * var;
      }
    }
    return push(out, {x.id, gamma.id, beta.id},
                [xhat, inv_std](Tape& t, int self) {
                  const Tensor& g = t.grads_[self];
                  const auto& in = t.nodes_[self].inputs;
                  const Tensor& gv2 = t.nodes_[in[1]].value;
                  Tensor& gx = t.grad_buf(in[0]);
                  Tensor& gg = t.grad_buf(in[1]);
                  Tensor& gb = t.grad_buf(in[2]);
                  const std::size_t rows = g.rows(), cols = g.cols();
                  for (std::size_t c = 0; c < cols; ++c) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double gh = g(r, c) * gv2(c);
                      m1 += gh;
                      m2 += gh * xhat(r, c);
                      gg(c) += g(r, c) * xhat(r, c);
                      gb(c) += g(r, c);
                    }
                    m1 /= double(rows);
                    m2 /= double(rows);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double gh = g(r, c) * gv2(c);
                      gx(r, c) += (gh - m1 - xhat(r, c) * m2) * inv_std(c);
                    }
                  }
                });
  }

  // Split channels into (a, b) halves; out = a ⊙ sigmoid(b).
  Value glu(Value x) {
    const Tensor& xv = value(x);
    if (xv.cols() % 2 != 0) throw std::invalid_argument("glu: odd channel count");
    const std::size_t rows = xv.rows(), h = xv.cols() / 2;
    Tensor sig = Tensor::zeros2d(rows, h);
    Tensor out = Tensor::zeros2d(rows, h);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < h; ++c) {
        sig(r, c) = detail::sigmoid(xv(r, c + h));
        out(r, c) = xv(r, c) * sig(r, c);
      }
    return push(out, {x.id}, [sig](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const Tensor& xv2 = t.nodes_[t.nodes_[self].inputs[0]].value;
      Tensor& gx = t.grad_buf(t.nodes_[self].inputs[0]);
      const std::size_t rows = g.rows(), h = g.cols();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < h; ++c) {
          gx(r, c) += g(r, c) * sig(r, c);
          gx(r, c + h) += g(r, c) * xv2(r, c) * sig(r, c) * (1.0 - sig(r, c));
        }
    });
  }

  // Depthwise convolution of x [batch*T x H] with kernels [H x k].
  Value depthwise(Value x, Value kernels, Context context, std::size_t batch = 1) {
    const Tensor& xv = value(x);
    const Tensor& kv = value(kernels);
    Tensor out = depthwise_conv(xv, kv, context, batch);
    return push(out, {x.id, kernels.id}, [context, batch](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const auto& in = t.nodes_[self].inputs;
      const Tensor& xv2 = t.nodes_[in[0]].value;
      const Tensor& kv2 = t.nodes_[in[1]].value;
      Tensor& gx = t.grad_buf(in[0]);
      Tensor& gk = t.grad_buf(in[1]);
      const std::size_t h = xv2.cols(), k = kv2.cols();
      const std::size_t t_len = xv2.rows() / batch;
      const std::ptrdiff_t rshift = (context == Context::Online) ? 0 : std::ptrdiff_t((k - 1) / 2);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * t_len;
        for (std::size_t c = 0; c < h; ++c)
          for (std::size_t tt = 0; tt < t_len; ++tt) {
            const double gv = g(base + tt, c);
            if (gv == 0.0) continue;
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t s = std::ptrdiff_t(tt) + rshift - std::ptrdiff_t(j);
              if (s >= 0 && s < std::ptrdiff_t(t_len)) {
                gx(base + s, c) += gv * kv2(c, j);
                gk(c, j) += gv * xv2(base + s, c);
              }
            }
          }
      }
    });
  }

  // Row-wise softmax; causal=true masks columns j > i.
  Value softmax_rows(Value x, bool causal) {
    const Tensor& xv = value(x);
    const std::size_t rows = xv.rows(), cols = xv.cols();
    Tensor out = Tensor::zeros2d(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t lim = causal ? std::min(r + 1, cols) : cols;
      double mx = -1e300;
      for (std::size_t c = 0; c < lim; ++c) mx = std::max(mx, xv(r, c));
      double z = 0.0;
      for (std::size_t c = 0; c < lim; ++c) z += std::exp(xv(r, c) - mx);
      for (std::size_t c = 0; c < lim; ++c) out(r, c) = std::exp(xv(r, c) - mx) / z;
    }
    return push(out, {x.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const Tensor& y = t.nodes_[self].value;
      Tensor& gx = t.grad_buf(t.nodes_[self].inputs[0]);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
        for (std::size_t c = 0; c < g.cols(); ++c)
          gx(r, c) += y(r, c) * (g(r, c) - dot);
      }
    });
  }

  // Mean cross-entropy over rows whose label != ignore_label; optionally reports
  // argmax accuracy over the same rows.
  Value softmax_xent(Value logits, const std::vector<int>& labels, int ignore_label = -1,
                     double* accuracy_out = nullptr) {
    const Tensor& lv = value(logits);
    const std::size_t rows = lv.rows(), cols = lv.cols();
    if (labels.size() != rows) throw std::invalid_argument("softmax_xent: label count mismatch");
    Tensor probs = Tensor::zeros2d(rows, cols);
    double loss = 0.0;
    std::size_t valid = 0, correct = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (labels[r] == ignore_label) continue;
      double mx = lv(r, 0);
      std::size_t arg = 0;
      for (std::size_t c = 1; c < cols; ++c)
        if (lv(r, c) > mx) {
          mx = lv(r, c);
          arg = c;
        }
      double z = 0.0;
      for (std::size_t c = 0; c < cols; ++c) z += std::exp(lv(r, c) - mx);
      for (std::size_t c = 0; c < cols; ++c) probs(r, c) = std::exp(lv(r, c) - mx) / z;
      loss -= std::log(std::max(probs(r, std::size_t(labels[r])), 1e-300));
      ++valid;
      if (arg == std::size_t(labels[r])) ++correct;
    }
    if (valid == 0) throw std::invalid_argument("softmax_xent: no supervised rows");
    loss /= double(valid);
    if (accuracy_out) *accuracy_out = double(correct) / double(valid);
    return push(Tensor::scalar(loss), {logits.id},
                [probs, labels, ignore_label, valid](Tape& t, int self) {
                  const double g = t.grads_[self](0);
                  Tensor& gl = t.grad_buf(t.nodes_[self].inputs[0]);
                  const double inv = g / double(valid);
                  for (std::size_t r = 0; r < gl.rows(); ++r) {
                    if (labels[r] == ignore_label) continue;
                    for (std::size_t c = 0; c < gl.cols(); ++c)
                      gl(r, c) += inv * probs(r, c);
                    gl(r, std::size_t(labels[r])) -= inv;
                  }
                });
  }

  // ---- complex primitives ----

  Value make_complex(Value re, Value im) {
    binary_shape_check(re, im, "make_complex");
    const Tensor& rv = value(re);
    const Tensor& iv = value(im);
    if (rv.is_complex()) throw std::invalid_argument("make_complex: real parts expected");
    Tensor out = Tensor::zeros2d(rv.rows(), rv.cols(), true);
    out.set_rank(rv.rank());
    for (std::size_t i = 0; i < rv.numel(); ++i) out.cx(i) = cplx(rv(i), iv(i));
    return push(out, {re.id, im.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const auto& in = t.nodes_[self].inputs;
      Tensor& gr = t.grad_buf(in[0]);
      Tensor& gi = t.grad_buf(in[1]);
      for (std::size_t i = 0; i < gr.numel(); ++i) {
        gr(i) += g.cx(i).real();
        gi(i) += g.cx(i).imag();
      }
    });
  }

  Value creal(Value z) {
    const Tensor& zv = value(z);
    Tensor out = Tensor::zeros2d(zv.rows(), zv.cols());
    out.set_rank(zv.rank());
    for (std::size_t i = 0; i < zv.numel(); ++i) out(i) = zv.cx(i).real();
    return push(out, {z.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      Tensor& gz = t.grad_buf(t.nodes_[self].inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) gz.cx(i) += cplx(g(i), 0.0);
    });
  }

  Value cadd(Value a, Value b) {
    binary_shape_check(a, b, "cadd");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out.cx(i) += bv.cx(i);
    return push(out, {a.id, b.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      t.accum(t.nodes_[self].inputs[0], g);
      t.accum(t.nodes_[self].inputs[1], g);
    });
  }

  Value cmul(Value a, Value b) {
    binary_shape_check(a, b, "cmul");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out.cx(i) *= bv.cx(i);
    return push(out, {a.id, b.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const auto& in = t.nodes_[self].inputs;
      const Tensor& av = t.nodes_[in[0]].value;
      const Tensor& bv2 = t.nodes_[in[1]].value;
      Tensor& ga = t.grad_buf(in[0]);
      Tensor& gb = t.grad_buf(in[1]);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga.cx(i) += std::conj(bv2.cx(i)) * g.cx(i);
        gb.cx(i) += std::conj(av.cx(i)) * g.cx(i);
      }
    });
  }

  Value cexp(Value z) {
    const Tensor& zv = value(z);
    Tensor out = zv;
    for (std::size_t i = 0; i < out.numel(); ++i) out.cx(i) = std::exp(zv.cx(i));
    return push(out, {z.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const Tensor& y = t.nodes_[self].value;
      Tensor& gz = t.grad_buf(t.nodes_[self].inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i)
        gz.cx(i) += std::conj(y.cx(i)) * g.cx(i);
    });
  }

  // phi1(z) = (e^z - 1)/z with the small-argument Taylor branch.
  Value cphi1(Value z) {
    const Tensor& zv = value(z);
    Tensor out = zv;
    for (std::size_t i = 0; i < out.numel(); ++i) out.cx(i) = detail::phi1(zv.cx(i));
    return push(out, {z.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const Tensor& zv2 = t.nodes_[t.nodes_[self].inputs[0]].value;
      Tensor& gz = t.grad_buf(t.nodes_[self].inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i)
        gz.cx(i) += std::conj(detail::phi1_deriv(zv2.cx(i))) * g.cx(i);
    });
  }

  // z [R x C] complex scaled per row by real r [R].
  Value crow_scale(Value z, Value r) {
    const Tensor& zv = value(z);
    const Tensor& rv = value(r);
    if (rv.numel() != zv.rows()) throw std::invalid_argument("crow_scale: height mismatch");
    Tensor out = zv;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out.cx(i, j) *= rv(i);
    return push(out, {z.id, r.id}, [](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const auto& in = t.nodes_[self].inputs;
      const Tensor& zv2 = t.nodes_[in[0]].value;
      const Tensor& rv2 = t.nodes_[in[1]].value;
      Tensor& gz = t.grad_buf(in[0]);
      Tensor& gr = t.grad_buf(in[1]);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
          gz.cx(i, j) += rv2(i) * g.cx(i, j);
          gr(i) += (std::conj(zv2.cx(i, j)) * g.cx(i, j)).real();
        }
    });
  }

  // ---- fused S4D primitives ----

  // Runs x_t = a_bar ⊙ x_{t-1} + b_bar u_t per channel and emits the complex
  // readout's real part: y[t,h] = Re(sum_n c[h,n] x_t[h,n]). u is [batch*T x H];
  // a_bar, b_bar, c are complex [H x N]. Batch blocks evolve independently.
  Value s4d_scan(Value a_bar, Value b_bar, Value c, Value u, std::size_t batch = 1) {
    const Tensor& av = value(a_bar);
    const Tensor& bv = value(b_bar);
    const Tensor& cv = value(c);
    const Tensor& uv = value(u);
    const std::size_t h = av.rows(), n = av.cols();
    if (!av.same_shape(bv) || !av.same_shape(cv))
      throw std::invalid_argument("s4d_scan: parameter shape mismatch");
    if (uv.cols() != h) throw std::invalid_argument("s4d_scan: channel mismatch");
    if (uv.rows() % batch != 0) throw std::invalid_argument("s4d_scan: bad batch");
    const std::size_t t_len = uv.rows() / batch;
    Tensor out = Tensor::zeros2d(uv.rows(), h);
    // states[(((b*T)+t)*H + h)*N + n], kept for the backward pass
    auto states = std::make_shared<std::vector<cplx>>(uv.rows() * h * n);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t ch = 0; ch < h; ++ch) {
        const cplx* ab = av.cdata() + ch * n;
        const cplx* bb = bv.cdata() + ch * n;
        const cplx* cc = cv.cdata() + ch * n;
        std::vector<cplx> x(n, cplx(0, 0));
        for (std::size_t tt = 0; tt < t_len; ++tt) {
          const std::size_t row = b * t_len + tt;
          const double ut = uv(row, ch);
          cplx acc(0, 0);
          cplx* xs = states->data() + (row * h + ch) * n;
          for (std::size_t i = 0; i < n; ++i) {
            x[i] = ab[i] * x[i] + bb[i] * ut;
            xs[i] = x[i];
            acc += cc[i] * x[i];
          }
          out(row, ch) = acc.real();
        }
      }
    return push(out, {a_bar.id, b_bar.id, c.id, u.id},
                [states, batch](Tape& t, int self) {
                  const Tensor& g = t.grads_[self];
                  const auto& in = t.nodes_[self].inputs;
                  const Tensor& av2 = t.nodes_[in[0]].value;
                  const Tensor& bv2 = t.nodes_[in[1]].value;
                  const Tensor& cv2 = t.nodes_[in[2]].value;
                  const Tensor& uv2 = t.nodes_[in[3]].value;
                  Tensor& ga = t.grad_buf(in[0]);
                  Tensor& gb = t.grad_buf(in[1]);
                  Tensor& gc = t.grad_buf(in[2]);
                  Tensor& gu = t.grad_buf(in[3]);
                  const std::size_t h = av2.rows(), n = av2.cols();
                  const std::size_t t_len = uv2.rows() / batch;
                  std::vector<cplx> lam(n);
                  for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t ch = 0; ch < h; ++ch) {
                      const cplx* ab = av2.cdata() + ch * n;
                      const cplx* bb = bv2.cdata() + ch * n;
                      const cplx* cc = cv2.cdata() + ch * n;
                      std::fill(lam.begin(), lam.end(), cplx(0, 0));
                      for (std::size_t tt = t_len; tt-- > 0;) {
                        const std::size_t row = b * t_len + tt;
                        const double gy = g(row, ch);
                        const double ut = uv2(row, ch);
                        const cplx* xt = states->data() + (row * h + ch) * n;
                        const cplx* xp =
                            (tt > 0) ? states->data() + ((row - 1) * h + ch) * n : nullptr;
                        double gut = 0.0;
                        for (std::size_t i = 0; i < n; ++i) {
                          lam[i] += std::conj(cc[i]) * gy;
                          gc.cx(ch, i) += gy * std::conj(xt[i]);
                          if (xp) ga.cx(ch, i) += std::conj(xp[i]) * lam[i];
                          gb.cx(ch, i) += ut * lam[i];
                          gut += (std::conj(bb[i]) * lam[i]).real();
                          lam[i] = std::conj(ab[i]) * lam[i];
                        }
                        gu(row, ch) += gut;
                      }
                    }
                });
  }

  // K[h,k] = Re(sum_n c[h,n] b_bar[h,n] a_bar[h,n]^k), k = 0..L-1, via running powers.
  Value s4d_kernel(Value a_bar, Value b_bar, Value c, std::size_t kernel_len) {
    const Tensor& av = value(a_bar);
    const Tensor& bv = value(b_bar);
    const Tensor& cv = value(c);
    if (kernel_len == 0) throw std::invalid_argument("s4d_kernel: zero length");
    if (!av.same_shape(bv) || !av.same_shape(cv))
      throw std::invalid_argument("s4d_kernel: parameter shape mismatch");
    const std::size_t h = av.rows(), n = av.cols();
    Tensor out = Tensor::zeros2d(h, kernel_len);
    std::vector<cplx> p(n);
    for (std::size_t ch = 0; ch < h; ++ch) {
      for (std::size_t i = 0; i < n; ++i) p[i] = cv.cx(ch, i) * bv.cx(ch, i);
      for (std::size_t k = 0; k < kernel_len; ++k) {
        cplx acc(0, 0);
        for (std::size_t i = 0; i < n; ++i) acc += p[i];
        out(ch, k) = acc.real();
        if (k + 1 < kernel_len)
          for (std::size_t i = 0; i < n; ++i) p[i] *= av.cx(ch, i);
      }
    }
    return push(out, {a_bar.id, b_bar.id, c.id}, [kernel_len](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const auto& in = t.nodes_[self].inputs;
      const Tensor& av2 = t.nodes_[in[0]].value;
      const Tensor& bv2 = t.nodes_[in[1]].value;
      const Tensor& cv2 = t.nodes_[in[2]].value;
      Tensor& ga = t.grad_buf(in[0]);
      Tensor& gb = t.grad_buf(in[1]);
      Tensor& gc = t.grad_buf(in[2]);
      const std::size_t h = av2.rows(), n = av2.cols();
      for (std::size_t ch = 0; ch < h; ++ch)
        for (std::size_t i = 0; i < n; ++i) {
          const cplx a = av2.cx(ch, i);
          const cplx w = cv2.cx(ch, i) * bv2.cx(ch, i);
          // S = sum_k g_k a^k,  Sd = sum_k k g_k a^(k-1)
          cplx s(0, 0), sd(0, 0), pk(1, 0), pk1(1, 0);
          for (std::size_t k = 0; k < kernel_len; ++k) {
            const double gk = g(ch, k);
            s += gk * pk;
            if (k >= 1) {
              sd += double(k) * gk * pk1;
              pk1 *= a;
            }
            pk *= a;
          }
          const cplx gw = std::conj(s);
          ga.cx(ch, i) += std::conj(w * sd);
          gb.cx(ch, i) += std::conj(cv2.cx(ch, i)) * gw;
          gc.cx(ch, i) += std::conj(bv2.cx(ch, i)) * gw;
        }
    });
  }

  Tensor& grad_buf(int id) {
    Tensor& g = grads_[id];
    if (g.empty() && nodes_[id].value.numel() > 0) {
      const Tensor& v = nodes_[id].value;
      g = Tensor::zeros2d(v.rows(), v.cols(), v.is_complex());
      g.set_rank(v.rank());
    }
    touched_[id] = 1;
    return g;
  }

 private:
  void check(Value v) const {
    if (!v.valid() || std::size_t(v.id) >= nodes_.size())
      throw std::invalid_argument("tape: value not on this tape");
  }

  Value push(Tensor value, std::vector<int> inputs, std::function<void(Tape&, int)> bw) {
    for (int in : inputs)
      if (in < 0 || std::size_t(in) >= nodes_.size())
        throw std::invalid_argument("tape: operand not on this tape");
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(bw), false});
    return Value{int(nodes_.size()) - 1};
  }

  void binary_shape_check(Value a, Value b, const char* op) {
    if (!value(a).same_shape(value(b)))
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }

  void accum(int id, const Tensor& g) {
    Tensor& dst = grad_buf(id);
    for (std::size_t i = 0; i < g.raw().size(); ++i) dst.raw()[i] += g.raw()[i];
  }

  template <typename F, typename DF>
  Value unary(Value a, const char* name, F f, DF df) {
    const Tensor& av = value(a);
    if (av.is_complex()) throw std::invalid_argument(std::string(name) + ": real array expected");
    Tensor out = av;
    for (auto& v : out.raw()) v = f(v);
    return push(out, {a.id}, [df](Tape& t, int self) {
      const Tensor& g = t.grads_[self];
      const Tensor& x = t.nodes_[t.nodes_[self].inputs[0]].value;
      const Tensor& y = t.nodes_[self].value;
      Tensor& gx = t.grad_buf(t.nodes_[self].inputs[0]);
      for (std::size_t i = 0; i < g.raw().size(); ++i)
        gx.raw()[i] += g.raw()[i] * df(x.raw()[i], y.raw()[i]);
    });
  }

  static void copy_block(const Tensor& src, Tensor& dst, std::size_t r0, std::size_t c0,
                         std::size_t rows, std::size_t cols, bool src_is_big) {
    const std::size_t k = src.is_complex() ? 2 : 1;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols * k; ++c) {
        if (src_is_big)
          dst.raw()[r * cols * k + c] = src.raw()[(r + r0) * src.cols() * k + c0 * k + c];
        else
          dst.raw()[(r + r0) * dst.cols() * k + c0 * k + c] = src.raw()[r * cols * k + c];
      }
  }

  static void add_block(const Tensor& g, Tensor& dst, std::size_t r0, std::size_t c0) {
    const std::size_t k = g.is_complex() ? 2 : 1;
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols() * k; ++c)
        dst.raw()[(r + r0) * dst.cols() * k + c0 * k + c] += g.raw()[r * g.cols() * k + c];
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> touched_;
};

}  // namespace s4dkit
