#pragma once

#include <stdexcept>
#include <vector>

#include "s4dkit/tensor.hpp"

namespace s4dkit {

enum class ScanMode { Sequential, Parallel };

namespace detail {

// Element of the scan monoid for x_k = a*x_{k-1} + b_k.
// (a1,b1)∘(a2,b2) = (a1*a2, a2*b1 + b2); identity (1,0).
struct ScanPair {
  cplx a, b;
};

inline ScanPair combine(const ScanPair& l, const ScanPair& r) {
  return {l.a * r.a, r.a * l.b + r.b};
}

// Blelloch up/down sweep over a power-of-two padded array, fixed combine order.
inline void blelloch_inclusive(std::vector<ScanPair>& e) {
  const std::size_t t_len = e.size();
  const std::size_t p = next_pow2(t_len);
  std::vector<ScanPair> w(p, ScanPair{cplx(1, 0), cplx(0, 0)});
  for (std::size_t i = 0; i < t_len; ++i) w[i] = e[i];
  for (std::size_t d = 1; d < p; d <<= 1)
    for (std::size_t i = 2 * d - 1; i < p; i += 2 * d) w[i] = combine(w[i - d], w[i]);
  w[p - 1] = ScanPair{cplx(1, 0), cplx(0, 0)};
  for (std::size_t d = p >> 1; d >= 1; d >>= 1) {
    for (std::size_t i = 2 * d - 1; i < p; i += 2 * d) {
      ScanPair left = w[i - d];
      w[i - d] = w[i];
      w[i] = combine(w[i], left);
    }
  }
  // w now holds the exclusive scan; fold the original elements back in.
  for (std::size_t i = 0; i < t_len; ++i) e[i] = combine(w[i], e[i]);
}

}  // namespace detail

// Elementwise linear recurrence x_k = a ⊙ x_{k-1} + b_k with x_0 = 0, over N
// independent lanes. a is complex [N], b_seq complex [T x N]; returns all x_k.
inline Tensor linear_scan(const Tensor& a, const Tensor& b_seq,
                          ScanMode mode = ScanMode::Sequential) {
  if (!a.is_complex() || !b_seq.is_complex())
    throw std::invalid_argument("linear_scan: complex arrays expected");
  const std::size_t n = a.numel(), t_len = b_seq.rows();
  if (b_seq.cols() != n) throw std::invalid_argument("linear_scan: shape mismatch");
  Tensor x = Tensor::zeros2d(t_len, n, true);
  if (mode == ScanMode::Sequential) {
    std::vector<cplx> state(n, cplx(0, 0));
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        state[i] = a.cx(i) * state[i] + b_seq.cx(t, i);
        x.cx(t, i) = state[i];
      }
  } else {
    std::vector<detail::ScanPair> lane(t_len);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < t_len; ++t) lane[t] = {a.cx(i), b_seq.cx(t, i)};
      detail::blelloch_inclusive(lane);
      for (std::size_t t = 0; t < t_len; ++t) x.cx(t, i) = lane[t].b;
    }
  }
  return x;
}

}  // namespace s4dkit
