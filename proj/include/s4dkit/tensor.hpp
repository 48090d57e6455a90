#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "s4dkit/common.hpp"

namespace s4dkit {

// Dense row-major array of f64, rank 1 or 2, real or complex.
// Complex data is stored interleaved (re, im) and aliased as std::complex<double>.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols = 1, bool complex_valued = false) {
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.rank_ = (cols == 1) ? 1 : 2;
    t.complex_ = complex_valued;
    t.buf_.assign(rows * cols * (complex_valued ? 2 : 1), 0.0);
    return t;
  }

  static Tensor zeros2d(std::size_t rows, std::size_t cols, bool complex_valued = false) {
    Tensor t = zeros(rows, cols, complex_valued);
    t.rank_ = 2;
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t = zeros(1, 1);
    t.buf_[0] = v;
    return t;
  }

  static Tensor full(std::size_t rows, std::size_t cols, double v) {
    Tensor t = zeros(rows, cols);
    std::fill(t.buf_.begin(), t.buf_.end(), v);
    return t;
  }

  static Tensor randn(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
    Tensor t = zeros(rows, cols);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.buf_) v = dist(rng);
    return t;
  }

  static Tensor rand_uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    Tensor t = zeros(rows, cols);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.buf_) v = dist(rng);
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t numel() const { return rows_ * cols_; }
  int rank() const { return rank_; }
  void set_rank(int r) { rank_ = r; }
  bool is_complex() const { return complex_; }
  bool empty() const { return buf_.empty(); }

  double* data() { return buf_.data(); }
  const double* data() const { return buf_.data(); }
  std::vector<double>& raw() { return buf_; }
  const std::vector<double>& raw() const { return buf_; }

  cplx* cdata() { return reinterpret_cast<cplx*>(buf_.data()); }
  const cplx* cdata() const { return reinterpret_cast<const cplx*>(buf_.data()); }

  double& operator()(std::size_t i) { return buf_[i]; }
  double operator()(std::size_t i) const { return buf_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return buf_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return buf_[r * cols_ + c]; }

  cplx& cx(std::size_t i) { return cdata()[i]; }
  cplx cx(std::size_t i) const { return cdata()[i]; }
  cplx& cx(std::size_t r, std::size_t c) { return cdata()[r * cols_ + c]; }
  cplx cx(std::size_t r, std::size_t c) const { return cdata()[r * cols_ + c]; }

  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && complex_ == o.complex_;
  }

  void fill(double v) { std::fill(buf_.begin(), buf_.end(), v); }

  bool all_finite() const {
    for (double v : buf_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : buf_) m = std::max(m, std::abs(v));
    return m;
  }

  bool bits_equal(const Tensor& o) const {
    return same_shape(o) &&
           std::memcmp(buf_.data(), o.buf_.data(), buf_.size() * sizeof(double)) == 0;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  int rank_ = 1;
  bool complex_ = false;
  std::vector<double> buf_;
};

// Largest elementwise |a-b|.
inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.raw().size(); ++i)
    m = std::max(m, std::abs(a.raw()[i] - b.raw()[i]));
  return m;
}

// Largest |a-b| normalized by the largest magnitude seen in either array.
inline double max_rel_diff(const Tensor& a, const Tensor& b) {
  double scale = std::max({a.max_abs(), b.max_abs(), 1e-300});
  return max_abs_diff(a, b) / scale;
}

}  // namespace s4dkit
