#include <catch2/catch_amalgamated.hpp>

#include "s4dkit/conv.hpp"
#include "s4dkit/scan.hpp"

using namespace s4dkit;

namespace {

Tensor make_vec(std::initializer_list<double> xs) {
  Tensor t = Tensor::zeros(xs.size());
  std::size_t i = 0;
  for (double v : xs) t(i++) = v;
  return t;
}

Tensor brute_causal_conv(const Tensor& x, const Tensor& k) {
  Tensor y = Tensor::zeros(x.numel());
  for (std::size_t t = 0; t < x.numel(); ++t)
    for (std::size_t j = 0; j < k.numel(); ++j)
      if (t >= j) y(t) += k(j) * x(t - j);
  return y;
}

}  // namespace

TEST_CASE("complex field behavior") {
  Rng rng(11);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 200; ++i) {
    cplx z(u(rng), u(rng));
    // |e^z| = e^Re(z)
    REQUIRE(std::abs(std::exp(z)) ==
            Catch::Approx(std::exp(z.real())).epsilon(1e-12));
    cplx a(u(rng), u(rng)), b(u(rng), u(rng));
    REQUIRE(std::abs(a * b - b * a) < 1e-12);
    if (std::abs(b) > 1e-3) REQUIRE(std::abs((a / b) * b - a) < 1e-10 * std::abs(a));
  }
  // larger arguments, |z| up to 50
  for (int i = 0; i < 200; ++i) {
    std::uniform_real_distribution<double> big(-35.0, 35.0);
    cplx z(big(rng), big(rng));
    if (std::abs(z) > 50.0) continue;
    REQUIRE(std::abs(std::exp(z)) ==
            Catch::Approx(std::exp(z.real())).epsilon(1e-12));
  }
}

TEST_CASE("causal_conv1d identity kernel") {
  Tensor y = causal_conv1d(make_vec({1, 2, 3}), make_vec({1}));
  REQUIRE(y(0) == 1.0);
  REQUIRE(y(1) == 2.0);
  REQUIRE(y(2) == 3.0);
}

TEST_CASE("causal_conv1d two-tap hand expansion") {
  // kernel [2,1]: 2*1; 2*2+1*1; 2*3+1*2
  Tensor y = causal_conv1d(make_vec({1, 2, 3}), make_vec({2, 1}));
  REQUIRE(y(0) == 2.0);
  REQUIRE(y(1) == 5.0);
  REQUIRE(y(2) == 8.0);
}

TEST_CASE("causal_conv1d fft path equals direct path, T=257 L=33") {
  Rng rng(3);
  Tensor x = Tensor::rand_uniform(257, 1, rng);
  Tensor k = Tensor::rand_uniform(33, 1, rng);
  Tensor d = causal_conv1d(x, k, ConvPath::Direct);
  Tensor f = causal_conv1d(x, k, ConvPath::Fft);
  REQUIRE(max_abs_diff(d, f) < 1e-10);
  REQUIRE(max_abs_diff(d, brute_causal_conv(x, k)) < 1e-12);
}

TEST_CASE("causal_conv1d path equivalence across sizes") {
  Rng rng(17);
  for (std::size_t t_len : {1, 2, 3, 16, 100, 257, 1024, 4096}) {
    for (std::size_t l : {std::size_t(1), std::size_t(2), (t_len + 1) / 2, t_len}) {
      if (l == 0 || l > t_len) continue;
      Tensor x = Tensor::rand_uniform(t_len, 1, rng);
      Tensor k = Tensor::rand_uniform(l, 1, rng);
      Tensor d = causal_conv1d(x, k, ConvPath::Direct);
      Tensor f = causal_conv1d(x, k, ConvPath::Fft);
      INFO("T=" << t_len << " L=" << l);
      REQUIRE(max_abs_diff(d, f) < 1e-10);
    }
  }
}

TEST_CASE("causal_conv1d rejects empty arguments") {
  REQUIRE_THROWS_AS(causal_conv1d(Tensor(), make_vec({1})), std::invalid_argument);
  REQUIRE_THROWS_AS(causal_conv1d(make_vec({1}), Tensor()), std::invalid_argument);
}

TEST_CASE("causal_conv1d is deterministic") {
  Rng rng(5);
  Tensor x = Tensor::rand_uniform(313, 1, rng);
  Tensor k = Tensor::rand_uniform(40, 1, rng);
  REQUIRE(causal_conv1d(x, k, ConvPath::Fft).bits_equal(causal_conv1d(x, k, ConvPath::Fft)));
  REQUIRE(
      causal_conv1d(x, k, ConvPath::Direct).bits_equal(causal_conv1d(x, k, ConvPath::Direct)));
}

TEST_CASE("linear_scan a=1 gives prefix sums") {
  Tensor a = Tensor::zeros(1, 1, true);
  a.cx(0) = cplx(1, 0);
  Tensor b = Tensor::zeros2d(4, 1, true);
  for (int t = 0; t < 4; ++t) b.cx(t, 0) = cplx(1, 0);
  for (ScanMode mode : {ScanMode::Sequential, ScanMode::Parallel}) {
    Tensor x = linear_scan(a, b, mode);
    for (int t = 0; t < 4; ++t) REQUIRE(x.cx(t, 0) == cplx(double(t + 1), 0.0));
  }
}

TEST_CASE("linear_scan a=0 is memoryless") {
  Rng rng(4);
  Tensor a = Tensor::zeros(3, 1, true);
  Tensor b = Tensor::zeros2d(9, 3, true);
  for (std::size_t i = 0; i < b.numel(); ++i)
    b.cx(i) = cplx(std::uniform_real_distribution<>(-1, 1)(rng),
                   std::uniform_real_distribution<>(-1, 1)(rng));
  Tensor x = linear_scan(a, b, ScanMode::Parallel);
  for (std::size_t i = 0; i < b.numel(); ++i) REQUIRE(x.cx(i) == b.cx(i));
}

TEST_CASE("linear_scan parallel equals sequential, T=1024") {
  Rng rng(29);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t n = 6, t_len = 1024;
  Tensor a = Tensor::zeros(n, 1, true);
  for (std::size_t i = 0; i < n; ++i) {
    cplx z(u(rng), u(rng));
    a.cx(i) = z / std::max(1.0, std::abs(z) * 1.01);  // |a| < 1
  }
  Tensor b = Tensor::zeros2d(t_len, n, true);
  for (std::size_t i = 0; i < b.numel(); ++i) b.cx(i) = cplx(u(rng), u(rng));
  Tensor xs = linear_scan(a, b, ScanMode::Sequential);
  Tensor xp = linear_scan(a, b, ScanMode::Parallel);
  double scale = std::max(xs.max_abs(), 1e-300);
  REQUIRE(max_abs_diff(xs, xp) / scale < 1e-9);
}

TEST_CASE("linear_scan odd lengths and length one") {
  Rng rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t t_len : {1, 2, 3, 5, 17, 100, 333}) {
    Tensor a = Tensor::zeros(2, 1, true);
    a.cx(0) = cplx(0.3, 0.6);
    a.cx(1) = cplx(-0.8, 0.1);
    Tensor b = Tensor::zeros2d(t_len, 2, true);
    for (std::size_t i = 0; i < b.numel(); ++i) b.cx(i) = cplx(u(rng), u(rng));
    Tensor xs = linear_scan(a, b, ScanMode::Sequential);
    Tensor xp = linear_scan(a, b, ScanMode::Parallel);
    REQUIRE(max_rel_diff(xs, xp) < 1e-9);
  }
}

TEST_CASE("linear_scan rejects shape mismatch") {
  Tensor a = Tensor::zeros(3, 1, true);
  Tensor b = Tensor::zeros2d(5, 2, true);
  REQUIRE_THROWS_AS(linear_scan(a, b), std::invalid_argument);
}
