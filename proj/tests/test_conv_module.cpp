#include <catch2/catch_amalgamated.hpp>

#include "s4dkit/encoder.hpp"

using namespace s4dkit;

namespace {

ConvModuleSpec spec_of(Approach a, std::size_t h, Context ctx = Context::Online,
                       std::size_t n = 4) {
  ConvModuleSpec s;
  s.approach = a;
  s.h = h;
  s.kernel_size = 4;
  s.context = ctx;
  if (a != Approach::Baseline) s.s4d = S4DConfig{Scheme::Lin, n};
  if (a == Approach::REP) s.rep_left_context = 16;
  return s;
}

Tensor standardized_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor x = Tensor::randn(rows, cols, rng);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += x(r, c);
    mean /= double(cols);
    for (std::size_t c = 0; c < cols; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= double(cols);
    for (std::size_t c = 0; c < cols; ++c) x(r, c) = (x(r, c) - mean) / std::sqrt(var);
  }
  return x;
}

const std::vector<Approach> kAllApproaches = {Approach::Baseline, Approach::DIR, Approach::COM,
                                              Approach::REP};

}  // namespace

TEST_CASE("glu gating limits") {
  Rng rng(1);
  Tensor x = Tensor::zeros2d(5, 8);
  // b = 0 -> a/2
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) x(r, c) = std::normal_distribution<>(0, 1)(rng);
  Tensor y = glu(x);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) REQUIRE(y(r, c) == Catch::Approx(x(r, c) / 2.0));
  // a = 0 -> 0
  Tensor z = Tensor::randn(3, 6, rng);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) z(r, c) = 0.0;
  REQUIRE(glu(z).max_abs() == 0.0);
  // saturated gate -> a
  Tensor w = Tensor::randn(4, 4, rng);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 2; c < 4; ++c) w(r, c) = 50.0;
  Tensor g = glu(w);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      REQUIRE(std::abs(g(r, c) - w(r, c)) <= 1e-12 * std::abs(w(r, c)));
  REQUIRE_THROWS_AS(glu(Tensor::zeros2d(3, 5)), std::invalid_argument);
}

TEST_CASE("depthwise k=1 scales each channel") {
  Rng rng(2);
  Tensor x = Tensor::randn(10, 3, rng);
  Tensor k = Tensor::randn(3, 1, rng);
  Tensor y = depthwise_conv(x, k, Context::Online);
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t c = 0; c < 3; ++c) REQUIRE(y(t, c) == k(c, 0) * x(t, c));
}

TEST_CASE("depthwise online two-tap matches the scalar expansion") {
  Tensor x = Tensor::zeros2d(3, 1);
  x(0, 0) = 1;
  x(1, 0) = 2;
  x(2, 0) = 3;
  Tensor k = Tensor::zeros2d(1, 2);
  k(0, 0) = 2;
  k(0, 1) = 1;
  Tensor y = depthwise_conv(x, k, Context::Online);
  REQUIRE(y(0, 0) == 2.0);
  REQUIRE(y(1, 0) == 5.0);
  REQUIRE(y(2, 0) == 8.0);
}

TEST_CASE("depthwise offline sees the future, online does not") {
  Rng rng(3);
  const std::size_t t_len = 64, t0 = 30;
  Tensor x1 = Tensor::randn(t_len, 2, rng);
  Tensor x2 = x1;
  for (std::size_t t = t0; t < t_len; ++t) x2(t, 0) += 3.0;
  Tensor k = Tensor::randn(2, 32, rng);
  Tensor on1 = depthwise_conv(x1, k, Context::Online);
  Tensor on2 = depthwise_conv(x2, k, Context::Online);
  for (std::size_t t = 0; t < t0; ++t)
    for (std::size_t c = 0; c < 2; ++c) REQUIRE(on1(t, c) == on2(t, c));
  Tensor off1 = depthwise_conv(x1, k, Context::Offline);
  Tensor off2 = depthwise_conv(x2, k, Context::Offline);
  bool past_changed = false;
  for (std::size_t t = 0; t < t0; ++t)
    if (off1(t, 0) != off2(t, 0)) past_changed = true;
  REQUIRE(past_changed);
}

TEST_CASE("depthwise offline padding split is ceil-left floor-even") {
  // k=2, offline: left pad 0... ceil(1/2)=1 left, floor(1/2)=0 right
  Tensor x = Tensor::zeros2d(3, 1);
  x(0, 0) = 1;
  x(1, 0) = 2;
  x(2, 0) = 3;
  Tensor k = Tensor::zeros2d(1, 2);
  k(0, 0) = 5;
  k(0, 1) = 7;
  // wait: rshift = (k-1)/2 = 0 for k=2 -> same as online
  Tensor y = depthwise_conv(x, k, Context::Offline);
  REQUIRE(y(0, 0) == 5.0 * 1);
  REQUIRE(y(1, 0) == 5.0 * 2 + 7.0 * 1);
  // k=3: rshift 1 -> window [t-1, t, t+1]
  Tensor k3 = Tensor::zeros2d(1, 3);
  k3(0, 0) = 1;
  k3(0, 1) = 10;
  k3(0, 2) = 100;
  Tensor y3 = depthwise_conv(x, k3, Context::Offline);
  REQUIRE(y3(0, 0) == 1.0 * 2 + 10.0 * 1);           // x[1]*k0 + x[0]*k1
  REQUIRE(y3(1, 0) == 1.0 * 3 + 10.0 * 2 + 100.0 * 1);
  REQUIRE(y3(2, 0) == 10.0 * 3 + 100.0 * 2);
}

TEST_CASE("module validation rejects bad specs") {
  ConvModuleSpec s = spec_of(Approach::Baseline, 8);
  s.s4d = S4DConfig{};  // baseline must not carry an S4
  REQUIRE_THROWS_AS(validate(s), std::invalid_argument);
  ConvModuleSpec d = spec_of(Approach::DIR, 8);
  d.s4d.reset();
  REQUIRE_THROWS_AS(validate(d), std::invalid_argument);
  ConvModuleSpec r = spec_of(Approach::REP, 8);
  r.rep_left_context = 0;
  REQUIRE_THROWS_AS(validate(r), std::invalid_argument);
  ConvModuleSpec c = spec_of(Approach::COM, 8);
  c.kernel_size = 0;
  REQUIRE_THROWS_AS(validate(c), std::invalid_argument);
}

TEST_CASE("zeroed post projection makes every variant the identity") {
  Rng rng(4);
  Tensor x = Tensor::randn(24, 8, rng);
  for (Approach a : kAllApproaches) {
    ConvModule m = init_conv_module(spec_of(a, 8), 11);
    m.post_w.fill(0.0);
    m.post_b.fill(0.0);
    for (bool training : {false, true}) {
      Tensor y = module_forward(m, x, training);
      INFO(approach_name(a) << " training=" << training);
      REQUIRE(max_abs_diff(x, y) == 0.0);
    }
  }
}

TEST_CASE("REP with kernel covering the sequence reproduces DIR") {
  const std::size_t t_len = 48;
  ConvModule dir = init_conv_module(spec_of(Approach::DIR, 6), 21);
  ConvModule rep = dir;
  rep.spec.approach = Approach::REP;
  rep.spec.rep_left_context = t_len;  // L >= T
  Rng rng(5);
  Tensor x = Tensor::randn(t_len, 6, rng);
  Tensor yd = module_forward(dir, x, false);
  Tensor yr = module_forward(rep, x, false);
  REQUIRE(max_rel_diff(yd, yr) < 1e-8);
}

TEST_CASE("COM with a delta pre-convolution equals DIR exactly") {
  ConvModule dir = init_conv_module(spec_of(Approach::DIR, 5), 33);
  ConvModule com = dir;
  com.spec.approach = Approach::COM;
  com.spec.kernel_size = 3;
  com.conv_kernels = Tensor::zeros2d(5, 3);
  for (std::size_t c = 0; c < 5; ++c) com.conv_kernels(c, 0) = 1.0;
  Rng rng(6);
  Tensor x = Tensor::randn(40, 5, rng);
  Tensor yd = module_forward(dir, x, false);
  Tensor yc = module_forward(com, x, false);
  REQUIRE(yd.bits_equal(yc));
}

TEST_CASE("baseline loaded with REP's materialized kernel equals REP exactly") {
  ConvModuleSpec rs = spec_of(Approach::REP, 4);
  rs.rep_left_context = 12;
  ConvModule rep = init_conv_module(rs, 44);
  ConvModule base = rep;
  base.spec.approach = Approach::Baseline;
  base.spec.s4d.reset();
  base.spec.kernel_size = 12;
  base.s4.reset();
  base.conv_kernels = rep_effective_kernel(*rep.s4, 12);
  Rng rng(7);
  Tensor x = Tensor::randn(30, 4, rng);
  Tensor yr = module_forward(rep, x, false);
  Tensor yb = module_forward(base, x, false);
  REQUIRE(yr.bits_equal(yb));
}

TEST_CASE("training mode updates running statistics, eval does not") {
  ConvModule m = init_conv_module(spec_of(Approach::Baseline, 4), 9);
  Rng rng(8);
  Tensor x = Tensor::randn(16, 4, rng);
  Tensor rm0 = m.bn_rm, rv0 = m.bn_rv;
  module_forward(m, x, false);
  REQUIRE(m.bn_rm.bits_equal(rm0));
  REQUIRE(m.bn_rv.bits_equal(rv0));
  module_forward(m, x, true);
  REQUIRE_FALSE(m.bn_rm.bits_equal(rm0));
  REQUIRE_FALSE(m.bn_rv.bits_equal(rv0));
  REQUIRE_THROWS_AS(module_forward(m, Tensor::zeros2d(0, 4), true), std::invalid_argument);
}

TEST_CASE("eval forward is independent of batch composition") {
  ConvModule m = init_conv_module(spec_of(Approach::COM, 4), 10);
  Rng rng(9);
  Tensor a = Tensor::randn(12, 4, rng);
  Tensor b = Tensor::randn(12, 4, rng);
  Tensor both = Tensor::zeros2d(24, 4);
  std::copy(a.raw().begin(), a.raw().end(), both.raw().begin());
  std::copy(b.raw().begin(), b.raw().end(), both.raw().begin() + 12 * 4);
  Tensor ya = module_forward(m, a, false);
  Tensor yboth = module_forward(m, both, false, /*batch=*/2);
  for (std::size_t i = 0; i < ya.raw().size(); ++i)
    REQUIRE(ya.raw()[i] == yboth.raw()[i]);
}

TEST_CASE("build_encoder validates widths and block count") {
  REQUIRE_THROWS_AS(build_encoder({}, false, {}, 1), std::invalid_argument);
  std::vector<ConvModuleSpec> specs = {spec_of(Approach::DIR, 8), spec_of(Approach::DIR, 16)};
  REQUIRE_THROWS_AS(build_encoder(specs, false, {}, 1), std::invalid_argument);
}

TEST_CASE("one baseline block with zeroed projections is near-identity") {
  Encoder enc = build_encoder({spec_of(Approach::Baseline, 8)}, true, {}, 3);
  enc.blocks[0].ffn_w2.fill(0.0);
  enc.blocks[0].ffn_b2.fill(0.0);
  enc.blocks[0].attn->wo.fill(0.0);
  enc.blocks[0].conv.post_w.fill(0.0);
  enc.blocks[0].conv.post_b.fill(0.0);
  Rng rng(10);
  Tensor x = standardized_rows(20, 8, rng);
  Tensor y = encoder_forward_eval(enc, x);
  REQUIRE(max_abs_diff(x, y) < 1e-4);  // the final LN re-standardizes rows
}

TEST_CASE("online encoders are causal for every variant, exactly") {
  Rng rng(11);
  for (Approach a : kAllApproaches) {
    for (bool with_attention : {false, true}) {
      Encoder enc =
          build_encoder({spec_of(a, 6), spec_of(a, 6)}, with_attention, {}, 70 + int(a));
      const std::size_t t_len = 40, t0 = 17;
      Tensor x1 = Tensor::randn(t_len, 6, rng);
      Tensor x2 = x1;
      for (std::size_t t = t0; t < t_len; ++t)
        for (std::size_t c = 0; c < 6; ++c) x2(t, c) += 0.5 + double(c) * 0.1;
      Tensor y1 = encoder_forward_eval(enc, x1);
      Tensor y2 = encoder_forward_eval(enc, x2);
      INFO(approach_name(a) << " attention=" << with_attention);
      for (std::size_t t = 0; t < t0; ++t)
        for (std::size_t c = 0; c < 6; ++c) REQUIRE(y1(t, c) == y2(t, c));
      bool future_changed = false;
      for (std::size_t t = t0; t < t_len; ++t)
        if (y1(t, 0) != y2(t, 0)) future_changed = true;
      REQUIRE(future_changed);
    }
  }
}

TEST_CASE("offline encoders are not causal") {
  Rng rng(12);
  Encoder enc = build_encoder({spec_of(Approach::Baseline, 6, Context::Offline)}, false, {}, 5);
  const std::size_t t_len = 32, t0 = 16;
  Tensor x1 = Tensor::randn(t_len, 6, rng);
  Tensor x2 = x1;
  x2(t0, 0) += 2.0;
  Tensor y1 = encoder_forward_eval(enc, x1);
  Tensor y2 = encoder_forward_eval(enc, x2);
  bool past_changed = false;
  for (std::size_t t = 0; t < t0; ++t)
    for (std::size_t c = 0; c < 6; ++c)
      if (y1(t, c) != y2(t, c)) past_changed = true;
  REQUIRE(past_changed);
}

TEST_CASE("two-block DIR encoder parameter count matches the hand enumeration") {
  std::vector<ConvModuleSpec> specs(2, spec_of(Approach::DIR, 64));
  Encoder enc = build_encoder(specs, false, {}, 8);
  const long h = 64, n = 4, mh = 2 * 64;
  const long ffn = 2 * h + h * mh + mh + mh * h + h;
  const long s4 = n /*a_raw_re*/ + n /*a_raw_im (Lin)*/ + 2 * h * n /*c*/ + h /*d*/ +
                  h /*log_dt*/;
  const long conv = 2 * h /*ln*/ + h * 2 * h + 2 * h /*glu*/ + s4 + 2 * h /*bn affine*/ +
                    h * h + h /*post*/;
  const long block = ffn + conv + 2 * h /*out ln*/;
  REQUIRE(trainable_count(registry(enc)) == 2 * block);
}

TEST_CASE("tape and plain training forwards agree") {
  Rng rng(13);
  for (Approach a : kAllApproaches) {
    for (bool with_attention : {false, true}) {
      std::vector<ConvModuleSpec> specs(2, spec_of(a, 6));
      Model m = make_model(3, 5, build_encoder(specs, with_attention, {}, 90 + int(a)), 91);
      Model m2 = m;  // running stats mutate in both paths
      const std::size_t batch = 2, t_len = 14;
      Tensor x = Tensor::randn(batch * t_len, 3, rng);
      Tensor plain = model_forward_train_plain(m, x, batch);
      Tape t;
      BoundParams bp = bind_params(t, m2);
      Value y = model_forward_tape(t, m2, bp, t.constant(x), {batch, true});
      INFO(approach_name(a) << " attention=" << with_attention);
      REQUIRE(max_abs_diff(plain, t.value(y)) < 1e-11);
      REQUIRE(max_abs_diff(m.enc.blocks[0].conv.bn_rm, m2.enc.blocks[0].conv.bn_rm) < 1e-13);
    }
  }
}
