#include <catch2/catch_amalgamated.hpp>

#include "s4dkit/streaming.hpp"

using namespace s4dkit;

namespace {

ConvModuleSpec spec_of(Approach a, std::size_t h, Context ctx = Context::Online) {
  ConvModuleSpec s;
  s.approach = a;
  s.h = h;
  s.kernel_size = 4;
  s.context = ctx;
  if (a != Approach::Baseline) s.s4d = S4DConfig{Scheme::Lin, 3};
  if (a == Approach::REP) s.rep_left_context = 9;
  return s;
}

Encoder make_enc(Approach a, bool attn, std::size_t h = 6) {
  return build_encoder({spec_of(a, h), spec_of(a, h)}, attn, {}, 500 + int(a) * 7 + attn);
}

Tensor rows_slice(const Tensor& x, std::size_t r0, std::size_t r1) {
  Tensor out = Tensor::zeros2d(r1 - r0, x.cols());
  std::copy(x.raw().begin() + r0 * x.cols(), x.raw().begin() + r1 * x.cols(),
            out.raw().begin());
  return out;
}

Tensor stream_in_chunks(Encoder& enc, const Tensor& x, const std::vector<std::size_t>& sizes) {
  StreamState st = open_stream(enc);
  Tensor out = Tensor::zeros2d(x.rows(), x.cols());
  std::size_t pos = 0;
  for (std::size_t s : sizes) {
    Tensor chunk = rows_slice(x, pos, pos + s);
    Tensor y = process_chunk(enc, st, chunk);
    std::copy(y.raw().begin(), y.raw().end(), out.raw().begin() + pos * x.cols());
    pos += s;
  }
  REQUIRE(pos == x.rows());
  return out;
}

const std::vector<Approach> kAll = {Approach::Baseline, Approach::DIR, Approach::COM,
                                    Approach::REP};

}  // namespace

TEST_CASE("open_stream requires an online encoder; opening with no chunks is fine") {
  Encoder off = build_encoder({spec_of(Approach::DIR, 4, Context::Offline)}, false, {}, 1);
  REQUIRE_THROWS_AS(open_stream(off), std::invalid_argument);
  Encoder on = make_enc(Approach::DIR, false, 4);
  StreamState st = open_stream(on);
  REQUIRE(st.frames_seen == 0);
}

TEST_CASE("rep kernel cache equals a fresh materialization, exactly") {
  Encoder enc = make_enc(Approach::REP, false);
  StreamState st = open_stream(enc);
  for (std::size_t bi = 0; bi < enc.blocks.size(); ++bi) {
    Tensor fresh = rep_effective_kernel(*enc.blocks[bi].conv.s4,
                                        enc.blocks[bi].conv.spec.rep_left_context);
    REQUIRE(st.blocks[bi].rep_kernel.bits_equal(fresh));
  }
}

TEST_CASE("one chunk of the whole sequence equals the full forward, exactly") {
  Rng rng(61);
  for (Approach a : kAll) {
    for (bool attn : {false, true}) {
      Encoder enc = make_enc(a, attn);
      Tensor x = Tensor::randn(37, 6, rng);
      Tensor full = encoder_forward_eval(enc, x);
      StreamState st = open_stream(enc);
      Tensor streamed = process_chunk(enc, st, x);
      INFO(approach_name(a) << " attn=" << attn);
      REQUIRE(streamed.bits_equal(full));
    }
  }
}

TEST_CASE("fixed uneven partition matches the full forward within 1e-9") {
  Rng rng(62);
  for (Approach a : kAll) {
    Encoder enc = make_enc(a, true);
    Tensor x = Tensor::randn(256, 6, rng);
    Tensor full = encoder_forward_eval(enc, x);
    Tensor streamed = stream_in_chunks(enc, x, {1, 7, 64, 184});
    INFO(approach_name(a));
    REQUIRE(max_abs_diff(full, streamed) < 1e-9);
  }
}

TEST_CASE("chunk size one (pure step mode) matches the full forward") {
  Rng rng(63);
  for (Approach a : kAll) {
    Encoder enc = make_enc(a, a == Approach::DIR);  // attention on one variant for coverage
    Tensor x = Tensor::randn(64, 6, rng);
    Tensor full = encoder_forward_eval(enc, x);
    Tensor streamed = stream_in_chunks(enc, x, std::vector<std::size_t>(64, 1));
    INFO(approach_name(a));
    REQUIRE(max_abs_diff(full, streamed) < 1e-9);
  }
}

TEST_CASE("random partitions match the full forward for every variant") {
  Rng rng(64);
  for (Approach a : kAll) {
    Encoder enc = make_enc(a, false);
    Tensor x = Tensor::randn(96, 6, rng);
    Tensor full = encoder_forward_eval(enc, x);
    for (int trial = 0; trial < 6; ++trial) {
      std::vector<std::size_t> sizes;
      std::size_t left = 96;
      std::uniform_int_distribution<std::size_t> pick(1, 24);
      while (left > 0) {
        std::size_t s = std::min(left, pick(rng));
        sizes.push_back(s);
        left -= s;
      }
      Tensor streamed = stream_in_chunks(enc, x, sizes);
      INFO(approach_name(a) << " trial=" << trial);
      REQUIRE(max_abs_diff(full, streamed) < 1e-9);
    }
  }
}

TEST_CASE("conv tail length is min(frames seen, k-1)") {
  Encoder enc = make_enc(Approach::Baseline, false);  // kernel_size 4
  StreamState st = open_stream(enc);
  Rng rng(65);
  Tensor c1 = Tensor::randn(2, 6, rng);
  process_chunk(enc, st, c1);
  REQUIRE(st.blocks[0].conv_tail.rows() == 2);
  Tensor c2 = Tensor::randn(5, 6, rng);
  process_chunk(enc, st, c2);
  REQUIRE(st.blocks[0].conv_tail.rows() == 3);
  REQUIRE(st.frames_seen == 7);
}

TEST_CASE("two streams from one encoder are independent") {
  Rng rng(66);
  Encoder enc = make_enc(Approach::COM, true);
  Tensor xa = Tensor::randn(40, 6, rng);
  Tensor xb = Tensor::randn(40, 6, rng);
  Tensor ya_iso, yb_iso;
  {
    StreamState sa = open_stream(enc);
    ya_iso = process_chunk(enc, sa, xa);
    StreamState sb = open_stream(enc);
    yb_iso = process_chunk(enc, sb, xb);
  }
  StreamState sa = open_stream(enc);
  StreamState sb = open_stream(enc);
  Tensor ya = Tensor::zeros2d(40, 6), yb = Tensor::zeros2d(40, 6);
  for (std::size_t pos = 0; pos < 40; pos += 8) {
    Tensor ca = process_chunk(enc, sa, rows_slice(xa, pos, pos + 8));
    Tensor cb = process_chunk(enc, sb, rows_slice(xb, pos, pos + 8));
    std::copy(ca.raw().begin(), ca.raw().end(), ya.raw().begin() + pos * 6);
    std::copy(cb.raw().begin(), cb.raw().end(), yb.raw().begin() + pos * 6);
  }
  REQUIRE(max_abs_diff(ya, ya_iso) < 1e-9);
  REQUIRE(max_abs_diff(yb, yb_iso) < 1e-9);
}

TEST_CASE("state plus later inputs determine later outputs (handoff)") {
  Rng rng(67);
  Encoder enc = make_enc(Approach::DIR, true);
  Tensor x = Tensor::randn(48, 6, rng);
  Tensor full = encoder_forward_eval(enc, x);
  StreamState runner_a = open_stream(enc);
  process_chunk(enc, runner_a, rows_slice(x, 0, 20));
  // hand the carried state to a separately constructed runner
  StreamState runner_b = open_stream(enc);
  runner_b = runner_a;
  Tensor tail_out = process_chunk(enc, runner_b, rows_slice(x, 20, 48));
  for (std::size_t t = 0; t < 28; ++t)
    for (std::size_t c = 0; c < 6; ++c)
      REQUIRE(tail_out(t, c) == Catch::Approx(full(20 + t, c)).margin(1e-10));
}

TEST_CASE("mutating the encoder between chunks raises stale_state_error") {
  Rng rng(68);
  Encoder enc = make_enc(Approach::REP, false);
  StreamState st = open_stream(enc);
  process_chunk(enc, st, Tensor::randn(4, 6, rng));
  enc.blocks[0].conv.post_w(0, 0) += 0.125;
  REQUIRE_THROWS_AS(process_chunk(enc, st, Tensor::randn(4, 6, rng)), stale_state_error);
}

TEST_CASE("process_chunk rejects empty or misshaped chunks") {
  Encoder enc = make_enc(Approach::Baseline, false);
  StreamState st = open_stream(enc);
  REQUIRE_THROWS_AS(process_chunk(enc, st, Tensor::zeros2d(0, 6)), std::invalid_argument);
  REQUIRE_THROWS_AS(process_chunk(enc, st, Tensor::zeros2d(3, 5)), std::invalid_argument);
}

TEST_CASE("model-level streaming matches the model eval forward") {
  Rng rng(69);
  std::vector<ConvModuleSpec> specs = {spec_of(Approach::COM, 6), spec_of(Approach::COM, 6)};
  Model m = make_model(3, 5, build_encoder(specs, false, {}, 777), 778);
  Tensor x = Tensor::randn(50, 3, rng);
  Tensor full = model_forward_eval(m, x);
  ModelStream ms = open_model_stream(m);
  Tensor out = Tensor::zeros2d(50, 5);
  for (std::size_t pos = 0; pos < 50; pos += 10) {
    Tensor y = process_model_chunk(m, ms, rows_slice(x, pos, pos + 10));
    std::copy(y.raw().begin(), y.raw().end(), out.raw().begin() + pos * 5);
  }
  REQUIRE(max_abs_diff(full, out) < 1e-9);
}
