#pragma once

#include <sstream>

#include "s4dkit/config.hpp"
#include "s4dkit/streaming.hpp"

namespace s4dkit {

struct CheckLine {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  std::string detail;
};

struct CheckReport {
  std::vector<CheckLine> lines;
  bool all_pass() const {
    for (const auto& l : lines)
      if (!l.pass) return false;
    return !lines.empty();
  }
  void add(std::string name, bool pass, double measured, std::string detail = "") {
    lines.push_back({std::move(name), pass, measured, std::move(detail)});
  }
};

// Scan-mode vs conv-mode forward agreement for every S4 layer in the model,
// plus direct-vs-FFT path agreement for plain convolution cores.
inline CheckReport check_duality(Model& m, std::uint64_t seed) {
  CheckReport rep;
  Rng rng(split_seed(seed, 0xD0));
  for (std::size_t bi = 0; bi < m.enc.blocks.size(); ++bi) {
    ConvModule& cm = m.enc.blocks[bi].conv;
    const std::string where = "block" + std::to_string(bi);
    if (cm.s4) {
      Tensor x = Tensor::rand_uniform(192, cm.spec.h, rng);
      Tensor ys = s4d_forward(*cm.s4, x, S4DMode::ScanSequential);
      Tensor yc = s4d_forward(*cm.s4, x, S4DMode::ConvFft);
      const double err = max_rel_diff(ys, yc);
      rep.add(where + ".s4.scan_vs_conv", err < 1e-8, err);
    }
    if (cm.conv_kernels.numel() > 0) {
      Tensor x = Tensor::rand_uniform(192, 1, rng);
      Tensor krow = Tensor::zeros(cm.conv_kernels.cols());
      for (std::size_t j = 0; j < krow.numel(); ++j) krow(j) = cm.conv_kernels(0, j);
      Tensor d = causal_conv1d(x, krow, ConvPath::Direct);
      Tensor f = causal_conv1d(x, krow, ConvPath::Fft);
      const double err = max_abs_diff(d, f);
      rep.add(where + ".conv.direct_vs_fft", err < 1e-10, err);
    }
  }
  return rep;
}

// Future-input perturbation must not change past outputs. On an offline-context
// model this reports the first diverging time step and fails.
inline CheckReport check_causality(Model& m, std::uint64_t seed, int probes = 20) {
  CheckReport rep;
  Rng rng(split_seed(seed, 0xCA));
  const std::size_t t_len = 48;
  std::uniform_int_distribution<std::size_t> pick_t(1, t_len - 1);
  double worst = 0.0;
  long first_div = -1;
  for (int p = 0; p < probes; ++p) {
    Tensor x1 = Tensor::randn(t_len, m.input_dim, rng);
    Tensor x2 = x1;
    const std::size_t t0 = pick_t(rng);
    for (std::size_t t = t0; t < t_len; ++t)
      for (std::size_t c = 0; c < m.input_dim; ++c) x2(t, c) += 1.0;
    Tensor y1 = model_forward_eval(m, x1);
    Tensor y2 = model_forward_eval(m, x2);
    for (std::size_t t = 0; t < t0; ++t)
      for (std::size_t c = 0; c < m.output_dim; ++c) {
        const double d = std::abs(y1(t, c) - y2(t, c));
        if (d > 0.0 && (first_div < 0 || long(t) < first_div)) first_div = long(t);
        worst = std::max(worst, d);
      }
  }
  std::ostringstream detail;
  if (first_div >= 0) detail << "first divergence at t=" << first_div;
  rep.add("causality.past_invariance", worst == 0.0, worst, detail.str());
  return rep;
}

// Streamed chunked output vs the full-sequence forward.
inline CheckReport check_streaming(Model& m, std::uint64_t seed, int partitions = 8) {
  CheckReport rep;
  if (m.enc.context != Context::Online) {
    rep.add("streaming.online_context", false, 0.0, "model was built for offline context");
    return rep;
  }
  Rng rng(split_seed(seed, 0x57));
  const std::size_t t_len = 128;
  Tensor x = Tensor::randn(t_len, m.input_dim, rng);
  Tensor full = model_forward_eval(m, x);
  double worst = 0.0;
  for (int p = 0; p < partitions; ++p) {
    ModelStream ms = open_model_stream(m);
    std::size_t pos = 0;
    std::uniform_int_distribution<std::size_t> pick(1, 32);
    while (pos < t_len) {
      const std::size_t s = std::min(t_len - pos, p == 0 ? std::size_t(1) : pick(rng));
      Tensor chunk = Tensor::zeros2d(s, m.input_dim);
      std::copy(x.raw().begin() + pos * m.input_dim, x.raw().begin() + (pos + s) * m.input_dim,
                chunk.raw().begin());
      Tensor y = process_model_chunk(m, ms, chunk);
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = 0; c < m.output_dim; ++c)
          worst = std::max(worst, std::abs(y(r, c) - full(pos + r, c)));
      pos += s;
    }
  }
  rep.add("streaming.chunked_vs_full", worst < 1e-9, worst);
  return rep;
}

// Finite-difference gradient check on the stored model over a short input; the
// probed coordinate count is capped to keep the runtime bounded.
inline CheckReport check_grads(Model& m, std::uint64_t seed) {
  CheckReport rep;
  Rng rng(split_seed(seed, 0x6A));
  const std::size_t batch = 2, t_len = 8;
  Tensor input = Tensor::zeros2d(batch * t_len, m.input_dim);
  std::vector<int> labels(batch * t_len);
  std::uniform_int_distribution<int> lab(0, int(m.input_dim) - 1);
  for (std::size_t r = 0; r < batch * t_len; ++r) {
    input(r, std::size_t(lab(rng))) = 1.0;
    labels[r] = lab(rng);
  }
  GradCheckResult res = grad_check(m, input, labels, batch, 400);
  rep.add("grads.fd_worst_rel_error", res.worst_rel_error < 1e-4, res.worst_rel_error,
          res.worst_param);
  return rep;
}

// Parameter accounting: the stored model's S4 core counts must match the tied
// formula, and the reference H=512, N=4 real-scheme layer must land on 4100
// inside the 3500..4600 window.
inline CheckReport check_params(Model& m) {
  CheckReport rep;
  for (std::size_t bi = 0; bi < m.enc.blocks.size(); ++bi) {
    ConvModule& cm = m.enc.blocks[bi].conv;
    if (!cm.s4) continue;
    const S4DParamCount c = param_count(*cm.s4);
    const long n = long(cm.s4->n_state), h = long(cm.s4->n_channels);
    const long expect =
        (cm.s4->scheme == Scheme::Lin ? 2 * n : n) + 2 * h * n;
    rep.add("block" + std::to_string(bi) + ".s4.core_count", c.core == expect,
            double(c.core), "d=" + std::to_string(c.d) + " dt=" + std::to_string(c.dt));
  }
  const S4DParamCount ref = param_count(init_s4d(Scheme::Real, 4, 512, 0));
  rep.add("reference.h512_n4_real.core", ref.core == 4100 && ref.core >= 3500 && ref.core <= 4600,
          double(ref.core), "window 3500..4600");
  return rep;
}

inline CheckReport run_check_suite(const std::string& suite, Model& m, std::uint64_t seed) {
  if (suite == "duality") return check_duality(m, seed);
  if (suite == "causality") return check_causality(m, seed);
  if (suite == "streaming") return check_streaming(m, seed);
  if (suite == "grads") return check_grads(m, seed);
  if (suite == "params") return check_params(m);
  throw config_error("suite", "unknown suite '" + suite +
                                  "' (expected duality|causality|streaming|grads|params)");
}

}  // namespace s4dkit
