#pragma once

#include <algorithm>
#include <chrono>

#include "s4dkit/config.hpp"

namespace s4dkit {

struct BenchRow {
  std::string mode;
  std::size_t t_len;
  long long median_ns;
  int reps;
};

// Times one S4D layer forward in all four execution modes over several sequence
// lengths. All modes must agree within 1e-8 before anything is timed.
inline std::vector<BenchRow> run_bench(const ModelSection& ms, std::uint64_t seed,
                                       int reps = 5) {
  const Scheme scheme = ms.approach == Approach::Baseline ? Scheme::Real : ms.scheme;
  const std::size_t n = ms.approach == Approach::Baseline ? 4 : ms.n_state;
  S4DParams params = init_s4d(scheme, n, ms.h, split_seed(seed, 0xBE));
  const std::pair<S4DMode, const char*> modes[] = {
      {S4DMode::ScanSequential, "sequential_step"},
      {S4DMode::ScanParallel, "parallel_scan"},
      {S4DMode::ConvDirect, "direct_conv"},
      {S4DMode::ConvFft, "fft_conv"},
  };
  std::vector<BenchRow> rows;
  for (std::size_t t_len : {std::size_t(256), std::size_t(1024), std::size_t(4096)}) {
    Rng rng(split_seed(seed, t_len));
    Tensor x = Tensor::rand_uniform(t_len, ms.h, rng);
    // correctness gate before any timing
    Tensor ref = s4d_forward(params, x, S4DMode::ScanSequential);
    for (const auto& [mode, name] : modes) {
      const double err = max_rel_diff(ref, s4d_forward(params, x, mode));
      if (err >= 1e-8)
        throw std::runtime_error("bench: mode " + std::string(name) +
                                 " fails the correctness gate at T=" + std::to_string(t_len) +
                                 " (rel err " + std::to_string(err) + ")");
    }
    for (const auto& [mode, name] : modes) {
      std::vector<long long> ns(reps);
      for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        Tensor y = s4d_forward(params, x, mode);
        const auto t1 = std::chrono::steady_clock::now();
        ns[r] = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
        if (y.numel() == 0) throw std::runtime_error("bench: empty output");
      }
      std::sort(ns.begin(), ns.end());
      rows.push_back({name, t_len, ns[ns.size() / 2], reps});
    }
  }
  return rows;
}

}  // namespace s4dkit
