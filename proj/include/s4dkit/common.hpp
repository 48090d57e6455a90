#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

// Shared numeric kernels that must produce bit-identical results from every
// call site are kept out of line; inlining could contract or vectorize them
// differently per caller.
#if defined(__GNUC__) || defined(__clang__)
#define S4DKIT_NOINLINE __attribute__((noinline))
#else
#define S4DKIT_NOINLINE
#endif

namespace s4dkit {

using cplx = std::complex<double>;

// Carried stream state no longer matches the encoder it was opened on.
struct stale_state_error : std::runtime_error {
  explicit stale_state_error(const std::string& what) : std::runtime_error(what) {}
};

// Training loss went non-finite; last_finite_step is the last step that had a finite loss.
struct diverged_error : std::runtime_error {
  long last_finite_step;
  diverged_error(const std::string& what, long step)
      : std::runtime_error(what), last_finite_step(step) {}
};

using Rng = std::mt19937_64;

// splitmix64, used to derive independent seed streams from one master seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + stream * 0x9e3779b97f4a7c15ULL + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over raw bytes; used for config digests and stream fingerprints.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

}  // namespace s4dkit
