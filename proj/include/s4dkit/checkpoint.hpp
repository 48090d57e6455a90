#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "s4dkit/tensor.hpp"

namespace s4dkit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

// Layout: magic "S4FM", version (u32), config digest (u64), then tensor records
// until EOF. Record: name length (u32), name (UTF-8), dtype tag (u32, 1 = f64),
// rank (u32), dims (u64 each), raw little-endian f64 data.
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kDtypeF64 = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, std::uint64_t config_digest,
                            const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write("S4FM", 4);
  detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
  detail::write_pod<std::uint64_t>(os, config_digest);
  for (const auto& [name, t] : tensors) {
    detail::write_pod<std::uint32_t>(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    detail::write_pod<std::uint32_t>(os, kDtypeF64);
    detail::write_pod<std::uint32_t>(os, std::uint32_t(t->rank()));
    if (t->rank() == 1) {
      detail::write_pod<std::uint64_t>(os, t->numel());
    } else {
      detail::write_pod<std::uint64_t>(os, t->rows());
      detail::write_pod<std::uint64_t>(os, t->cols());
    }
    os.write(reinterpret_cast<const char*>(t->raw().data()),
             std::streamsize(t->raw().size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

struct LoadedCheckpoint {
  std::uint32_t version = 0;
  std::uint64_t config_digest = 0;
  std::vector<std::string> order;
  std::map<std::string, Tensor> tensors;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "S4FM")
    throw std::runtime_error("checkpoint: bad magic in " + path);
  LoadedCheckpoint ck;
  ck.version = detail::read_pod<std::uint32_t>(is);
  if (ck.version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(ck.version));
  ck.config_digest = detail::read_pod<std::uint64_t>(is);
  while (true) {
    std::uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (is.eof()) break;
    if (!is) throw std::runtime_error("checkpoint: truncated record in " + path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t dtype = detail::read_pod<std::uint32_t>(is);
    if (dtype != kDtypeF64)
      throw std::runtime_error("checkpoint: unsupported dtype tag " + std::to_string(dtype));
    const std::uint32_t rank = detail::read_pod<std::uint32_t>(is);
    std::uint64_t rows = 1, cols = 1;
    if (rank == 1) {
      rows = detail::read_pod<std::uint64_t>(is);
    } else if (rank == 2) {
      rows = detail::read_pod<std::uint64_t>(is);
      cols = detail::read_pod<std::uint64_t>(is);
    } else {
      throw std::runtime_error("checkpoint: unsupported rank " + std::to_string(rank));
    }
    Tensor t = (rank == 1) ? Tensor::zeros(rows) : Tensor::zeros2d(rows, cols);
    is.read(reinterpret_cast<char*>(t.raw().data()),
            std::streamsize(t.raw().size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data in " + path);
    ck.order.push_back(name);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

}  // namespace s4dkit
