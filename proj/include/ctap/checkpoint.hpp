#pragma once

// Versioned model container. Layout (little-endian):
//   "CTAPCKPT" | version u32 | kind str
//   | n_hyper u32 | (key str, value str)*
//   | n_tensors u32 | (name str, rank u32, dims u64*rank, f64*prod(dims))*
// where str = length u32 + UTF-8 bytes.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctap/data_io.hpp"
#include "ctap/error.hpp"
#include "ctap/nn.hpp"

namespace ctap::nn {

inline constexpr std::string_view kCheckpointMagic = "CTAPCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> hyper;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const std::string& hyper_value(const std::string& key) const {
    for (const auto& [k, v] : hyper) {
      if (k == key) return v;
    }
    throw DecodeError("checkpoint missing hyperparameter " + key);
  }

  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw DecodeError("checkpoint missing tensor " + name);
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline void put_str(std::string& out, std::string_view s) {
  ctap::detail::put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

inline std::string take_str(ctap::detail::ByteReader& reader) {
  const std::uint32_t n = reader.u32();
  return std::string(reader.take(n));
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic);
  ctap::detail::put_u32(out, kCheckpointVersion);
  detail::put_str(out, ckpt.kind);
  ctap::detail::put_u32(out, static_cast<std::uint32_t>(ckpt.hyper.size()));
  for (const auto& [key, value] : ckpt.hyper) {
    detail::put_str(out, key);
    detail::put_str(out, value);
  }
  ctap::detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    detail::put_str(out, name);
    ctap::detail::put_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (auto d : tensor.shape) ctap::detail::put_u64(out, d);
    for (double v : tensor.values) ctap::detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  ctap::detail::ByteReader reader(bytes);
  if (bytes.size() < kCheckpointMagic.size() || reader.take(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw DecodeError("bad magic");
  }
  const std::uint32_t version = reader.u32();
  if (version != kCheckpointVersion) {
    throw DecodeError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.kind = detail::take_str(reader);
  const std::uint32_t n_hyper = reader.u32();
  for (std::uint32_t i = 0; i < n_hyper; ++i) {
    auto key = detail::take_str(reader);
    auto value = detail::take_str(reader);
    ckpt.hyper.emplace_back(std::move(key), std::move(value));
  }
  const std::uint32_t n_tensors = reader.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    Tensor t;
    auto name = detail::take_str(reader);
    const std::uint32_t rank = reader.u32();
    std::uint64_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint64_t d = reader.u64();
      if (d != 0 && count > UINT64_MAX / d) throw DecodeError("dimension overflow");
      count *= d;
      t.shape.push_back(static_cast<std::size_t>(d));
    }
    if (count > reader.remaining() / 8) throw DecodeError("truncated file");
    t.values.resize(static_cast<std::size_t>(count));
    for (auto& v : t.values) v = std::bit_cast<double>(reader.u64());
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (reader.remaining() != 0) throw DecodeError("trailing bytes after checkpoint");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ctap::detail::write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(ctap::detail::read_file(path));
}

/// Copies a named tensor into `dst`, requiring the shapes to agree.
inline void restore_tensor(const Checkpoint& ckpt, const std::string& name, Tensor& dst) {
  const Tensor& src = ckpt.tensor(name);
  if (src.shape != dst.shape) throw DecodeError("shape mismatch for tensor " + name);
  dst.values = src.values;
}

}  // namespace ctap::nn
