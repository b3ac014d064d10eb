// SPDX-License-Identifier: Apache-2.0
#pragma once

// NFCK parameter checkpoints: "NFCK", u32 version, u32 count, then per tensor
// u16 name length, name bytes, u8 rank, u32 dims, f32 data (little-endian).
// Optimizer state is stored as ordinary records with suffixed names.

#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>

#include "nff/autodiff/optim.hpp"
#include "nff/io/binary.hpp"

namespace nff::ad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_tensors(std::ostream& os, const TensorMap& tensors) {
  os.write("NFCK", 4);
  io::put<std::uint32_t>(os, kCheckpointVersion);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw std::invalid_argument("tensor name too long");
    if (t.shape.size() > 255) throw std::invalid_argument("tensor rank too large");
    io::put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape.size()));
    for (int d : t.shape) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : t.data) io::put<float>(os, static_cast<float>(v));
  }
}

inline TensorMap read_tensors(std::istream& is, const std::string& what) {
  io::Reader r(is, what);
  r.expect_magic("NFCK");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw DataError(what + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("tensor count");
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name = r.bytes(len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    for (int d = 0; d < rank; ++d) {
      const auto n = r.get<std::uint32_t>("dimension");
      if (n > (1u << 28)) throw DataError(what + ": implausible dimension for '" + name + "'");
      shape.push_back(static_cast<int>(n));
    }
    Tensor<double> t(shape);
    for (auto& v : t.data) v = static_cast<double>(r.get<float>("data"));
    if (!out.emplace(name, std::move(t)).second) throw DataError(what + ": duplicate tensor '" + name + "'");
  }
  return out;
}

inline void save_tensors(const std::string& path, const TensorMap& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_tensors(os, tensors);
  if (!os) throw DataError("write failed for '" + path + "'");
}

inline TensorMap load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return read_tensors(is, path);
}

inline const char* kAdamM = ".adam_m";
inline const char* kAdamV = ".adam_v";
inline const char* kEma = ".ema";
inline const char* kAdamStep = "__adam_step";

/// Parameters plus optional optimizer state in one tensor map.
inline TensorMap pack_checkpoint(const ParamStore& store, const Adam* adam, const Ema* ema) {
  TensorMap out = store.all();
  if (adam) {
    for (const auto& [k, v] : adam->first_moments()) out[k + kAdamM] = v;
    for (const auto& [k, v] : adam->second_moments()) out[k + kAdamV] = v;
    out[kAdamStep] = Tensor<double>(Shape{1}, static_cast<double>(adam->steps()));
  }
  if (ema)
    for (const auto& [k, v] : ema->shadow()) out[k + kEma] = v;
  return out;
}

namespace detail {
inline bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}
}  // namespace detail

/// Splits a packed map back into parameters and (if present) optimizer state.
inline ParamStore unpack_checkpoint(const TensorMap& packed, Adam* adam = nullptr, Ema* ema = nullptr) {
  ParamStore store;
  TensorMap m, v, shadow;
  std::uint64_t step = 0;
  for (const auto& [k, t] : packed) {
    if (k == kAdamStep) {
      step = static_cast<std::uint64_t>(t.data.at(0));
    } else if (detail::has_suffix(k, kAdamM)) {
      m[k.substr(0, k.size() - 7)] = t;
    } else if (detail::has_suffix(k, kAdamV)) {
      v[k.substr(0, k.size() - 7)] = t;
    } else if (detail::has_suffix(k, kEma)) {
      shadow[k.substr(0, k.size() - 4)] = t;
    } else {
      store.set(k, t);
    }
  }
  if (adam) adam->restore(step, std::move(m), std::move(v));
  if (ema && !shadow.empty()) ema->shadow() = std::move(shadow);
  return store;
}

}  // namespace nff::ad
