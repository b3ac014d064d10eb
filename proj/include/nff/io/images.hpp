// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary PPM (P6) images and raw NFIM feature dumps.

#include <cmath>
#include <fstream>
#include <string>

#include "nff/autodiff/tensor.hpp"
#include "nff/io/binary.hpp"

namespace nff {

/// [0, 1] -> [0, 255], round half up, clamped.
inline std::uint8_t to_byte(double v) {
  if (!(v > 0)) return 0;
  if (v >= 1) return 255;
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

/// Writes a [3, H, W] image as P6 with maxval 255.
inline void write_ppm(std::ostream& os, const ad::Tensor<double>& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw std::invalid_argument("write_ppm: expected a [3,H,W] image");
  const int H = rgb.dim(1), W = rgb.dim(2);
  os << "P6\n" << W << " " << H << "\n255\n";
  std::string row(static_cast<std::size_t>(W) * 3, '\0');
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = static_cast<char>(to_byte(rgb.at(c, y, x)));
    os.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

inline void save_ppm(const std::string& path, const ad::Tensor<double>& rgb) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_ppm(os, rgb);
  if (!os) throw DataError("write failed: " + path);
}

/// Reads a P6 image with maxval 255 into [3, H, W] in [0, 1].
inline ad::Tensor<double> read_ppm(std::istream& is, const std::string& what = "ppm") {
  std::string magic;
  int W = 0, H = 0, maxval = 0;
  is >> magic >> W >> H >> maxval;
  if (!is || magic != "P6") throw DataError(what + ": not a binary PPM (P6) file");
  if (W <= 0 || H <= 0 || W > 65536 || H > 65536) throw DataError(what + ": invalid image size");
  if (maxval != 255) throw DataError(what + ": only maxval 255 is supported");
  is.get();
  ad::Tensor<double> img(ad::Shape{3, H, W});
  std::string row(static_cast<std::size_t>(W) * 3, '\0');
  for (int y = 0; y < H; ++y) {
    is.read(row.data(), static_cast<std::streamsize>(row.size()));
    if (is.gcount() != static_cast<std::streamsize>(row.size())) throw DataError(what + ": truncated pixel data");
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<unsigned char>(row[static_cast<std::size_t>(x) * 3 + c]) / 255.0;
  }
  return img;
}

inline ad::Tensor<double> load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_ppm(is, path);
}

/// Pixel-major [H*W, C] rows (or [H, W, C]) as "NFIM", u32 H, W, C, f32 data.
inline void save_nfim(const std::string& path, const ad::Tensor<double>& rows, int H, int W) {
  if (H * W == 0 || rows.size() % (static_cast<std::size_t>(H) * W)) throw std::invalid_argument("save_nfim: size mismatch");
  const auto C = static_cast<std::uint32_t>(rows.size() / (static_cast<std::size_t>(H) * W));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os.write("NFIM", 4);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(H));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(W));
  io::put<std::uint32_t>(os, C);
  for (double v : rows.data) io::put<float>(os, static_cast<float>(v));
  if (!os) throw DataError("write failed: " + path);
}

/// Returns [H, W, C].
inline ad::Tensor<double> load_nfim(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  io::Reader r(is, path);
  r.expect_magic("NFIM");
  const auto H = r.get<std::uint32_t>("height"), W = r.get<std::uint32_t>("width"), C = r.get<std::uint32_t>("channels");
  if (static_cast<std::uint64_t>(H) * W * C > (1ull << 32)) throw DataError(path + ": image too large");
  ad::Tensor<double> t(ad::Shape{static_cast<int>(H), static_cast<int>(W), static_cast<int>(C)});
  for (auto& v : t.data) v = r.get<float>("data");
  return t;
}

}  // namespace nff
