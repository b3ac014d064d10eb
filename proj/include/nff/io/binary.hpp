// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian primitive readers/writers shared by the binary formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "nff/error.hpp"

namespace nff::io {

template <class U>
void put(std::ostream& os, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

class Reader {
 public:
  Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  template <class U>
  U get(const char* field) {
    unsigned char b[sizeof(U)];
    is_.read(reinterpret_cast<char*>(b), sizeof(U));
    if (is_.gcount() != static_cast<std::streamsize>(sizeof(U)))
      throw DataError(what_ + ": truncated while reading " + field + " at byte " + std::to_string(offset_));
    offset_ += sizeof(U);
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
  }

  std::string bytes(std::size_t n, const char* field) {
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (is_.gcount() != static_cast<std::streamsize>(n))
      throw DataError(what_ + ": truncated while reading " + field + " at byte " + std::to_string(offset_));
    offset_ += n;
    return s;
  }

  void expect_magic(const char* magic) {
    const std::string m = bytes(4, "magic");
    if (m != std::string(magic, 4)) throw DataError(what_ + ": bad magic, expected '" + std::string(magic, 4) + "'");
  }

  std::size_t offset() const { return offset_; }
  const std::string& what() const { return what_; }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
  std::string what_;
  std::size_t offset_ = 0;
};

}  // namespace nff::io
