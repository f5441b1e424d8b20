#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "rppgid/error.hpp"

namespace rppgid::binio {

// Little-endian primitive I/O for the toolkit's binary formats.

template <typename T>
void write_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw FormatError(std::string("truncated input while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4] = {};
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string("bad magic, expected \"") + magic + "\"");
  }
}

}  // namespace rppgid::binio
