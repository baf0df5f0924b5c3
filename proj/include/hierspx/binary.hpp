#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <utility>

#include "hierspx/error.hpp"

namespace hierspx::binary {

// Little-endian scalar writers/readers for the on-disk formats.
template <typename T>
  requires std::is_arithmetic_v<T>
void put(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T get(std::istream& is, const char* what) {
  unsigned char bytes[sizeof(T)];
  auto offset = static_cast<std::size_t>(std::max<std::streamoff>(0, is.tellg()));
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw ParseError(std::string("truncated input while reading ") + what +
                         " at byte " + std::to_string(offset),
                     offset);
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4] = {};
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0)
    throw ParseError(std::string("bad magic, expected ") + magic, 0);
}

}  // namespace hierspx::binary
