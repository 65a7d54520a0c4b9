#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "piecer/errors.hpp"

namespace piecer::binary {

// Little-endian fixed-width encoding shared by the embedding and checkpoint formats.

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const char* what) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw FormatError(std::string("truncated file while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what, std::uint32_t max_len = 1u << 28) {
  const auto n = read_le<std::uint32_t>(in, what);
  if (n > max_len) throw FormatError(std::string("implausible string length while reading ") + what);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw FormatError(std::string("truncated file while reading ") + what);
  return s;
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const char* format) {
  char buf[4];
  if (!in.read(buf, 4)) throw FormatError(std::string(format) + ": truncated file (no magic)");
  if (std::memcmp(buf, magic, 4) != 0) throw FormatError(std::string(format) + ": bad magic bytes");
}

}  // namespace piecer::binary
