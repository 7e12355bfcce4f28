#pragma once

// Little-endian scalar IO shared by checkpoints and dataset caches.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "acn/error.hpp"

namespace acn::binio {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw FormatError("unexpected end of file");
  return to_little(v);
}

inline void put_doubles(std::ostream& os, std::span<const double> values) {
  for (double v : values) put(os, v);
}

inline void get_doubles(std::istream& is, std::span<double> out) {
  for (double& v : out) v = get<double>(is);
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, std::uint64_t limit = 1u << 30) {
  const auto n = get<std::uint64_t>(is);
  if (n > limit) throw FormatError("string length out of range");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n)))
    throw FormatError("unexpected end of file");
  return s;
}

}  // namespace acn::binio
