#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "streamgate/errors.hpp"
#include "streamgate/tensor.hpp"

// Little-endian primitives for the checkpoint and cache containers.

namespace streamgate::binio {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("binary container truncated");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, std::size_t limit = 1u << 26) {
  const auto n = get<std::uint64_t>(is);
  if (n > limit) throw DataError("binary container: string too long");
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("binary container truncated");
  return s;
}

inline void put_doubles(std::ostream& os, const Tensor& t) {
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline void get_doubles(std::istream& is, Tensor& t) {
  if (t.size() > 0 && !is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
    throw DataError("binary container truncated");
}

inline void put_magic(std::ostream& os, const char (&magic)[9]) { os.write(magic, 8); }

inline void expect_magic(std::istream& is, const char (&magic)[9], const char* what) {
  char buf[8];
  if (!is.read(buf, 8) || std::memcmp(buf, magic, 8) != 0) throw DataError(std::string("not a ") + what + " file");
}

}  // namespace streamgate::binio
