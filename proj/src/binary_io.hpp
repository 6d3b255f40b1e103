#pragma once

// Little helpers for the versioned binary containers (checkpoints, PCA
// models). Values are written in host byte order; all supported hosts are
// little-endian.

#include <cstdint>
#include <fstream>
#include <string>
#include <type_traits>

#include "p2ssm/errors.hpp"

namespace p2ssm::binio {

template <typename T>
void put(std::ostream& out, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated " + what);
  return v;
}

inline void put_doubles(std::ostream& out, const double* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void get_doubles(std::istream& in, double* data, std::size_t n, const std::string& what) {
  if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw FormatError("truncated " + what);
  }
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const std::string& what, std::uint64_t limit = 1ULL << 30) {
  const auto n = get<std::uint64_t>(in, what);
  if (n > limit) throw FormatError("implausible string length in " + what);
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("truncated " + what);
  return s;
}

inline void expect_magic(std::istream& in, const char (&magic)[9], const std::string& what) {
  char buf[8];
  if (!in.read(buf, 8) || std::string(buf, 8) != std::string(magic, 8)) {
    throw FormatError(what + ": bad magic (not a " + std::string(magic, 8) + " file)");
  }
}

}  // namespace p2ssm::binio
