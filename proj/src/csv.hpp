#pragma once

#include <charconv>
#include <string>
#include <system_error>

namespace rkproj::bench {

/// Shortest round-trip decimal form (std::to_chars), locale-independent and
/// byte-stable across runs.
inline std::string fmt(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt(int v) { return std::to_string(v); }

inline std::string fmt(bool v) { return v ? "1" : "0"; }

}  // namespace rkproj::bench
