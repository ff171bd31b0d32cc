#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace layoutlab {

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) {
    fail(msg);
  }
}

// FNV-1a, used for config hashes and artifact checksums in manifests.
inline uint64_t fnv1a64(std::string_view bytes, uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string to_hex(uint64_t v);

}  // namespace layoutlab
