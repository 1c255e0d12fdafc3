#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace actionbind {

// FNV-1a. Used for content fingerprints and name-keyed seed derivation;
// stable across platforms by construction.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

}  // namespace actionbind
