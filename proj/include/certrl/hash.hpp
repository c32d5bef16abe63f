#pragma once

#include <cstdint>
#include <string>

namespace certrl {

// FNV-1a 64-bit. Used for certificate content hashes and for binding a
// certificate to the exact policy/model checkpoints it was produced from.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

std::string hex64(std::uint64_t h);

// Hash of a file's raw bytes. Throws std::runtime_error if unreadable.
std::uint64_t hash_file(const std::string& path);

}  // namespace certrl
