#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace vfs3d {

// FNV-1a, 64 bit. Used for stable per-name seeds and parameter digests.
inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t h = kFnvOffset) {
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) {
  return fnv1a(std::as_bytes(std::span(s.data(), s.size())), h);
}

}  // namespace vfs3d
