#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace distil {

inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

// FNV-1a over bytes. Platform-stable, used for feature hashing and for
// deriving independent per-role random streams.
constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

constexpr std::uint64_t fnv1a64_mix(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= kFnvPrime;
  }
  return h;
}

// Stream for (seed, role, index). Streams for distinct tuples are
// independent, so fold-parallel work is schedule-invariant.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view role,
                                   std::uint64_t index) {
  std::uint64_t h = fnv1a64(role);
  h = fnv1a64_mix(h, seed);
  h = fnv1a64_mix(h, index);
  return std::mt19937_64(h);
}

}  // namespace distil
