#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hyperm {

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Deterministic per-stage stream: the run seed is mixed with an FNV-1a hash
/// of the stage name and an index (e.g. the target id of an RRBT tree).
inline Rng make_stream(std::uint64_t seed, std::string_view stage, std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stage) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  const std::uint64_t mixed =
      detail::splitmix64(seed ^ detail::splitmix64(h ^ detail::splitmix64(index)));
  return Rng(mixed);
}

/// Uniform double in [0, 1). Implemented on raw engine output so sequences do
/// not depend on the standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace hyperm
