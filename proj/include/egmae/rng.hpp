#pragma once

// Labeled random substreams. A stream is identified by a key derived from the
// master seed plus a label and integer coordinates (epoch, image id, patch
// index, ...), so any unit of work can be replayed independently of the order
// in which work units are processed.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace egmae {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a; also used for stable sample ids derived from paths.
inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t stream_key(std::uint64_t seed, std::string_view label,
                                          std::initializer_list<std::uint64_t> coords = {}) {
  std::uint64_t k = splitmix64(seed ^ splitmix64(fnv1a64(label)));
  for (std::uint64_t c : coords) k = splitmix64(k ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return k;
}

inline Rng make_rng(std::uint64_t seed, std::string_view label, std::initializer_list<std::uint64_t> coords = {}) {
  return Rng(stream_key(seed, label, coords));
}

}  // namespace egmae
