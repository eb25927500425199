#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace unlearn {

using rng_type = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream seed as a pure function of a parent seed and a list of keys.
inline constexpr std::uint64_t derive_seed(std::uint64_t parent,
                                           std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = splitmix64(parent);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k));
  return h;
}

// FNV-1a, for turning labels into keys
inline constexpr std::uint64_t label_key(std::string_view s) noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

inline rng_type make_rng(std::uint64_t seed) { return rng_type(seed); }

}  // namespace unlearn
