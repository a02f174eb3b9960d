#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nuanced {

/// The seeded random source threaded through every stochastic operation.
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
/// Independent of the standard library's distribution implementations so
/// trajectories are identical across toolchains.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Unbiased index in [0, n) by rejection; n must be non-zero.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - Rng::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Per-phase generator derived from a run seed, the session and the turn.
/// Lets a stateless service reproduce exactly what an in-process replay does.
inline Rng derive_rng(std::uint64_t seed, std::string_view session, std::uint64_t turn,
                      std::uint64_t phase) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ fnv1a(session));
  s = splitmix64(s ^ turn);
  s = splitmix64(s ^ phase);
  return Rng{s};
}

}  // namespace nuanced
