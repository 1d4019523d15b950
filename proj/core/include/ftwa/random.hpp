#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace ftwa {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed for a named sub-stream, e.g. derive_seed(seed, {epoch, batch}).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix_seed(seed);
  for (std::uint64_t p : path) s = mix_seed(s ^ mix_seed(p + 0x632BE59BD9B4E019ull));
  return s;
}

/// Uniform integer in [lo, hi]. Implemented directly (not via
/// std::uniform_int_distribution) so sequences are identical across
/// standard libraries.
inline int uniform_int(Rng& rng, int lo, int hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(rng() % span);
}

/// Uniform double in [0, 1).
inline double uniform01(Rng& rng) { return (rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Standard normal via Box-Muller.
inline double normal01(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Fisher-Yates with uniform_int.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = last - first;
  for (auto i = n - 1; i > 0; --i) {
    const auto j = uniform_int(rng, 0, static_cast<int>(i));
    std::swap(first[i], first[j]);
  }
}

}  // namespace ftwa
