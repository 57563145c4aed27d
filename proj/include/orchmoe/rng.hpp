#pragma once

#include <cstdint>
#include <random>

namespace orchmoe {

// splitmix64 finalizer. Used as a counter-based generator: hashing a
// (seed, counter...) tuple gives an independent draw per coordinate, so
// sampling is reproducible regardless of evaluation order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

// Map to a double in the open interval (0, 1).
inline double u64_to_open_unit(std::uint64_t x) {
  return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
}

// Counter-based uniform stream keyed by (seed, layer, step). Each (a, b)
// index pair gets its own independent draw.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t layer = 0;
  std::uint64_t step = 0;

  double uniform(std::uint64_t a, std::uint64_t b) const {
    std::uint64_t h = hash_combine(seed, layer);
    h = hash_combine(h, step);
    h = hash_combine(h, a);
    h = hash_combine(h, b);
    return u64_to_open_unit(h);
  }
};

// Sequential engine for initialization and data generation. Sub-seeds are
// derived by hashing so independent components never share a stream.
inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t tag) {
  return std::mt19937_64(hash_combine(seed, tag));
}

}  // namespace orchmoe
