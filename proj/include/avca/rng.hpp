#pragma once

#include <cstdint>
#include <random>

namespace avca {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Identifies one independent random stream.
///
/// Every consumer (a dropout site, a shuffle, a negative sampler) derives its
/// generator from the full key, so draws never depend on evaluation order.
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch = 0;
  std::uint64_t layer = 0;

  StreamKey with_layer(std::uint64_t id) const { return {seed, epoch, batch, id}; }
  StreamKey with_batch(std::uint64_t b) const { return {seed, epoch, b, layer}; }
  StreamKey with_epoch(std::uint64_t e) const { return {seed, e, batch, layer}; }

  std::uint64_t digest() const {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ epoch);
    h = splitmix64(h ^ batch);
    return splitmix64(h ^ layer);
  }

  std::mt19937_64 engine() const { return std::mt19937_64(digest()); }
};

// Layer ids reserved for non-dropout consumers.
namespace stream {
inline constexpr std::uint64_t kShuffle = 1000;
inline constexpr std::uint64_t kNegatives = 1001;
inline constexpr std::uint64_t kInit = 1002;
}  // namespace stream

/// Uniform draw in [0, 1) with 53 bits of resolution.
inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

}  // namespace avca
