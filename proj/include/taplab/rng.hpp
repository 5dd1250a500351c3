#pragma once

#include <cstdint>
#include <limits>

namespace taplab {

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Named streams inside one replicate.
enum class Stream : std::uint64_t { Design = 1, Signal = 2, Noise = 3, Aux = 4 };

/// Counter-based generator: output i is a fixed mix of (key, i), so a stream
/// is fully determined by its key and never depends on scheduling. Satisfies
/// UniformRandomBitGenerator, so std distributions can consume it.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key) : key_(splitmix64_mix(key ^ 0x6A09E667F3BCC908ULL)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return splitmix64_mix(key_ + 0x9E3779B97F4A7C15ULL * ++counter_); }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Seed of replicate `index` under a master seed.
inline constexpr std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64_mix(splitmix64_mix(master) + 0xD1B54A32D192ED03ULL * (index + 1));
}

/// Generator for one named stream of one replicate.
inline CounterRng stream_rng(std::uint64_t replicate_seed_value, Stream tag) {
  return CounterRng(splitmix64_mix(replicate_seed_value ^ (0xA0761D6478BD642FULL * static_cast<std::uint64_t>(tag))));
}

}  // namespace taplab
