#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>

namespace rsnet {

// SplitMix64 generator. Satisfies UniformRandomBitGenerator so it can drive
// the <random> distributions. split() derives an independent child stream
// from a name, which gives every layer its own reproducible sequence.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t state() const { return state_; }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  // Gamma(shape k, scale theta); mean k*theta.
  double gamma(double shape, double scale);

  template <typename T>
  void fill_normal(std::span<T> out, double mean, double stddev);

 private:
  std::uint64_t state_;
};

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xCBF29CE484222325ull);

}  // namespace rsnet
