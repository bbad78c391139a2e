#include "rsnet/rng.hpp"

#include <random>

namespace rsnet {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return h;
}

Rng Rng::split(std::string_view name) const {
  Rng mixer(state_ ^ fnv1a64(name));
  mixer();
  return Rng(mixer());
}

Rng Rng::split(std::uint64_t index) const {
  Rng mixer(state_ ^ (index * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
  mixer();
  return Rng(mixer());
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  std::uniform_int_distribution<std::int64_t> dist(lo, hi);
  return dist(*this);
}

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(*this);
}

double Rng::gamma(double shape, double scale) {
  std::gamma_distribution<double> dist(shape, scale);
  return dist(*this);
}

template <typename T>
void Rng::fill_normal(std::span<T> out, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  for (T& v : out) v = static_cast<T>(dist(*this));
}

template void Rng::fill_normal(std::span<float>, double, double);
template void Rng::fill_normal(std::span<double>, double, double);

}  // namespace rsnet
