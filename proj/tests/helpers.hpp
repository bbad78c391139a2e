#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rsnet/autodiff.hpp"
#include "rsnet/rng.hpp"
#include "rsnet/tensor.hpp"

namespace th {

inline rsnet::Tensor<double> randn(rsnet::Rng& rng, rsnet::Shape s, double scale = 1.0) {
  rsnet::Tensor<double> t(s);
  rng.fill_normal(t.data(), 0.0, scale);
  return t;
}

inline rsnet::Tensor<float> randnf(rsnet::Rng& rng, rsnet::Shape s, double scale = 1.0) {
  rsnet::Tensor<float> t(s);
  rng.fill_normal(t.data(), 0.0, scale);
  return t;
}

template <typename T>
bool bit_equal(const rsnet::Tensor<T>& a, const rsnet::Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("rsnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace th
