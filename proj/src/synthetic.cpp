#include "rvlad/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace rvlad::synthetic {

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

FeatureTensor uniform_tensor(std::size_t channels, std::size_t height, std::size_t width,
                             std::uint64_t seed, std::string image_id, float low, float high) {
  std::mt19937_64 rng(seed);
  std::vector<float> data(channels * height * width);
  for (float& v : data) v = static_cast<float>(low + (high - low) * unit(rng));
  return FeatureTensor(channels, height, width, std::move(data), std::move(image_id));
}

FeatureTensor quantized_tensor(std::size_t channels, std::size_t height, std::size_t width,
                               int levels, std::uint64_t seed, std::string image_id) {
  std::mt19937_64 rng(seed);
  std::vector<float> data(channels * height * width);
  for (float& v : data) v = static_cast<float>(rng() % static_cast<std::uint64_t>(levels));
  return FeatureTensor(channels, height, width, std::move(data), std::move(image_id));
}

FeatureTensor add_noise(const FeatureTensor& source, double sigma_fraction, std::uint64_t seed,
                        std::string image_id) {
  const auto [lo, hi] = std::minmax_element(source.data().begin(), source.data().end());
  const double sigma = sigma_fraction * (static_cast<double>(*hi) - *lo);
  std::mt19937_64 rng(seed);
  std::vector<float> data(source.data().begin(), source.data().end());
  // Box-Muller over the portable unit draw keeps outputs identical across
  // standard library implementations.
  for (std::size_t i = 0; i < data.size(); i += 2) {
    const double u1 = 1.0 - unit(rng);
    const double u2 = unit(rng);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    data[i] += static_cast<float>(sigma * radius * std::cos(2.0 * M_PI * u2));
    if (i + 1 < data.size()) {
      data[i + 1] += static_cast<float>(sigma * radius * std::sin(2.0 * M_PI * u2));
    }
  }
  return FeatureTensor(source.channels(), source.height(), source.width(), std::move(data),
                       image_id.empty() ? source.image_id() : std::move(image_id));
}

}  // namespace rvlad::synthetic
