#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "rvlad/tensor.hpp"

namespace rvlad::synthetic {

// Uniform activations in [low, high). Deterministic for a given seed.
FeatureTensor uniform_tensor(std::size_t channels, std::size_t height, std::size_t width,
                             std::uint64_t seed, std::string image_id = {}, float low = 0.0f,
                             float high = 1.0f);

// Integer activations drawn from {0, ..., levels - 1}.
FeatureTensor quantized_tensor(std::size_t channels, std::size_t height, std::size_t width,
                               int levels, std::uint64_t seed, std::string image_id = {});

// Adds Gaussian noise with standard deviation sigma_fraction * (max - min)
// of the source tensor.
FeatureTensor add_noise(const FeatureTensor& source, double sigma_fraction, std::uint64_t seed,
                        std::string image_id = {});

}  // namespace rvlad::synthetic
