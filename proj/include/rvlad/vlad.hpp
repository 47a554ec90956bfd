#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rvlad/codebook.hpp"
#include "rvlad/regions.hpp"

namespace rvlad {

struct VladConfig {
  double gamma = 0.5;  // power-normalization exponent, (0, 1]
  void validate() const;
};

// V x K matrix of per-cluster residual sums after signed power and per-row
// L2 normalization. Rows are unit length or exactly zero (unused cluster).
// Held in double; stores serialize it as float32.
struct VladDescriptor {
  std::string image_id;
  std::size_t clusters = 0;
  std::size_t dims = 0;
  std::vector<double> data;
  double gamma = 0.5;

  std::span<const double> row(std::size_t u) const {
    return std::span<const double>(data).subspan(u * dims, dims);
  }
  std::size_t nonzero_rows() const;
};

VladDescriptor encode_vlad(const RegionalFeatures& features, const Labels& labels,
                           const Codebook& codebook, const VladConfig& cfg);

}  // namespace rvlad
