#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvlad/tensor.hpp"

namespace rvlad {

enum class Neighbourhood { kFour, kEight };
enum class Aggregation { kBoundingBox, kMask };

struct RegionConfig {
  std::size_t top_n = 400;
  Neighbourhood neighbourhood = Neighbourhood::kEight;
  // Neighbours join when |a - b| <= similarity_tau * (channel max - channel min).
  double similarity_tau = 0.05;
  // Cells at or below the floor never belong to a region.
  double activation_floor = 0.0;
  Aggregation aggregation = Aggregation::kBoundingBox;

  void validate() const;
};

struct Pixel {
  std::uint32_t row;
  std::uint32_t col;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct BoundingBox {
  std::uint32_t row_min;
  std::uint32_t row_max;
  std::uint32_t col_min;
  std::uint32_t col_max;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Region {
  std::size_t channel;
  std::vector<Pixel> pixels;  // in discovery order
  BoundingBox bbox;
  double mean_energy;
  std::size_t discovery_rank;  // global scan order: channel, then row-major seed
};

struct RegionSet {
  std::string image_id;
  std::vector<Region> regions;
  std::vector<std::size_t> selected;  // indices into regions, strongest first
};

// N x K matrix; row t is the aggregated descriptor of selected region t.
struct RegionalFeatures {
  std::string image_id;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t t) const {
    return std::span<const double>(data).subspan(t * cols, cols);
  }
};

// Labels every channel independently and ranks the regions by mean energy.
// Ties are broken by larger area, then lower channel, then earlier discovery.
RegionSet extract_regions(const FeatureTensor& tensor, const RegionConfig& cfg);

// Per-cell labels of one channel under the configured predicate; -1 marks
// cells below the floor. Labels are dense and numbered in scan order.
std::vector<std::int32_t> label_channel(std::span<const float> plane, std::size_t height,
                                        std::size_t width, const RegionConfig& cfg);

RegionalFeatures aggregate_regions(const FeatureTensor& tensor, const RegionSet& regions,
                                   Aggregation mode = Aggregation::kBoundingBox);

RegionalFeatures regional_features(const FeatureTensor& tensor, const RegionConfig& cfg);

// Debug dump for overlays: channel, bbox, mean energy and pixel count of the
// selected regions.
nlohmann::json regions_to_json(const RegionSet& regions);

}  // namespace rvlad
