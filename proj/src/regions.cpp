#include "rvlad/regions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rvlad/errors.hpp"

namespace rvlad {

void RegionConfig::validate() const {
  if (top_n < 1) throw ConfigError("top_n must be at least 1");
  if (!(similarity_tau > 0.0 && similarity_tau <= 1.0)) {
    throw ConfigError("similarity_tau must lie in (0, 1]");
  }
  if (!std::isfinite(activation_floor)) throw ConfigError("activation_floor must be finite");
}

std::vector<std::int32_t> label_channel(std::span<const float> plane, std::size_t height,
                                        std::size_t width, const RegionConfig& cfg) {
  const double floor = cfg.activation_floor;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (float v : plane) {
    if (v > floor) {
      lo = std::min(lo, static_cast<double>(v));
      hi = std::max(hi, static_cast<double>(v));
    }
  }
  std::vector<std::int32_t> labels(plane.size(), -1);
  if (lo > hi) return labels;
  const double threshold = cfg.similarity_tau * (hi - lo);

  static constexpr int kOffsets8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                          {0, 1},   {1, -1}, {1, 0},  {1, 1}};
  static constexpr int kOffsets4[4][2] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
  const bool eight = cfg.neighbourhood == Neighbourhood::kEight;
  const int n_offsets = eight ? 8 : 4;
  const auto* offsets = eight ? kOffsets8 : kOffsets4;

  const auto h = static_cast<long>(height);
  const auto w = static_cast<long>(width);
  std::vector<std::size_t> stack;
  std::int32_t next = 0;
  for (std::size_t seed = 0; seed < plane.size(); ++seed) {
    if (labels[seed] >= 0 || !(plane[seed] > floor)) continue;
    labels[seed] = next;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t cell = stack.back();
      stack.pop_back();
      const long r = static_cast<long>(cell) / w;
      const long c = static_cast<long>(cell) % w;
      const double value = plane[cell];
      for (int i = 0; i < n_offsets; ++i) {
        const long nr = r + offsets[i][0];
        const long nc = c + offsets[i][1];
        if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
        const auto nb = static_cast<std::size_t>(nr * w + nc);
        if (labels[nb] >= 0 || !(plane[nb] > floor)) continue;
        if (std::abs(static_cast<double>(plane[nb]) - value) <= threshold) {
          labels[nb] = next;
          stack.push_back(nb);
        }
      }
    }
    ++next;
  }
  return labels;
}

RegionSet extract_regions(const FeatureTensor& tensor, const RegionConfig& cfg) {
  cfg.validate();
  RegionSet out;
  out.image_id = tensor.image_id();

  const std::size_t height = tensor.height();
  const std::size_t width = tensor.width();
  for (std::size_t k = 0; k < tensor.channels(); ++k) {
    const auto plane = tensor.channel(k);
    const auto labels = label_channel(plane, height, width, cfg);

    const std::size_t base = out.regions.size();
    for (std::size_t cell = 0; cell < labels.size(); ++cell) {
      const std::int32_t label = labels[cell];
      if (label < 0) continue;
      const auto row = static_cast<std::uint32_t>(cell / width);
      const auto col = static_cast<std::uint32_t>(cell % width);
      const std::size_t idx = base + static_cast<std::size_t>(label);
      if (idx == out.regions.size()) {
        // Labels are issued in scan order, so the first cell seen is the seed.
        out.regions.push_back(Region{k, {}, BoundingBox{row, row, col, col}, 0.0, idx});
      }
      Region& region = out.regions[idx];
      region.pixels.push_back(Pixel{row, col});
      region.bbox.row_min = std::min(region.bbox.row_min, row);
      region.bbox.row_max = std::max(region.bbox.row_max, row);
      region.bbox.col_min = std::min(region.bbox.col_min, col);
      region.bbox.col_max = std::max(region.bbox.col_max, col);
      region.mean_energy += plane[cell];
    }
    for (std::size_t i = base; i < out.regions.size(); ++i) {
      out.regions[i].mean_energy /= static_cast<double>(out.regions[i].pixels.size());
    }
  }

  std::vector<std::size_t> order(out.regions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto stronger = [&](std::size_t a, std::size_t b) {
    const Region& ra = out.regions[a];
    const Region& rb = out.regions[b];
    if (ra.mean_energy != rb.mean_energy) return ra.mean_energy > rb.mean_energy;
    if (ra.pixels.size() != rb.pixels.size()) return ra.pixels.size() > rb.pixels.size();
    if (ra.channel != rb.channel) return ra.channel < rb.channel;
    return ra.discovery_rank < rb.discovery_rank;
  };
  const std::size_t keep = std::min(cfg.top_n, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                    order.end(), stronger);
  order.resize(keep);
  out.selected = std::move(order);
  return out;
}

RegionalFeatures aggregate_regions(const FeatureTensor& tensor, const RegionSet& regions,
                                   Aggregation mode) {
  if (regions.image_id != tensor.image_id()) {
    throw InputError("region set for '" + regions.image_id + "' applied to tensor '" +
                     tensor.image_id() + "'");
  }
  const std::size_t K = tensor.channels();
  const std::size_t height = tensor.height();
  const std::size_t width = tensor.width();

  RegionalFeatures out;
  out.image_id = regions.image_id;
  out.rows = regions.selected.size();
  out.cols = K;
  out.data.assign(out.rows * K, 0.0);

  for (std::size_t t = 0; t < out.rows; ++t) {
    const Region& region = regions.regions.at(regions.selected[t]);
    const BoundingBox& b = region.bbox;
    if (b.row_max >= height || b.col_max >= width) {
      throw InputError("region bounding box exceeds tensor extent");
    }
    double* dst = out.data.data() + t * K;
    for (std::size_t k = 0; k < K; ++k) {
      const auto plane = tensor.channel(k);
      double sum = 0.0;
      if (mode == Aggregation::kBoundingBox) {
        for (std::size_t r = b.row_min; r <= b.row_max; ++r) {
          const float* line = plane.data() + r * width;
          for (std::size_t c = b.col_min; c <= b.col_max; ++c) sum += line[c];
        }
      } else {
        for (const Pixel& p : region.pixels) sum += plane[p.row * width + p.col];
      }
      dst[k] = sum;
    }
  }
  return out;
}

RegionalFeatures regional_features(const FeatureTensor& tensor, const RegionConfig& cfg) {
  return aggregate_regions(tensor, extract_regions(tensor, cfg), cfg.aggregation);
}

nlohmann::json regions_to_json(const RegionSet& regions) {
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t t = 0; t < regions.selected.size(); ++t) {
    const Region& r = regions.regions[regions.selected[t]];
    list.push_back({{"rank", t},
                    {"channel", r.channel},
                    {"bbox", {r.bbox.row_min, r.bbox.row_max, r.bbox.col_min, r.bbox.col_max}},
                    {"mean_energy", r.mean_energy},
                    {"pixel_count", r.pixels.size()}});
  }
  return {{"image_id", regions.image_id},
          {"total_regions", regions.regions.size()},
          {"selected", std::move(list)}};
}

}  // namespace rvlad
