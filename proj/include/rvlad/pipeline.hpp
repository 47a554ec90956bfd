#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rvlad/codebook.hpp"
#include "rvlad/regions.hpp"
#include "rvlad/tensor.hpp"
#include "rvlad/vlad.hpp"
#include "rvlad/vlad_store.hpp"

namespace rvlad {

struct PipelineConfig {
  RegionConfig regions;
  VladConfig vlad;
};

// Regions -> regional features -> labels -> VLAD for one image.
VladDescriptor encode_image(const FeatureTensor& tensor, const PipelineConfig& cfg,
                            const Codebook& codebook);

VladStore encode_all(std::span<const FeatureTensor> tensors, const PipelineConfig& cfg,
                     const Codebook& codebook, std::size_t workers = 1);

std::vector<RegionalFeatures> features_all(std::span<const FeatureTensor> tensors,
                                           const RegionConfig& cfg, std::size_t workers = 1);

}  // namespace rvlad
