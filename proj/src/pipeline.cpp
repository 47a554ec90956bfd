#include "rvlad/pipeline.hpp"

#include "rvlad/errors.hpp"
#include "rvlad/parallel.hpp"

namespace rvlad {

VladDescriptor encode_image(const FeatureTensor& tensor, const PipelineConfig& cfg,
                            const Codebook& codebook) {
  if (tensor.channels() != codebook.dims()) {
    throw InputError("tensor '" + tensor.image_id() + "' has " +
                     std::to_string(tensor.channels()) + " channels, codebook expects K=" +
                     std::to_string(codebook.dims()));
  }
  const RegionalFeatures features = regional_features(tensor, cfg.regions);
  return encode_vlad(features, quantize(features, codebook), codebook, cfg.vlad);
}

VladStore encode_all(std::span<const FeatureTensor> tensors, const PipelineConfig& cfg,
                     const Codebook& codebook, std::size_t workers) {
  std::vector<VladDescriptor> out(tensors.size());
  parallel_for(tensors.size(), workers,
               [&](std::size_t i) { out[i] = encode_image(tensors[i], cfg, codebook); });
  return VladStore(std::move(out));
}

std::vector<RegionalFeatures> features_all(std::span<const FeatureTensor> tensors,
                                           const RegionConfig& cfg, std::size_t workers) {
  std::vector<RegionalFeatures> out(tensors.size());
  parallel_for(tensors.size(), workers,
               [&](std::size_t i) { out[i] = regional_features(tensors[i], cfg); });
  return out;
}

}  // namespace rvlad
