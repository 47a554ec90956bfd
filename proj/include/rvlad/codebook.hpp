#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rvlad/regions.hpp"

namespace rvlad {

enum class KMeansInit { kPlusPlus, kRandomPoints };

struct KMeansConfig {
  std::size_t clusters = 256;  // V
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  double tol = 1e-4;  // mean centroid displacement
  KMeansInit init = KMeansInit::kPlusPlus;
  std::size_t restarts = 1;
  // After Lloyd converges, move single points between clusters while that
  // lowers the inertia, then re-run Lloyd. Escapes Lloyd fixed points that
  // are not local optima under single-point transfers.
  bool hartigan_refine = true;

  void validate() const;
};

struct TrainMeta {
  std::uint64_t seed = 0;
  std::size_t iterations_run = 0;
  double final_inertia = 0.0;
  std::vector<double> inertia_history;  // one entry per assignment step
};

// V x K centroid matrix learned over regional features.
class Codebook {
 public:
  Codebook(std::size_t clusters, std::size_t dims, std::vector<float> centroids,
           TrainMeta meta = {});

  std::size_t clusters() const noexcept { return clusters_; }
  std::size_t dims() const noexcept { return dims_; }
  const TrainMeta& meta() const noexcept { return meta_; }
  std::span<const float> centroids() const noexcept { return centroids_; }
  std::span<const float> centroid(std::size_t u) const noexcept {
    return std::span<const float>(centroids_).subspan(u * dims_, dims_);
  }

 private:
  std::size_t clusters_;
  std::size_t dims_;
  std::vector<float> centroids_;
  TrainMeta meta_;
};

using Labels = std::vector<std::uint32_t>;

// Lloyd iterations; ties in assignment go to the lowest cluster index, empty
// clusters are re-seeded with the point farthest from its centroid, and the
// restart with the lowest final inertia wins. Deterministic for a given seed
// and input order, independent of `workers`.
Codebook train_codebook(std::span<const RegionalFeatures> features, const KMeansConfig& cfg,
                        std::size_t workers = 1);

// Same procedure from caller-supplied initial centroids (V x K, row-major);
// cfg.init, cfg.seed and cfg.restarts are ignored.
Codebook train_codebook_from(std::span<const RegionalFeatures> features,
                             std::span<const double> initial_centroids, const KMeansConfig& cfg,
                             std::size_t workers = 1);

Labels quantize(const RegionalFeatures& features, const Codebook& codebook);

// Binary file plus a JSON sidecar (path + ".json") carrying the training metadata.
void save_codebook(const Codebook& codebook, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace rvlad
