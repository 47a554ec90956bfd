#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rvlad {

enum class Traverse { kQuery, kReference };

struct ManifestEntry {
  std::string image_id;
  std::filesystem::path tensor_path;
  std::optional<long long> frame;
};

enum class GroundTruthMode { kNone, kTolerance, kPairs };

// A query/reference dataset with its admissible matches.
//
// Ground truth is either an explicit list of (query, reference) pairs or a
// frame tolerance t, which admits every pair with |frame(q) - frame(r)| <= t.
// Either way it is materialized at construction into a sorted per-query list.
class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::string name, std::vector<ManifestEntry> queries,
                  std::vector<ManifestEntry> references, GroundTruthMode mode,
                  long long tolerance = 0,
                  std::vector<std::pair<std::size_t, std::size_t>> pairs = {});

  const std::string& name() const noexcept { return name_; }
  const std::vector<ManifestEntry>& queries() const noexcept { return queries_; }
  const std::vector<ManifestEntry>& references() const noexcept { return references_; }
  const std::vector<ManifestEntry>& traverse(Traverse t) const noexcept {
    return t == Traverse::kQuery ? queries_ : references_;
  }

  GroundTruthMode mode() const noexcept { return mode_; }
  long long tolerance() const noexcept { return tolerance_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const noexcept {
    return pairs_;
  }

  // Sorted reference indices admissible for query q.
  const std::vector<std::size_t>& admissible(std::size_t q) const { return admissible_.at(q); }
  bool has_ground_truth(std::size_t q) const { return !admissible_.at(q).empty(); }
  bool is_correct(std::size_t q, std::size_t r) const;

  std::optional<std::size_t> query_index(const std::string& image_id) const;
  std::optional<std::size_t> reference_index(const std::string& image_id) const;

 private:
  void validate_and_materialize();

  std::string name_;
  std::vector<ManifestEntry> queries_;
  std::vector<ManifestEntry> references_;
  GroundTruthMode mode_ = GroundTruthMode::kNone;
  long long tolerance_ = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::vector<std::vector<std::size_t>> admissible_;
};

// Relative tensor paths are resolved against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(const std::string& json_text,
                               const std::filesystem::path& base_dir = {});
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace rvlad
