#include "rvlad/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rvlad/errors.hpp"

namespace rvlad {

using nlohmann::json;

DatasetManifest::DatasetManifest(std::string name, std::vector<ManifestEntry> queries,
                                 std::vector<ManifestEntry> references, GroundTruthMode mode,
                                 long long tolerance,
                                 std::vector<std::pair<std::size_t, std::size_t>> pairs)
    : name_(std::move(name)),
      queries_(std::move(queries)),
      references_(std::move(references)),
      mode_(mode),
      tolerance_(tolerance),
      pairs_(std::move(pairs)) {
  validate_and_materialize();
}

void DatasetManifest::validate_and_materialize() {
  std::set<std::string> ids;
  for (const auto* list : {&queries_, &references_}) {
    for (const auto& e : *list) {
      if (e.image_id.empty()) throw ManifestError("empty image id");
      if (!ids.insert(e.image_id).second) {
        throw ManifestError("duplicate image id '" + e.image_id + "'");
      }
    }
  }

  admissible_.assign(queries_.size(), {});
  switch (mode_) {
    case GroundTruthMode::kNone:
      break;
    case GroundTruthMode::kTolerance: {
      if (tolerance_ < 0) throw ManifestError("frame tolerance must be non-negative");
      for (const auto* list : {&queries_, &references_}) {
        for (const auto& e : *list) {
          if (!e.frame) {
            throw ManifestError("tolerance ground truth needs a frame index on '" + e.image_id +
                                "'");
          }
        }
      }
      for (std::size_t q = 0; q < queries_.size(); ++q) {
        const long long fq = *queries_[q].frame;
        for (std::size_t r = 0; r < references_.size(); ++r) {
          const long long diff = fq - *references_[r].frame;
          if (diff <= tolerance_ && -diff <= tolerance_) admissible_[q].push_back(r);
        }
      }
      break;
    }
    case GroundTruthMode::kPairs: {
      for (const auto& [q, r] : pairs_) {
        if (q >= queries_.size()) {
          throw ManifestError("ground-truth query index " + std::to_string(q) +
                              " out of range (" + std::to_string(queries_.size()) +
                              " queries)");
        }
        if (r >= references_.size()) {
          throw ManifestError("ground-truth reference index " + std::to_string(r) +
                              " out of range (" + std::to_string(references_.size()) +
                              " references)");
        }
        admissible_[q].push_back(r);
      }
      for (auto& list : admissible_) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
      }
      break;
    }
  }
}

bool DatasetManifest::is_correct(std::size_t q, std::size_t r) const {
  const auto& list = admissible_.at(q);
  return std::binary_search(list.begin(), list.end(), r);
}

std::optional<std::size_t> DatasetManifest::query_index(const std::string& image_id) const {
  for (std::size_t i = 0; i < queries_.size(); ++i) {
    if (queries_[i].image_id == image_id) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> DatasetManifest::reference_index(const std::string& image_id) const {
  for (std::size_t i = 0; i < references_.size(); ++i) {
    if (references_[i].image_id == image_id) return i;
  }
  return std::nullopt;
}

namespace {

std::vector<ManifestEntry> parse_entries(const json& doc, const char* key,
                                         const std::filesystem::path& base_dir) {
  std::vector<ManifestEntry> out;
  if (!doc.contains(key)) return out;
  const json& list = doc.at(key);
  if (!list.is_array()) throw ManifestError(std::string("'") + key + "' must be an array");
  for (const json& item : list) {
    ManifestEntry e;
    e.image_id = item.at("id").get<std::string>();
    std::filesystem::path p = item.at("tensor").get<std::string>();
    e.tensor_path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    if (item.contains("frame") && !item.at("frame").is_null()) {
      e.frame = item.at("frame").get<long long>();
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

DatasetManifest parse_manifest(const std::string& json_text,
                               const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ManifestError(std::string("manifest is not valid JSON: ") + e.what());
  }
  try {
    std::string name = doc.value("name", std::string{});
    auto queries = parse_entries(doc, "queries", base_dir);
    auto references = parse_entries(doc, "references", base_dir);

    GroundTruthMode mode = GroundTruthMode::kNone;
    long long tolerance = 0;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (doc.contains("ground_truth") && !doc.at("ground_truth").is_null()) {
      const json& gt = doc.at("ground_truth");
      const std::string m = gt.at("mode").get<std::string>();
      if (m == "tolerance") {
        mode = GroundTruthMode::kTolerance;
        tolerance = gt.at("tolerance").get<long long>();
      } else if (m == "pairs") {
        mode = GroundTruthMode::kPairs;
        for (const json& p : gt.at("pairs")) {
          if (!p.is_array() || p.size() != 2) throw ManifestError("pair must be [query, ref]");
          const long long q = p[0].get<long long>();
          const long long r = p[1].get<long long>();
          if (q < 0 || r < 0) throw ManifestError("negative ground-truth index");
          pairs.emplace_back(static_cast<std::size_t>(q), static_cast<std::size_t>(r));
        }
      } else {
        throw ManifestError("unknown ground_truth mode '" + m + "'");
      }
    }
    return DatasetManifest(std::move(name), std::move(queries), std::move(references), mode,
                           tolerance, std::move(pairs));
  } catch (const json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_manifest(text, path.parent_path());
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  auto entries = [](const std::vector<ManifestEntry>& list) {
    json arr = json::array();
    for (const auto& e : list) {
      json item = {{"id", e.image_id}, {"tensor", e.tensor_path.string()}};
      if (e.frame) item["frame"] = *e.frame;
      arr.push_back(std::move(item));
    }
    return arr;
  };
  json doc = {{"name", manifest.name()},
              {"queries", entries(manifest.queries())},
              {"references", entries(manifest.references())}};
  switch (manifest.mode()) {
    case GroundTruthMode::kNone:
      break;
    case GroundTruthMode::kTolerance:
      doc["ground_truth"] = {{"mode", "tolerance"}, {"tolerance", manifest.tolerance()}};
      break;
    case GroundTruthMode::kPairs: {
      json pairs = json::array();
      for (const auto& [q, r] : manifest.pairs()) pairs.push_back({q, r});
      doc["ground_truth"] = {{"mode", "pairs"}, {"pairs", pairs}};
      break;
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace rvlad
