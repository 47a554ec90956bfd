#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rvlad/manifest.hpp"
#include "rvlad/vlad.hpp"
#include "rvlad/vlad_store.hpp"

namespace rvlad {

struct MatchResult {
  std::string query_id;
  std::vector<double> scores;  // indexed by reference
  std::size_t best_index = 0;
  double best_score = 0.0;
  double total_ms = 0.0;
  double per_pair_ms = 0.0;
};

// Cosine of two rows; 0 when either row has zero norm. Clamped to [-1, 1].
double row_cosine(std::span<const double> a, std::span<const double> b);

// Sum over clusters of the per-row cosine similarity. Symmetric and
// bounded by V in magnitude.
double match_pair(const VladDescriptor& a, const VladDescriptor& b);

// Exhaustive scan; the lowest reference index wins ties.
MatchResult retrieve(const VladDescriptor& query, const VladStore& references);
MatchResult retrieve(const VladDescriptor& query, const MappedVladStore& references);

std::vector<MatchResult> retrieve_all(const VladStore& queries, const VladStore& references,
                                      std::size_t workers = 1);

enum class Outcome { kTruePositive, kFalseNegative, kFalsePositive, kTrueNegative };

const char* outcome_name(Outcome o);

struct ThresholdReport {
  double threshold = 0.0;
  std::vector<Outcome> outcomes;  // indexed by manifest query
  std::size_t tp = 0;
  std::size_t fn = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
};

// Results are matched to the manifest's queries by id. A query with ground
// truth is TP when accepted and correct, FP when accepted and wrong, FN when
// rejected; a query without ground truth is TN when rejected, else FP.
ThresholdReport threshold_partition(std::span<const MatchResult> results,
                                    const DatasetManifest& manifest, double threshold);

// Mean best score over queries known to have no true match.
double suggest_threshold(std::span<const MatchResult> known_negatives);

}  // namespace rvlad
