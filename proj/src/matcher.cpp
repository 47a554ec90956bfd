#include "rvlad/matcher.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_map>

#include "rvlad/errors.hpp"
#include "rvlad/kernels.hpp"
#include "rvlad/parallel.hpp"

namespace rvlad {

namespace {

template <typename B>
double cosine(const double* a, const B* b, std::size_t n) {
  const double aa = kernels::dot(a, a, n);
  const double bb = kernels::dot(b, b, n);
  if (aa == 0.0 || bb == 0.0) return 0.0;
  const double c = kernels::dot(a, b, n) / std::sqrt(aa * bb);
  return std::clamp(c, -1.0, 1.0);
}

template <typename B>
double score(const VladDescriptor& a, const B* b) {
  double total = 0.0;
  for (std::size_t u = 0; u < a.clusters; ++u) {
    total += cosine(a.data.data() + u * a.dims, b + u * a.dims, a.dims);
  }
  return total;
}

void check_shape(const VladDescriptor& q, std::size_t clusters, std::size_t dims) {
  if (q.clusters != clusters || q.dims != dims) {
    throw InputError("descriptor shape " + std::to_string(q.clusters) + "x" +
                     std::to_string(q.dims) + " does not match " + std::to_string(clusters) +
                     "x" + std::to_string(dims));
  }
}

void finish(MatchResult& result, std::chrono::steady_clock::time_point start) {
  const auto elapsed = std::chrono::steady_clock::now() - start;
  result.total_ms = std::chrono::duration<double, std::milli>(elapsed).count();
  result.per_pair_ms = result.total_ms / static_cast<double>(result.scores.size());
  result.best_index = 0;
  result.best_score = result.scores.front();
  for (std::size_t i = 1; i < result.scores.size(); ++i) {
    if (result.scores[i] > result.best_score) {
      result.best_score = result.scores[i];
      result.best_index = i;
    }
  }
}

}  // namespace

double row_cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("row length mismatch");
  return cosine(a.data(), b.data(), a.size());
}

double match_pair(const VladDescriptor& a, const VladDescriptor& b) {
  check_shape(a, b.clusters, b.dims);
  return score(a, b.data.data());
}

MatchResult retrieve(const VladDescriptor& query, const VladStore& references) {
  if (references.empty()) throw InputError("reference store is empty");
  check_shape(query, references.clusters(), references.dims());
  MatchResult result;
  result.query_id = query.image_id;
  result.scores.resize(references.size());
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t r = 0; r < references.size(); ++r) {
    result.scores[r] = score(query, references[r].data.data());
  }
  finish(result, start);
  return result;
}

MatchResult retrieve(const VladDescriptor& query, const MappedVladStore& references) {
  if (references.size() == 0) throw InputError("reference store is empty");
  check_shape(query, references.clusters(), references.dims());
  MatchResult result;
  result.query_id = query.image_id;
  result.scores.resize(references.size());
  std::vector<float> row;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t r = 0; r < references.size(); ++r) {
    references.read(r, row);
    result.scores[r] = score(query, row.data());
  }
  finish(result, start);
  return result;
}

std::vector<MatchResult> retrieve_all(const VladStore& queries, const VladStore& references,
                                      std::size_t workers) {
  std::vector<MatchResult> results(queries.size());
  parallel_for(queries.size(), workers,
               [&](std::size_t q) { results[q] = retrieve(queries[q], references); });
  return results;
}

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::kTruePositive:
      return "TP";
    case Outcome::kFalseNegative:
      return "FN";
    case Outcome::kFalsePositive:
      return "FP";
    case Outcome::kTrueNegative:
      return "TN";
  }
  return "?";
}

ThresholdReport threshold_partition(std::span<const MatchResult> results,
                                    const DatasetManifest& manifest, double threshold) {
  std::unordered_map<std::string, const MatchResult*> by_id;
  for (const auto& r : results) by_id.emplace(r.query_id, &r);

  ThresholdReport report;
  report.threshold = threshold;
  report.outcomes.reserve(manifest.queries().size());
  for (std::size_t q = 0; q < manifest.queries().size(); ++q) {
    const auto it = by_id.find(manifest.queries()[q].image_id);
    if (it == by_id.end()) {
      throw InputError("no match result for query '" + manifest.queries()[q].image_id + "'");
    }
    const MatchResult& m = *it->second;
    const bool accepted = m.best_score >= threshold;
    Outcome o;
    if (manifest.has_ground_truth(q)) {
      if (!accepted) {
        o = Outcome::kFalseNegative;
      } else {
        o = manifest.is_correct(q, m.best_index) ? Outcome::kTruePositive
                                                 : Outcome::kFalsePositive;
      }
    } else {
      o = accepted ? Outcome::kFalsePositive : Outcome::kTrueNegative;
    }
    report.outcomes.push_back(o);
    switch (o) {
      case Outcome::kTruePositive:
        ++report.tp;
        break;
      case Outcome::kFalseNegative:
        ++report.fn;
        break;
      case Outcome::kFalsePositive:
        ++report.fp;
        break;
      case Outcome::kTrueNegative:
        ++report.tn;
        break;
    }
  }
  return report;
}

double suggest_threshold(std::span<const MatchResult> known_negatives) {
  if (known_negatives.empty()) throw InputError("no known-negative results to average");
  double sum = 0.0;
  for (const auto& r : known_negatives) sum += r.best_score;
  return sum / static_cast<double>(known_negatives.size());
}

}  // namespace rvlad
