#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvlad/manifest.hpp"
#include "rvlad/matcher.hpp"

namespace rvlad {

struct PrPoint {
  double threshold;
  double precision;
  double recall;
  std::size_t tp;
  std::size_t fp;
  std::size_t fn;
};

struct PrCurve {
  std::vector<PrPoint> points;  // descending threshold
  double auc = 0.0;
  std::size_t n_queries = 0;  // queries with ground truth
  std::vector<std::string> excluded;  // queries without ground truth
};

// Sweeps the threshold over the distinct best scores. At threshold t a query
// is accepted when its best score is >= t; accepted queries are TP or FP by
// correctness and rejected ones are FN. Precision with nothing accepted is 1.
// The AUC is the trapezoid over recall, anchored at (0, first precision).
PrCurve pr_curve(std::span<const MatchResult> results, const DatasetManifest& manifest);

double trapezoid_auc(std::span<const PrPoint> points);

double recall_at_1(std::span<const MatchResult> results, const DatasetManifest& manifest);

nlohmann::json pr_summary_json(const PrCurve& curve, double recall1);

}  // namespace rvlad
