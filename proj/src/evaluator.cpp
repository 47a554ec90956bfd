#include "rvlad/evaluator.hpp"

#include <algorithm>
#include <unordered_map>

#include "rvlad/errors.hpp"

namespace rvlad {

namespace {

struct Decision {
  double score;
  bool correct;
};

std::vector<Decision> ground_truthed(std::span<const MatchResult> results,
                                     const DatasetManifest& manifest,
                                     std::vector<std::string>* excluded) {
  std::unordered_map<std::string, const MatchResult*> by_id;
  for (const auto& r : results) by_id.emplace(r.query_id, &r);

  std::vector<Decision> out;
  for (std::size_t q = 0; q < manifest.queries().size(); ++q) {
    const std::string& id = manifest.queries()[q].image_id;
    if (!manifest.has_ground_truth(q)) {
      if (excluded) excluded->push_back(id);
      continue;
    }
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw InputError("no match result for query '" + id + "'");
    out.push_back({it->second->best_score, manifest.is_correct(q, it->second->best_index)});
  }
  if (out.empty()) throw InputError("no queries with ground truth to evaluate");
  return out;
}

}  // namespace

double trapezoid_auc(std::span<const PrPoint> points) {
  if (points.empty()) return 0.0;
  double area = 0.0;
  double prev_recall = 0.0;
  double prev_precision = points.front().precision;
  for (const auto& p : points) {
    area += (p.recall - prev_recall) * (p.precision + prev_precision) * 0.5;
    prev_recall = p.recall;
    prev_precision = p.precision;
  }
  return area;
}

PrCurve pr_curve(std::span<const MatchResult> results, const DatasetManifest& manifest) {
  PrCurve curve;
  std::vector<Decision> decisions = ground_truthed(results, manifest, &curve.excluded);
  curve.n_queries = decisions.size();
  std::stable_sort(decisions.begin(), decisions.end(),
                   [](const Decision& a, const Decision& b) { return a.score > b.score; });

  const std::size_t n = decisions.size();
  std::size_t tp = 0;
  std::size_t accepted = 0;
  std::size_t i = 0;
  while (i < n) {
    const double threshold = decisions[i].score;
    while (i < n && decisions[i].score == threshold) {
      tp += decisions[i].correct ? 1 : 0;
      ++accepted;
      ++i;
    }
    const std::size_t fp = accepted - tp;
    const std::size_t fn = n - accepted;
    const double precision =
        accepted == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(accepted);
    const double recall =
        tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    curve.points.push_back({threshold, precision, recall, tp, fp, fn});
  }
  curve.auc = trapezoid_auc(curve.points);
  return curve;
}

double recall_at_1(std::span<const MatchResult> results, const DatasetManifest& manifest) {
  const std::vector<Decision> decisions = ground_truthed(results, manifest, nullptr);
  const auto hits = std::count_if(decisions.begin(), decisions.end(),
                                  [](const Decision& d) { return d.correct; });
  return static_cast<double>(hits) / static_cast<double>(decisions.size());
}

nlohmann::json pr_summary_json(const PrCurve& curve, double recall1) {
  return {{"auc", curve.auc},
          {"recall_at_1", recall1},
          {"n_queries", curve.n_queries},
          {"n_points", curve.points.size()},
          {"excluded_queries", curve.excluded}};
}

}  // namespace rvlad
