#include "rvlad/timing.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "rvlad/errors.hpp"
#include "rvlad/matcher.hpp"

namespace rvlad {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void summarize(StageTiming& stage) {
  const double n = static_cast<double>(stage.per_iteration.size());
  double sum = 0.0;
  for (double v : stage.per_iteration) sum += v;
  stage.mean = sum / n;
  double var = 0.0;
  for (double v : stage.per_iteration) var += (v - stage.mean) * (v - stage.mean);
  stage.stddev = std::sqrt(var / n);
}

nlohmann::json stage_json(const StageTiming& s) {
  return {{"mean", s.mean}, {"stddev", s.stddev}, {"per_iteration", s.per_iteration}};
}

}  // namespace

TimingReport run_timing(const PipelineConfig& cfg, const Codebook& codebook,
                        std::span<const FeatureTensor> queries,
                        std::span<const FeatureTensor> references, std::size_t iterations) {
  if (iterations < 1) throw ConfigError("timing needs at least one iteration");
  if (queries.empty()) throw InputError("timing needs at least one image");
  const std::span<const FeatureTensor> refs = references.empty() ? queries : references;

  TimingReport report;
  report.iterations = iterations;
  report.images = queries.size() + references.size();
  report.pairs = queries.size() * refs.size();
  report.top_n = cfg.regions.top_n;
  report.clusters = codebook.clusters();

  for (std::size_t it = 0; it < iterations; ++it) {
    double extract_total = 0.0;
    double encode_total = 0.0;
    auto encode_set = [&](std::span<const FeatureTensor> set) {
      VladStore store;
      for (const auto& tensor : set) {
        auto start = Clock::now();
        const RegionalFeatures features = regional_features(tensor, cfg.regions);
        extract_total += seconds_since(start);
        ++report.extraction_samples;

        start = Clock::now();
        VladDescriptor d = encode_vlad(features, quantize(features, codebook), codebook, cfg.vlad);
        encode_total += seconds_since(start);
        store.add(std::move(d));
      }
      return store;
    };
    const VladStore query_store = encode_set(queries);
    const VladStore ref_store = references.empty() ? query_store : encode_set(references);

    double match_total = 0.0;
    for (const auto& q : query_store.descriptors()) {
      const auto start = Clock::now();
      const MatchResult r = retrieve(q, ref_store);
      match_total += seconds_since(start);
      (void)r;
    }

    const double images = static_cast<double>(report.images);
    report.extraction_s.per_iteration.push_back(extract_total / images);
    report.encoding_ms.per_iteration.push_back(encode_total * 1e3 / images);
    report.matching_ms.per_iteration.push_back(match_total * 1e3 /
                                               static_cast<double>(report.pairs));
  }
  summarize(report.extraction_s);
  summarize(report.encoding_ms);
  summarize(report.matching_ms);
  return report;
}

nlohmann::json timing_json(const TimingReport& report) {
  return {{"extraction_s_per_image", stage_json(report.extraction_s)},
          {"encoding_ms_per_image", stage_json(report.encoding_ms)},
          {"matching_ms_per_pair", stage_json(report.matching_ms)},
          {"images", report.images},
          {"pairs", report.pairs},
          {"iterations", report.iterations},
          {"extraction_samples", report.extraction_samples},
          {"workers", report.workers},
          {"top_n", report.top_n},
          {"clusters", report.clusters}};
}

std::string timing_table(const TimingReport& report) {
  char buf[512];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-28s %12s %12s\n", "stage", "mean", "stddev");
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-28s %12.4f %12.4f\n", "Extraction time (s)",
                report.extraction_s.mean, report.extraction_s.stddev);
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-28s %12.4f %12.4f\n", "VLAD encoding (ms)",
                report.encoding_ms.mean, report.encoding_ms.stddev);
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-28s %12.4f %12.4f\n", "VLAD matching (ms/pair)",
                report.matching_ms.mean, report.matching_ms.stddev);
  out += buf;
  std::snprintf(buf, sizeof(buf), "N=%zu V=%zu images=%zu pairs=%zu iterations=%zu workers=%zu\n",
                report.top_n, report.clusters, report.images, report.pairs, report.iterations,
                report.workers);
  out += buf;
  return out;
}

}  // namespace rvlad
