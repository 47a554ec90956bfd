#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvlad/codebook.hpp"
#include "rvlad/pipeline.hpp"
#include "rvlad/tensor.hpp"

namespace rvlad {

struct StageTiming {
  double mean = 0.0;
  double stddev = 0.0;                 // population, across iterations
  std::vector<double> per_iteration;  // per-image (or per-pair) mean of each iteration
};

struct TimingReport {
  StageTiming extraction_s;  // regions + aggregation, seconds per image
  StageTiming encoding_ms;   // quantization + VLAD, milliseconds per image
  StageTiming matching_ms;   // one query against one reference, milliseconds
  std::size_t images = 0;
  std::size_t pairs = 0;
  std::size_t iterations = 0;
  std::size_t extraction_samples = 0;
  std::size_t workers = 1;
  std::size_t top_n = 0;
  std::size_t clusters = 0;
};

// Wall-clock per stage over tensors already held in memory. Every query is
// matched against every reference; with no references the queries are
// matched against themselves. Single-threaded.
TimingReport run_timing(const PipelineConfig& cfg, const Codebook& codebook,
                        std::span<const FeatureTensor> queries,
                        std::span<const FeatureTensor> references, std::size_t iterations);

nlohmann::json timing_json(const TimingReport& report);
std::string timing_table(const TimingReport& report);

}  // namespace rvlad
