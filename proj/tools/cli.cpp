#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>
#include <json.hpp>

#include "rvlad/codebook.hpp"
#include "rvlad/errors.hpp"
#include "rvlad/evaluator.hpp"
#include "rvlad/manifest.hpp"
#include "rvlad/matcher.hpp"
#include "rvlad/parallel.hpp"
#include "rvlad/pipeline.hpp"
#include "rvlad/timing.hpp"
#include "rvlad/vlad_store.hpp"

namespace rvlad::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  std::string config_file;
  std::string preset;
  std::size_t workers = default_workers();

  // regions
  std::size_t top_n = 400;
  std::size_t vocab_top_n = 0;  // 0: same as top_n
  int neighbourhood = 8;
  double tau = 0.05;
  double floor = 0.0;
  std::string aggregation = "bbox";

  // k-means
  std::size_t clusters = 256;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  double tol = 1e-4;
  std::string init = "plus-plus";
  std::size_t restarts = 1;
  bool no_hartigan = false;

  double gamma = 0.5;

  // paths and mode switches
  std::string manifest;
  std::string codebook;
  std::string out;
  std::string traverse = "query";
  std::string queries;
  std::string references;
  std::string results;
  std::string negatives;
  std::string dump_regions;
  std::size_t top_k = 0;
  std::size_t iterations = 5;
  double threshold = 0.0;
  bool use_mmap = false;
  bool threshold_given = false;

  RegionConfig region_config(std::size_t n) const {
    RegionConfig cfg;
    cfg.top_n = n;
    if (neighbourhood == 4) {
      cfg.neighbourhood = Neighbourhood::kFour;
    } else if (neighbourhood == 8) {
      cfg.neighbourhood = Neighbourhood::kEight;
    } else {
      throw ConfigError("--neighbourhood must be 4 or 8");
    }
    cfg.similarity_tau = tau;
    cfg.activation_floor = floor;
    if (aggregation == "bbox") {
      cfg.aggregation = Aggregation::kBoundingBox;
    } else if (aggregation == "mask") {
      cfg.aggregation = Aggregation::kMask;
    } else {
      throw ConfigError("--aggregation must be bbox or mask");
    }
    cfg.validate();
    return cfg;
  }

  PipelineConfig pipeline() const {
    PipelineConfig cfg{region_config(top_n), VladConfig{gamma}};
    cfg.vlad.validate();
    return cfg;
  }

  KMeansConfig kmeans() const {
    KMeansConfig cfg;
    cfg.clusters = clusters;
    cfg.seed = seed;
    cfg.max_iters = max_iters;
    cfg.tol = tol;
    if (init == "plus-plus") {
      cfg.init = KMeansInit::kPlusPlus;
    } else if (init == "random-points") {
      cfg.init = KMeansInit::kRandomPoints;
    } else {
      throw ConfigError("--init must be plus-plus or random-points");
    }
    cfg.restarts = restarts;
    cfg.hartigan_refine = !no_hartigan;
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* app, RunConfig& rc) {
  app->add_option("--config", rc.config_file, "JSON file of option values; flags win");
  app->add_option("--workers", rc.workers, "Worker threads (default: available parallelism)")
      ->check(CLI::PositiveNumber);
}

void add_region_options(CLI::App* app, RunConfig& rc) {
  app->add_option("--preset", rc.preset, "paper (N=400, V=256) or compact (N=200, V=128)")
      ->check(CLI::IsMember({"paper", "compact"}));
  app->add_option("-N,--top-n", rc.top_n, "Regions kept per image");
  app->add_option("--neighbourhood", rc.neighbourhood, "4 or 8 connectivity");
  app->add_option("--tau", rc.tau, "Relative similarity tolerance in (0, 1]");
  app->add_option("--floor", rc.floor, "Activations at or below this never form regions");
  app->add_option("--aggregation", rc.aggregation, "bbox or mask");
}

// Fills options the user did not pass from the --config JSON object. Keys
// are long option names without the leading dashes.
void apply_config_file(CLI::App* app, const RunConfig& rc) {
  if (rc.config_file.empty()) return;
  std::ifstream in(rc.config_file);
  if (!in) throw IoError("cannot open config file " + rc.config_file);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& [key, value] : doc.items()) {
    CLI::Option* opt = nullptr;
    try {
      opt = app->get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw ConfigError("unknown config key '" + key + "' for " + app->get_name());
    }
    if (opt->count() > 0 || key == "config") continue;
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_boolean()) {
      if (!value.get<bool>()) continue;
      text = "true";
    } else {
      text = value.dump();
    }
    opt->add_result(text);
    opt->run_callback();
  }
}

void apply_preset(CLI::App* app, RunConfig& rc) {
  if (rc.preset.empty()) return;
  const bool compact = rc.preset == "compact";
  if (app->get_option("--top-n")->count() == 0) rc.top_n = compact ? 200 : 400;
  CLI::Option* v = nullptr;
  try {
    v = app->get_option("--clusters");
  } catch (const CLI::OptionNotFound&) {
    return;
  }
  if (v->count() == 0) rc.clusters = compact ? 128 : 256;
}

std::vector<FeatureTensor> load_tensors(const std::vector<ManifestEntry>& entries) {
  std::vector<FeatureTensor> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    FeatureTensor t = load_tensor(e.tensor_path);
    t.set_image_id(e.image_id);
    out.push_back(std::move(t));
  }
  return out;
}

void check_exists(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what);
  if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failure on " + path.string());
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_build_vocab(const RunConfig& rc, std::ostream& out) {
  check_exists(rc.manifest, "manifest");
  if (rc.out.empty()) throw ConfigError("missing --out codebook path");
  const RegionConfig regions = rc.region_config(rc.vocab_top_n ? rc.vocab_top_n : rc.top_n);
  const KMeansConfig kmeans = rc.kmeans();

  const DatasetManifest manifest = load_manifest(rc.manifest);
  std::vector<ManifestEntry> entries = manifest.queries();
  entries.insert(entries.end(), manifest.references().begin(), manifest.references().end());
  if (entries.empty()) throw InputError("manifest lists no tensors");

  const std::vector<FeatureTensor> tensors = load_tensors(entries);
  const std::vector<RegionalFeatures> features = features_all(tensors, regions, rc.workers);
  std::size_t rows = 0;
  for (const auto& f : features) rows += f.rows;
  out << "event=features images=" << tensors.size() << " rows=" << rows
      << " top_n=" << regions.top_n << '\n';

  const Codebook codebook = train_codebook(features, kmeans, rc.workers);
  save_codebook(codebook, rc.out);
  out << "event=codebook V=" << codebook.clusters() << " K=" << codebook.dims()
      << " seed=" << codebook.meta().seed << " iterations=" << codebook.meta().iterations_run
      << " inertia=" << fmt_double(codebook.meta().final_inertia) << " path=" << rc.out << '\n';
  return kExitOk;
}

int cmd_encode(const RunConfig& rc, std::ostream& out) {
  check_exists(rc.manifest, "manifest");
  check_exists(rc.codebook, "codebook");
  if (rc.out.empty()) throw ConfigError("missing --out store path");
  const PipelineConfig cfg = rc.pipeline();

  const DatasetManifest manifest = load_manifest(rc.manifest);
  const Traverse traverse = rc.traverse == "reference" ? Traverse::kReference : Traverse::kQuery;
  const auto& entries = manifest.traverse(traverse);
  if (entries.empty()) throw InputError("traverse '" + rc.traverse + "' is empty");
  const Codebook codebook = load_codebook(rc.codebook);

  const std::vector<FeatureTensor> tensors = load_tensors(entries);
  for (const auto& t : tensors) {
    if (t.channels() != codebook.dims()) {
      throw InputError("tensor '" + t.image_id() + "' has K=" + std::to_string(t.channels()) +
                       " but the codebook has K=" + std::to_string(codebook.dims()));
    }
  }
  if (!rc.dump_regions.empty()) {
    ensure_dir(rc.dump_regions);
    for (const auto& t : tensors) {
      write_text(fs::path(rc.dump_regions) / (t.image_id() + ".regions.json"),
                 regions_to_json(extract_regions(t, cfg.regions)).dump(2) + "\n");
    }
  }
  const VladStore store = encode_all(tensors, cfg, codebook, rc.workers);
  for (std::size_t i = 0; i < store.size(); ++i) {
    out << "event=encoded index=" << i << " id=" << store[i].image_id
        << " nonzero_rows=" << store[i].nonzero_rows() << '\n';
  }
  save_vlad_store(store, rc.out);
  out << "event=encode_done traverse=" << rc.traverse << " images=" << store.size()
      << " V=" << store.clusters() << " K=" << store.dims() << " path=" << rc.out << '\n';
  return kExitOk;
}

int cmd_match(const RunConfig& rc, std::ostream& out) {
  check_exists(rc.queries, "query store");
  check_exists(rc.references, "reference store");
  if (rc.out.empty()) throw ConfigError("missing --out directory");
  const VladStore queries = load_vlad_store(rc.queries);
  if (queries.empty()) throw InputError("query store is empty");

  std::vector<MatchResult> results;
  std::vector<std::string> ref_ids;
  if (rc.use_mmap) {
    const MappedVladStore refs(rc.references);
    for (std::size_t r = 0; r < refs.size(); ++r) ref_ids.emplace_back(refs.id(r));
    results.resize(queries.size());
    parallel_for(queries.size(), rc.workers,
                 [&](std::size_t q) { results[q] = retrieve(queries[q], refs); });
  } else {
    const VladStore refs = load_vlad_store(rc.references);
    for (const auto& d : refs.descriptors()) ref_ids.push_back(d.image_id);
    results = retrieve_all(queries, refs, rc.workers);
  }

  ensure_dir(rc.out);
  std::ostringstream csv;
  csv << "query_id,reference_id,rank,score\n";
  json best = json::array();
  double total_ms = 0.0;
  for (const auto& r : results) {
    std::vector<std::size_t> order(r.scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return r.scores[a] > r.scores[b]; });
    const std::size_t keep = rc.top_k == 0 ? order.size() : std::min(rc.top_k, order.size());
    for (std::size_t rank = 0; rank < keep; ++rank) {
      csv << r.query_id << ',' << ref_ids[order[rank]] << ',' << rank + 1 << ','
          << fmt_double(r.scores[order[rank]]) << '\n';
    }
    best.push_back({{"query_id", r.query_id},
                    {"best_index", r.best_index},
                    {"best_reference_id", ref_ids[r.best_index]},
                    {"best_score", r.best_score}});
    total_ms += r.total_ms;
    out << "event=matched query=" << r.query_id << " best=" << ref_ids[r.best_index]
        << " score=" << fmt_double(r.best_score) << '\n';
  }
  write_text(fs::path(rc.out) / "results.csv", csv.str());
  write_text(fs::path(rc.out) / "summary.json",
             json{{"queries", results.size()}, {"references", ref_ids.size()}, {"best", best}}
                     .dump(2) +
                 "\n");
  const double pairs = static_cast<double>(results.size() * ref_ids.size());
  write_text(fs::path(rc.out) / "timing.json",
             json{{"total_ms", total_ms}, {"per_pair_ms", total_ms / pairs}}.dump(2) + "\n");
  out << "event=match_done queries=" << results.size() << " references=" << ref_ids.size()
      << " total_ms=" << total_ms << " per_pair_ms=" << total_ms / pairs << '\n';
  return kExitOk;
}

struct CsvResults {
  std::vector<MatchResult> results;  // in file order of first appearance
};

// Rebuilds match results from a results CSV. When a manifest is given the
// reference ids are mapped to its reference indices.
CsvResults read_results_csv(const std::string& path, const DatasetManifest* manifest) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results file " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("query_id,reference_id,rank,score", 0) != 0) {
    throw FormatError(path + ": missing results CSV header");
  }
  CsvResults out;
  std::unordered_map<std::string, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected 4 columns");
    }
    long rank = 0;
    double score = 0.0;
    try {
      rank = std::stol(cells[2]);
      score = std::stod(cells[3]);
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad rank or score");
    }
    auto [it, inserted] = index.emplace(cells[0], out.results.size());
    if (inserted) {
      MatchResult r;
      r.query_id = cells[0];
      r.best_score = -std::numeric_limits<double>::infinity();
      out.results.push_back(std::move(r));
    }
    MatchResult& r = out.results[it->second];
    std::size_t ref_index = 0;
    if (manifest) {
      const auto ri = manifest->reference_index(cells[1]);
      if (!ri) throw InputError("reference '" + cells[1] + "' is not in the manifest");
      ref_index = *ri;
      if (r.scores.size() <= ref_index) {
        r.scores.resize(manifest->references().size(),
                        -std::numeric_limits<double>::infinity());
      }
      r.scores[ref_index] = score;
    }
    if (rank == 1) {
      r.best_score = score;
      r.best_index = ref_index;
    }
  }
  return out;
}

int cmd_evaluate(const RunConfig& rc, std::ostream& out) {
  check_exists(rc.manifest, "manifest");
  check_exists(rc.results, "results file");
  if (rc.out.empty()) throw ConfigError("missing --out directory");
  const DatasetManifest manifest = load_manifest(rc.manifest);
  const CsvResults parsed = read_results_csv(rc.results, &manifest);

  const PrCurve curve = pr_curve(parsed.results, manifest);
  const double r1 = recall_at_1(parsed.results, manifest);

  ensure_dir(rc.out);
  std::ostringstream csv, dat;
  csv << "threshold,precision,recall\n";
  dat << "# recall precision threshold\n";
  for (const auto& p : curve.points) {
    csv << fmt_double(p.threshold) << ',' << fmt_double(p.precision) << ','
        << fmt_double(p.recall) << '\n';
    dat << fmt_double(p.recall) << ' ' << fmt_double(p.precision) << ' '
        << fmt_double(p.threshold) << '\n';
  }
  write_text(fs::path(rc.out) / "pr.csv", csv.str());
  write_text(fs::path(rc.out) / "pr.dat", dat.str());
  write_text(fs::path(rc.out) / "pr.json", pr_summary_json(curve, r1).dump(2) + "\n");
  out << "event=pr auc=" << fmt_double(curve.auc) << " recall_at_1=" << fmt_double(r1)
      << " n_queries=" << curve.n_queries << " excluded=" << curve.excluded.size() << '\n';

  std::optional<double> threshold;
  if (!rc.negatives.empty()) {
    check_exists(rc.negatives, "negatives results file");
    const CsvResults negatives = read_results_csv(rc.negatives, nullptr);
    threshold = suggest_threshold(negatives.results);
    out << "event=suggested_threshold theta=" << fmt_double(*threshold)
        << " negatives=" << negatives.results.size() << '\n';
  } else if (rc.threshold_given) {
    threshold = rc.threshold;
  }
  if (threshold) {
    const ThresholdReport report = threshold_partition(parsed.results, manifest, *threshold);
    json outcomes = json::array();
    for (std::size_t q = 0; q < report.outcomes.size(); ++q) {
      const std::string& id = manifest.queries()[q].image_id;
      outcomes.push_back({{"query_id", id}, {"outcome", outcome_name(report.outcomes[q])}});
    }
    write_text(fs::path(rc.out) / "threshold.json",
               json{{"threshold", report.threshold},
                    {"TP", report.tp},
                    {"FN", report.fn},
                    {"FP", report.fp},
                    {"TN", report.tn},
                    {"outcomes", outcomes}}
                       .dump(2) +
                   "\n");
    out << "event=threshold theta=" << fmt_double(report.threshold) << " TP=" << report.tp
        << " FN=" << report.fn << " FP=" << report.fp << " TN=" << report.tn << '\n';
  }
  return kExitOk;
}

int cmd_timing(const RunConfig& rc, std::ostream& out) {
  check_exists(rc.manifest, "manifest");
  check_exists(rc.codebook, "codebook");
  const PipelineConfig cfg = rc.pipeline();
  const DatasetManifest manifest = load_manifest(rc.manifest);
  if (manifest.queries().empty()) throw InputError("timing needs a non-empty query traverse");
  const Codebook codebook = load_codebook(rc.codebook);
  const auto queries = load_tensors(manifest.queries());
  const auto references = load_tensors(manifest.references());

  TimingReport report = run_timing(cfg, codebook, queries, references, rc.iterations);
  out << timing_table(report);
  out << "event=timing extraction_s=" << report.extraction_s.mean
      << " encoding_ms=" << report.encoding_ms.mean
      << " matching_ms=" << report.matching_ms.mean << " iterations=" << report.iterations
      << '\n';
  if (!rc.out.empty()) {
    ensure_dir(rc.out);
    write_text(fs::path(rc.out) / "timing.json", timing_json(report).dump(2) + "\n");
    write_text(fs::path(rc.out) / "timing.txt", timing_table(report));
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  CLI::App app{"Region-based VLAD place recognition engine", "rvlad"};
  app.require_subcommand(1);

  auto* vocab = app.add_subcommand("build-vocab", "Train the regional codebook");
  add_common(vocab, rc);
  add_region_options(vocab, rc);
  vocab->add_option("--manifest", rc.manifest, "Manifest of vocabulary tensors")->required();
  vocab->add_option("-o,--out", rc.out, "Codebook output path")->required();
  vocab->add_option("--vocab-top-n", rc.vocab_top_n, "Regions per image for training");
  vocab->add_option("-V,--clusters", rc.clusters, "Codebook size");
  vocab->add_option("--seed", rc.seed);
  vocab->add_option("--max-iters", rc.max_iters);
  vocab->add_option("--tol", rc.tol, "Mean centroid displacement for convergence");
  vocab->add_option("--init", rc.init, "plus-plus or random-points");
  vocab->add_option("--restarts", rc.restarts);
  vocab->add_flag("--no-hartigan", rc.no_hartigan, "Plain Lloyd without transfer refinement");

  auto* encode = app.add_subcommand("encode", "Encode one traverse into a VLAD store");
  add_common(encode, rc);
  add_region_options(encode, rc);
  encode->add_option("--manifest", rc.manifest)->required();
  encode->add_option("--codebook", rc.codebook)->required();
  encode->add_option("--traverse", rc.traverse)->check(CLI::IsMember({"query", "reference"}));
  encode->add_option("-o,--out", rc.out, "VLAD store output path")->required();
  encode->add_option("--gamma", rc.gamma, "Power-normalization exponent");
  encode->add_option("--dump-regions", rc.dump_regions, "Directory for per-image region JSON");

  auto* match = app.add_subcommand("match", "Match a query store against a reference store");
  add_common(match, rc);
  match->add_option("--queries", rc.queries)->required();
  match->add_option("--references", rc.references)->required();
  match->add_option("-o,--out", rc.out, "Output directory")->required();
  match->add_option("--top-k", rc.top_k, "Ranks written per query (0: all)");
  match->add_flag("--mmap", rc.use_mmap, "Scan the reference store through a memory map");

  auto* evaluate = app.add_subcommand("evaluate", "PR curve, recall@1 and thresholding");
  add_common(evaluate, rc);
  evaluate->add_option("--manifest", rc.manifest)->required();
  evaluate->add_option("--results", rc.results, "results.csv from match")->required();
  evaluate->add_option("-o,--out", rc.out, "Output directory")->required();
  auto* theta = evaluate->add_option("--threshold", rc.threshold, "Score threshold");
  auto* suggest = evaluate->add_option("--suggest-threshold", rc.negatives,
                                       "results.csv of known-negative queries");
  theta->excludes(suggest);

  auto* timing = app.add_subcommand("timing", "Per-stage timing over a dataset");
  add_common(timing, rc);
  add_region_options(timing, rc);
  timing->add_option("--manifest", rc.manifest)->required();
  timing->add_option("--codebook", rc.codebook)->required();
  timing->add_option("--iterations", rc.iterations)->check(CLI::PositiveNumber);
  timing->add_option("--gamma", rc.gamma);
  timing->add_option("-o,--out", rc.out, "Output directory");

  std::vector<std::string> argv_storage{"rvlad"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUser;
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    apply_config_file(active, rc);
    if (active != match && active != evaluate) apply_preset(active, rc);
    rc.threshold_given = theta->count() > 0;

    if (active == vocab) return cmd_build_vocab(rc, out);
    if (active == encode) return cmd_encode(rc, out);
    if (active == match) return cmd_match(rc, out);
    if (active == evaluate) return cmd_evaluate(rc, out);
    return cmd_timing(rc, out);
  } catch (const TrainError& e) {
    err << "error=train message=\"" << e.what() << "\"\n";
    return kExitUser;
  } catch (const Error& e) {
    err << "error=input message=\"" << e.what() << "\"\n";
    return kExitUser;
  } catch (const CLI::Error& e) {
    err << "error=config message=\"" << e.what() << "\"\n";
    return kExitUser;
  } catch (const std::exception& e) {
    err << "error=internal message=\"" << e.what() << "\"\n";
    return kExitInternal;
  }
}

}  // namespace rvlad::cli
