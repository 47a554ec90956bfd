#include "rvlad/codebook.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

#include <json.hpp>

#include "rvlad/errors.hpp"
#include "rvlad/kernels.hpp"
#include "rvlad/parallel.hpp"

namespace rvlad {

void KMeansConfig::validate() const {
  if (clusters < 1) throw ConfigError("number of clusters must be positive");
  if (max_iters < 1) throw ConfigError("max_iters must be positive");
  if (restarts < 1) throw ConfigError("restarts must be positive");
  if (!(tol >= 0.0)) throw ConfigError("tol must be non-negative");
}

Codebook::Codebook(std::size_t clusters, std::size_t dims, std::vector<float> centroids,
                   TrainMeta meta)
    : clusters_(clusters), dims_(dims), centroids_(std::move(centroids)), meta_(std::move(meta)) {
  if (clusters_ == 0 || dims_ == 0) throw InputError("codebook dimensions must be positive");
  if (centroids_.size() != clusters_ * dims_) {
    throw InputError("codebook payload does not match V*K");
  }
  for (std::size_t i = 0; i < centroids_.size(); ++i) {
    if (!std::isfinite(centroids_[i])) throw DataError("non-finite centroid value", i);
  }
}

namespace {

constexpr std::size_t kChunkRows = 512;

struct Dataset {
  std::size_t rows = 0;
  std::size_t dims = 0;
  std::vector<double> values;

  const double* row(std::size_t i) const { return values.data() + i * dims; }
};

Dataset flatten(std::span<const RegionalFeatures> features) {
  Dataset d;
  bool have_dims = false;
  for (const auto& f : features) {
    if (f.rows == 0) continue;
    if (!have_dims) {
      d.dims = f.cols;
      have_dims = true;
    } else if (f.cols != d.dims) {
      throw InputError("regional feature width mismatch: " + std::to_string(f.cols) + " vs " +
                       std::to_string(d.dims));
    }
    d.rows += f.rows;
  }
  d.values.reserve(d.rows * d.dims);
  for (const auto& f : features) {
    d.values.insert(d.values.end(), f.data.begin(), f.data.begin() +
                                                        static_cast<std::ptrdiff_t>(f.rows * f.cols));
  }
  return d;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

[[noreturn]] void insufficient_distinct() {
  throw TrainError("insufficient features: fewer distinct feature rows than clusters");
}

class Lloyd {
 public:
  Lloyd(const Dataset& data, std::size_t clusters, std::size_t workers)
      : data_(data),
        V_(clusters),
        K_(data.dims),
        workers_(workers),
        centroids_(clusters * data.dims),
        labels_(data.rows, 0),
        dists_(data.rows, 0.0),
        counts_(clusters, 0) {}

  std::vector<double>& centroids() { return centroids_; }
  const std::vector<std::uint32_t>& labels() const { return labels_; }

  void run(const KMeansConfig& cfg, TrainMeta& meta) {
    meta.inertia_history.clear();
    meta.iterations_run = 0;
    bool settled = lloyd_phase(cfg, meta);
    if (cfg.hartigan_refine) {
      while (settled) {
        if (!hartigan_sweep(cfg, meta)) break;
        settled = lloyd_phase(cfg, meta);
      }
    }
    meta.final_inertia = meta.inertia_history.empty() ? 0.0 : meta.inertia_history.back();
  }

 private:
  // Returns true when the phase ended on a stable assignment rather than on
  // the iteration budget or the displacement tolerance.
  bool lloyd_phase(const KMeansConfig& cfg, TrainMeta& meta) {
    bool first = true;
    while (meta.iterations_run < cfg.max_iters) {
      std::vector<std::uint32_t> previous_labels = labels_;
      std::vector<double> previous_centroids = centroids_;

      assign();
      reseed_empty();
      const double inertia = total_inertia();
      if (!meta.inertia_history.empty() && inertia > meta.inertia_history.back()) {
        // Rounding noise at a fixed point; keep the better state.
        labels_ = std::move(previous_labels);
        centroids_ = std::move(previous_centroids);
        recount();
        return true;
      }
      meta.inertia_history.push_back(inertia);
      ++meta.iterations_run;

      const bool changed = first || labels_ != previous_labels;
      first = false;
      std::vector<double> old = centroids_;
      recompute_means();
      double displacement = 0.0;
      for (std::size_t u = 0; u < V_; ++u) {
        displacement += std::sqrt(
            kernels::squared_distance(old.data() + u * K_, centroids_.data() + u * K_, K_));
      }
      displacement /= static_cast<double>(V_);
      if (!changed) return true;
      if (displacement < cfg.tol) return false;
    }
    return false;
  }

  void assign() {
    const std::size_t n = data_.rows;
    const std::size_t chunks = (n + kChunkRows - 1) / kChunkRows;
    parallel_for(chunks, workers_, [&](std::size_t c) {
      const std::size_t end = std::min(n, (c + 1) * kChunkRows);
      for (std::size_t i = c * kChunkRows; i < end; ++i) {
        const double* x = data_.row(i);
        std::uint32_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u < V_; ++u) {
          const double d = kernels::squared_distance(x, centroids_.data() + u * K_, K_);
          if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(u);
          }
        }
        labels_[i] = best;
        dists_[i] = best_d;
      }
    });
    recount();
  }

  void recount() {
    std::fill(counts_.begin(), counts_.end(), 0);
    for (std::uint32_t l : labels_) ++counts_[l];
  }

  void reseed_empty() {
    for (std::size_t u = 0; u < V_; ++u) {
      if (counts_[u] != 0) continue;
      std::size_t far = data_.rows;
      double far_d = 0.0;
      for (std::size_t i = 0; i < data_.rows; ++i) {
        if (counts_[labels_[i]] > 1 && dists_[i] > far_d) {
          far_d = dists_[i];
          far = i;
        }
      }
      if (far == data_.rows) insufficient_distinct();
      --counts_[labels_[far]];
      labels_[far] = static_cast<std::uint32_t>(u);
      counts_[u] = 1;
      dists_[far] = 0.0;
      std::copy_n(data_.row(far), K_, centroids_.data() + u * K_);
    }
  }

  double total_inertia() const {
    double total = 0.0;
    for (double d : dists_) total += d;
    return total;
  }

  void recompute_means() {
    std::fill(centroids_.begin(), centroids_.end(), 0.0);
    for (std::size_t i = 0; i < data_.rows; ++i) {
      double* c = centroids_.data() + labels_[i] * K_;
      const double* x = data_.row(i);
      for (std::size_t k = 0; k < K_; ++k) c[k] += x[k];
    }
    for (std::size_t u = 0; u < V_; ++u) {
      const double inv = 1.0 / static_cast<double>(counts_[u]);
      double* c = centroids_.data() + u * K_;
      for (std::size_t k = 0; k < K_; ++k) c[k] *= inv;
    }
  }

  // One pass of single-point transfers over all rows. Returns true if any
  // row moved and the inertia dropped.
  bool hartigan_sweep(const KMeansConfig& cfg, TrainMeta& meta) {
    if (meta.inertia_history.empty()) return false;
    std::vector<std::uint32_t> saved_labels = labels_;
    std::vector<double> saved_centroids = centroids_;
    std::vector<std::size_t> saved_counts = counts_;

    bool moved = false;
    for (std::size_t i = 0; i < data_.rows; ++i) {
      const std::uint32_t a = labels_[i];
      const std::size_t na = counts_[a];
      if (na <= 1) continue;
      const double* x = data_.row(i);
      double* ca = centroids_.data() + a * K_;
      const double remove_gain = static_cast<double>(na) / static_cast<double>(na - 1) *
                                 kernels::squared_distance(x, ca, K_);
      std::size_t best = V_;
      double best_cost = remove_gain;
      for (std::size_t b = 0; b < V_; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(counts_[b]);
        const double cost =
            nb / (nb + 1.0) * kernels::squared_distance(x, centroids_.data() + b * K_, K_);
        if (cost < best_cost) {
          best_cost = cost;
          best = b;
        }
      }
      if (best == V_ || !(best_cost < remove_gain * (1.0 - 1e-12))) continue;

      const double da = static_cast<double>(na);
      const double db = static_cast<double>(counts_[best]);
      double* cb = centroids_.data() + best * K_;
      for (std::size_t k = 0; k < K_; ++k) {
        ca[k] = (da * ca[k] - x[k]) / (da - 1.0);
        cb[k] = (db * cb[k] + x[k]) / (db + 1.0);
      }
      --counts_[a];
      ++counts_[best];
      labels_[i] = static_cast<std::uint32_t>(best);
      moved = true;
    }
    if (!moved) return false;

    recompute_means();
    for (std::size_t i = 0; i < data_.rows; ++i) {
      dists_[i] = kernels::squared_distance(data_.row(i), centroids_.data() + labels_[i] * K_, K_);
    }
    const double inertia = total_inertia();
    if (!(inertia < meta.inertia_history.back()) || meta.iterations_run >= cfg.max_iters) {
      labels_ = std::move(saved_labels);
      centroids_ = std::move(saved_centroids);
      counts_ = std::move(saved_counts);
      return false;
    }
    meta.inertia_history.push_back(inertia);
    return true;
  }

  const Dataset& data_;
  std::size_t V_;
  std::size_t K_;
  std::size_t workers_;
  std::vector<double> centroids_;
  std::vector<std::uint32_t> labels_;
  std::vector<double> dists_;
  std::vector<std::size_t> counts_;
};

void init_plus_plus(const Dataset& data, std::size_t V, std::mt19937_64& rng,
                    std::vector<double>& centroids) {
  const std::size_t n = data.rows;
  const std::size_t K = data.dims;
  std::size_t first = std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * n));
  std::copy_n(data.row(first), K, centroids.data());

  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = kernels::squared_distance(data.row(i), data.row(first), K);

  for (std::size_t u = 1; u < V; ++u) {
    double total = 0.0;
    for (double d : d2) total += d;
    if (!(total > 0.0)) insufficient_distinct();
    const double target = uniform01(rng) * total;
    double cumulative = 0.0;
    std::size_t pick = n;
    std::size_t last_positive = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      last_positive = i;
      cumulative += d2[i];
      if (cumulative > target) {
        pick = i;
        break;
      }
    }
    if (pick == n) pick = last_positive;
    double* c = centroids.data() + u * K;
    std::copy_n(data.row(pick), K, c);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], kernels::squared_distance(data.row(i), c, K));
    }
  }
}

void init_random_points(const Dataset& data, std::size_t V, std::mt19937_64& rng,
                        std::vector<double>& centroids) {
  std::vector<std::size_t> idx(data.rows);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t u = 0; u < V; ++u) {
    const std::size_t span = idx.size() - u;
    const std::size_t j = u + std::min(span - 1, static_cast<std::size_t>(uniform01(rng) * span));
    std::swap(idx[u], idx[j]);
    std::copy_n(data.row(idx[u]), data.dims, centroids.data() + u * data.dims);
  }
}

Codebook finish(const Dataset& data, std::size_t V, std::vector<double> centroids,
                TrainMeta meta) {
  std::vector<float> narrowed(centroids.size());
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    narrowed[i] = static_cast<float>(centroids[i]);
  }
  const std::size_t K = data.dims;
  for (std::size_t a = 0; a < V; ++a) {
    for (std::size_t b = a + 1; b < V; ++b) {
      if (std::equal(narrowed.begin() + a * K, narrowed.begin() + (a + 1) * K,
                     narrowed.begin() + b * K)) {
        insufficient_distinct();
      }
    }
  }
  return Codebook(V, K, std::move(narrowed), std::move(meta));
}

Dataset checked_dataset(std::span<const RegionalFeatures> features, const KMeansConfig& cfg) {
  cfg.validate();
  Dataset data = flatten(features);
  if (data.rows < cfg.clusters) {
    throw TrainError("insufficient features: " + std::to_string(data.rows) +
                     " regional feature rows for " + std::to_string(cfg.clusters) + " clusters");
  }
  return data;
}

}  // namespace

Codebook train_codebook(std::span<const RegionalFeatures> features, const KMeansConfig& cfg,
                        std::size_t workers) {
  const Dataset data = checked_dataset(features, cfg);
  const std::size_t V = cfg.clusters;

  std::vector<double> best_centroids;
  TrainMeta best_meta;
  bool have_best = false;
  for (std::size_t restart = 0; restart < cfg.restarts; ++restart) {
    std::mt19937_64 rng(cfg.seed + 0x9E3779B97F4A7C15ULL * restart);
    Lloyd lloyd(data, V, workers);
    if (cfg.init == KMeansInit::kPlusPlus) {
      init_plus_plus(data, V, rng, lloyd.centroids());
    } else {
      init_random_points(data, V, rng, lloyd.centroids());
    }
    TrainMeta meta;
    meta.seed = cfg.seed;
    lloyd.run(cfg, meta);
    if (!have_best || meta.final_inertia < best_meta.final_inertia) {
      best_centroids = lloyd.centroids();
      best_meta = std::move(meta);
      have_best = true;
    }
  }
  return finish(data, V, std::move(best_centroids), std::move(best_meta));
}

Codebook train_codebook_from(std::span<const RegionalFeatures> features,
                             std::span<const double> initial_centroids, const KMeansConfig& cfg,
                             std::size_t workers) {
  const Dataset data = checked_dataset(features, cfg);
  if (initial_centroids.size() != cfg.clusters * data.dims) {
    throw InputError("initial centroids do not match V x K");
  }
  Lloyd lloyd(data, cfg.clusters, workers);
  std::copy(initial_centroids.begin(), initial_centroids.end(), lloyd.centroids().begin());
  TrainMeta meta;
  meta.seed = cfg.seed;
  lloyd.run(cfg, meta);
  return finish(data, cfg.clusters, std::move(lloyd.centroids()), std::move(meta));
}

Labels quantize(const RegionalFeatures& features, const Codebook& codebook) {
  if (features.rows > 0 && features.cols != codebook.dims()) {
    throw InputError("feature width " + std::to_string(features.cols) +
                     " does not match codebook K=" + std::to_string(codebook.dims()));
  }
  const std::size_t K = codebook.dims();
  const std::size_t V = codebook.clusters();
  const std::vector<double> centroids(codebook.centroids().begin(), codebook.centroids().end());
  Labels labels(features.rows, 0);

  // A block of rows shares each centroid while it is hot in cache.
  constexpr std::size_t kBlock = 8;
  std::array<double, kBlock> best_d{};
  for (std::size_t t0 = 0; t0 < features.rows; t0 += kBlock) {
    const std::size_t rows = std::min(kBlock, features.rows - t0);
    best_d.fill(std::numeric_limits<double>::infinity());
    for (std::size_t u = 0; u < V; ++u) {
      const double* c = centroids.data() + u * K;
      for (std::size_t i = 0; i < rows; ++i) {
        const double d = kernels::squared_distance(features.data.data() + (t0 + i) * K, c, K);
        if (d < best_d[i]) {
          best_d[i] = d;
          labels[t0 + i] = static_cast<std::uint32_t>(u);
        }
      }
    }
  }
  return labels;
}

namespace {

constexpr char kCodebookMagic[5] = {'R', 'V', 'C', 'B', '1'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("truncated codebook header in " + path.string());
  return value;
}

}  // namespace

void save_codebook(const Codebook& codebook, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kCodebookMagic, sizeof(kCodebookMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(codebook.clusters()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(codebook.dims()));
    put<std::uint64_t>(out, codebook.meta().seed);
    out.write(reinterpret_cast<const char*>(codebook.centroids().data()),
              static_cast<std::streamsize>(codebook.centroids().size() * sizeof(float)));
    if (!out) throw IoError("write failure on " + path.string());
  }
  const TrainMeta& meta = codebook.meta();
  nlohmann::json sidecar = {{"V", codebook.clusters()},
                            {"K", codebook.dims()},
                            {"seed", meta.seed},
                            {"iterations_run", meta.iterations_run},
                            {"final_inertia", meta.final_inertia},
                            {"inertia_history", meta.inertia_history}};
  std::ofstream out(path.string() + ".json", std::ios::trunc);
  if (!out) throw IoError("cannot write codebook sidecar for " + path.string());
  out << sidecar.dump(2) << '\n';
}

Codebook load_codebook(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open codebook " + path.string());
  char magic[sizeof(kCodebookMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCodebookMagic, sizeof(magic)) != 0) {
    throw FormatError(path.string() + " is not a codebook file");
  }
  const auto V = get<std::uint32_t>(in, path);
  const auto K = get<std::uint32_t>(in, path);
  TrainMeta meta;
  meta.seed = get<std::uint64_t>(in, path);
  if (V == 0 || K == 0) throw FormatError("codebook header has a zero dimension");

  std::vector<float> centroids(static_cast<std::size_t>(V) * K);
  in.read(reinterpret_cast<char*>(centroids.data()),
          static_cast<std::streamsize>(centroids.size() * sizeof(float)));
  if (!in) throw FormatError("truncated codebook payload in " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after codebook payload in " + path.string());
  }

  std::ifstream side(path.string() + ".json");
  if (side) {
    try {
      const auto doc = nlohmann::json::parse(side);
      meta.iterations_run = doc.value("iterations_run", std::size_t{0});
      meta.final_inertia = doc.value("final_inertia", 0.0);
      meta.inertia_history = doc.value("inertia_history", std::vector<double>{});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed codebook sidecar: " + std::string(e.what()));
    }
  }
  return Codebook(V, K, std::move(centroids), std::move(meta));
}

}  // namespace rvlad
