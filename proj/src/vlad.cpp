#include "rvlad/vlad.hpp"

#include <algorithm>
#include <cmath>

#include "rvlad/errors.hpp"
#include "rvlad/kernels.hpp"

namespace rvlad {

void VladConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
}

std::size_t VladDescriptor::nonzero_rows() const {
  std::size_t count = 0;
  for (std::size_t u = 0; u < clusters; ++u) {
    const auto r = row(u);
    if (std::any_of(r.begin(), r.end(), [](double v) { return v != 0.0; })) ++count;
  }
  return count;
}

VladDescriptor encode_vlad(const RegionalFeatures& features, const Labels& labels,
                           const Codebook& codebook, const VladConfig& cfg) {
  cfg.validate();
  if (labels.size() != features.rows) {
    throw InputError("label count " + std::to_string(labels.size()) +
                     " does not match regional feature rows " + std::to_string(features.rows));
  }
  const std::size_t V = codebook.clusters();
  const std::size_t K = codebook.dims();
  if (features.rows > 0 && features.cols != K) {
    throw InputError("feature width " + std::to_string(features.cols) +
                     " does not match codebook K=" + std::to_string(K));
  }

  VladDescriptor out;
  out.image_id = features.image_id;
  out.clusters = V;
  out.dims = K;
  out.gamma = cfg.gamma;
  out.data.assign(V * K, 0.0);

  for (std::size_t t = 0; t < features.rows; ++t) {
    const std::uint32_t u = labels[t];
    if (u >= V) throw InputError("label " + std::to_string(u) + " outside codebook");
    const auto f = features.row(t);
    const auto c = codebook.centroid(u);
    double* acc = out.data.data() + u * K;
    for (std::size_t k = 0; k < K; ++k) acc[k] += f[k] - static_cast<double>(c[k]);
  }

  const bool square_root = cfg.gamma == 0.5;
  for (std::size_t u = 0; u < V; ++u) {
    double* v = out.data.data() + u * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double mag = square_root ? std::sqrt(std::abs(v[k])) : std::pow(std::abs(v[k]), cfg.gamma);
      v[k] = std::copysign(mag, v[k]);
    }
    const double norm = std::sqrt(kernels::dot(v, v, K));
    if (norm > 0.0) {
      for (std::size_t k = 0; k < K; ++k) v[k] /= norm;
    } else {
      std::fill(v, v + K, 0.0);
    }
  }
  return out;
}

}  // namespace rvlad
