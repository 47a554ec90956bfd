#pragma once

#include <cstddef>

namespace rvlad::kernels {

// Four interleaved accumulators, combined in a fixed order, so results are
// reproducible bit for bit on a given platform.

template <typename A, typename B>
double squared_distance(const A* a, const B* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const double d0 = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    const double d1 = static_cast<double>(a[i + 1]) - static_cast<double>(b[i + 1]);
    const double d2 = static_cast<double>(a[i + 2]) - static_cast<double>(b[i + 2]);
    const double d3 = static_cast<double>(a[i + 3]) - static_cast<double>(b[i + 3]);
    s0 += d0 * d0;
    s1 += d1 * d1;
    s2 += d2 * d2;
    s3 += d3 * d3;
  }
  for (; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s0 += d * d;
  }
  return (s0 + s1) + (s2 + s3);
}

template <typename A, typename B>
double dot(const A* a, const B* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    s1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    s2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    s3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return (s0 + s1) + (s2 + s3);
}

}  // namespace rvlad::kernels
