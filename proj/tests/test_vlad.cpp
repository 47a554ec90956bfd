#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rvlad/errors.hpp"
#include "rvlad/vlad.hpp"

using namespace rvlad;

namespace {

RegionalFeatures rows(std::size_t k, std::vector<double> data) {
  RegionalFeatures f;
  f.image_id = "img";
  f.cols = k;
  f.rows = data.size() / k;
  f.data = std::move(data);
  return f;
}

double row_norm(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return std::sqrt(s);
}

Codebook random_codebook(std::size_t v, std::size_t k, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  std::vector<float> c(v * k);
  for (float& x : c) x = d(rng);
  return Codebook(v, k, c);
}

RegionalFeatures random_rows(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<double> data(n * k);
  for (double& x : data) x = d(rng);
  return rows(k, data);
}

}  // namespace

TEST_CASE("single residual with equal components normalizes to the diagonal") {
  const Codebook cb(1, 2, {0, 0});
  const auto f = rows(2, {4, 4});
  const VladDescriptor d = encode_vlad(f, {0}, cb, VladConfig{});
  CHECK(d.row(0)[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(d.row(0)[1] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(d.image_id == "img");
}

TEST_CASE("signed power keeps the sign before row normalization") {
  // Residual (4, -9): power 0.5 gives (2, -3), normalized (2, -3) / sqrt(13).
  const Codebook cb(1, 2, {0, 0});
  const VladDescriptor d = encode_vlad(rows(2, {4, -9}), {0}, cb, VladConfig{});
  CHECK(d.row(0)[0] == doctest::Approx(2.0 / std::sqrt(13.0)).epsilon(1e-12));
  CHECK(d.row(0)[1] == doctest::Approx(-3.0 / std::sqrt(13.0)).epsilon(1e-12));
  CHECK(d.row(0)[0] == doctest::Approx(0.5547).epsilon(1e-4));
  CHECK(d.row(0)[1] == doctest::Approx(-0.8321).epsilon(1e-4));
}

TEST_CASE("gamma 1 leaves residual proportions intact") {
  const Codebook cb(1, 2, {0, 0});
  VladConfig cfg;
  cfg.gamma = 1.0;
  const VladDescriptor d = encode_vlad(rows(2, {3, 4}), {0}, cb, cfg);
  CHECK(d.row(0)[0] == doctest::Approx(0.6));
  CHECK(d.row(0)[1] == doctest::Approx(0.8));
}

TEST_CASE("unused clusters and cancelling residuals give zero rows") {
  const Codebook cb(3, 2, {0, 0, 5, 5, 9, 9});
  // Two features of cluster 1 whose residuals cancel; cluster 2 is unused.
  const auto f = rows(2, {1, 1, 4, 4, 6, 6});
  const VladDescriptor d = encode_vlad(f, {0, 1, 1}, cb, VladConfig{});
  CHECK(d.nonzero_rows() == 1);
  CHECK(row_norm(d.row(1)) == 0.0);
  CHECK(row_norm(d.row(2)) == 0.0);
  CHECK(row_norm(d.row(0)) == doctest::Approx(1.0));
}

TEST_CASE("empty feature set encodes to an all-zero descriptor") {
  const Codebook cb(2, 3, std::vector<float>(6, 0.0f));
  const VladDescriptor d = encode_vlad(RegionalFeatures{"e", 0, 3, {}}, {}, cb, VladConfig{});
  CHECK(d.nonzero_rows() == 0);
  CHECK(d.data.size() == 6);
}

TEST_CASE("inconsistent inputs raise InputError, bad gamma raises ConfigError") {
  const Codebook cb(2, 2, {0, 0, 1, 1});
  const auto f = rows(2, {1, 1, 2, 2});
  CHECK_THROWS_AS(encode_vlad(f, {0}, cb, VladConfig{}), InputError);
  CHECK_THROWS_AS(encode_vlad(f, {0, 2}, cb, VladConfig{}), InputError);
  CHECK_THROWS_AS(encode_vlad(rows(3, {1, 1, 1}), {0}, cb, VladConfig{}), InputError);
  VladConfig bad;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(encode_vlad(f, {0, 1}, cb, bad), ConfigError);
  bad.gamma = 1.5;
  CHECK_THROWS_AS(encode_vlad(f, {0, 1}, cb, bad), ConfigError);
}

TEST_CASE("property: VLAD agrees with the straight-line oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t V = 1 + rng() % 12, K = 1 + rng() % 10, N = rng() % 40;
    const Codebook cb = random_codebook(V, K, rng);
    const RegionalFeatures f = random_rows(N, K, rng);
    const Labels labels = quantize(f, cb);
    VladConfig cfg;
    cfg.gamma = trial % 3 == 0 ? 0.5 : 0.25 + 0.75 * (trial % 7) / 6.0;
    const VladDescriptor d = encode_vlad(f, labels, cb, cfg);
    const auto expected = oracle::vlad(f, labels, cb, cfg.gamma);
    for (std::size_t i = 0; i < expected.size(); ++i) {
      REQUIRE(d.data[i] == doctest::Approx(expected[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("property: rows are unit length or zero, zero rows track unused clusters") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t V = 2 + rng() % 20, K = 2 + rng() % 16, N = rng() % 30;
    const Codebook cb = random_codebook(V, K, rng);
    const RegionalFeatures f = random_rows(N, K, rng);
    const Labels labels = quantize(f, cb);
    const VladDescriptor d = encode_vlad(f, labels, cb, VladConfig{});
    std::vector<bool> used(V, false);
    for (auto u : labels) used[u] = true;
    std::size_t zero = 0;
    for (std::size_t u = 0; u < V; ++u) {
      const double n = row_norm(d.row(u));
      if (n == 0.0) {
        ++zero;
      } else {
        REQUIRE(std::fabs(n - 1.0) < 1e-6);
      }
      if (!used[u]) REQUIRE(n == 0.0);
    }
    REQUIRE(zero >= V - static_cast<std::size_t>(std::count(used.begin(), used.end(), true)));
  }
}

TEST_CASE("property: reordering regional features leaves the descriptor unchanged") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t V = 6, K = 5, N = 25;
    const Codebook cb = random_codebook(V, K, rng);
    const RegionalFeatures f = random_rows(N, K, rng);
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    RegionalFeatures g = f;
    for (std::size_t t = 0; t < N; ++t) {
      std::copy(f.row(perm[t]).begin(), f.row(perm[t]).end(), g.data.begin() + t * K);
    }
    const VladDescriptor a = encode_vlad(f, quantize(f, cb), cb, VladConfig{});
    const VladDescriptor b = encode_vlad(g, quantize(g, cb), cb, VladConfig{});
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      REQUIRE(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-9));
    }
  }
}
