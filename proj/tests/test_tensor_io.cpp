#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "rvlad/errors.hpp"
#include "rvlad/synthetic.hpp"
#include "rvlad/tensor.hpp"

using namespace rvlad;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "rvlad_tensor_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("2x2x2 tensor round-trips with its values in order") {
  std::vector<float> values{0, 1, 2, 3, 4, 5, 6, 7};
  const FeatureTensor t(2, 2, 2, values, "t");
  const auto path = scratch("t222.npy");
  save_tensor(t, path);
  const FeatureTensor back = load_tensor(path);
  CHECK(back.channels() == 2);
  CHECK(back.height() == 2);
  CHECK(back.width() == 2);
  CHECK(std::vector<float>(back.data().begin(), back.data().end()) == values);
  CHECK(back.at(1, 0, 1) == 5.0f);
  CHECK(back.image_id() == "t222");
}

TEST_CASE("header is npy v1.0 with a 64-byte aligned payload") {
  const FeatureTensor t(3, 2, 5, std::vector<float>(30, 1.5f));
  const auto bytes = encode_npy(t);
  REQUIRE(bytes.size() > 10);
  CHECK(std::memcmp(bytes.data(), "\x93NUMPY\x01\x00", 8) == 0);
  const std::size_t header_len = static_cast<unsigned char>(bytes[8]) |
                                 (static_cast<unsigned char>(bytes[9]) << 8);
  CHECK((10 + header_len) % 64 == 0);
  const std::string dict(bytes.data() + 10, header_len);
  CHECK(dict.find("'descr': '<f4'") != std::string::npos);
  CHECK(dict.find("'fortran_order': False") != std::string::npos);
  CHECK(dict.find("'shape': (3, 2, 5)") != std::string::npos);
  CHECK(dict.back() == '\n');
  CHECK(bytes.size() == 10 + header_len + 30 * sizeof(float));
}

TEST_CASE("NaN is reported with its flat index") {
  std::vector<float> values(8, 0.0f);
  const FeatureTensor good(2, 2, 2, values);
  auto bytes = encode_npy(good);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + bytes.size() - 3 * sizeof(float), &nan, sizeof(float));
  try {
    decode_npy(bytes);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.index() == 5);
  }
  values[2] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(FeatureTensor(2, 2, 2, values), DataError);
}

TEST_CASE("conv3-sized zero tensor holds 64896 values") {
  const FeatureTensor t(384, 13, 13, std::vector<float>(384 * 13 * 13, 0.0f));
  const auto path = scratch("conv3.npy");
  save_tensor(t, path);
  const FeatureTensor back = load_tensor(path);
  CHECK(back.size() == 64896);
  CHECK(back == t);
}

TEST_CASE("single-value tensor round-trips") {
  const FeatureTensor t(1, 1, 1, {0.0f});
  const auto path = scratch("one.npy");
  save_tensor(t, path);
  CHECK(load_tensor(path) == t);
}

TEST_CASE("zero-sized dimensions are rejected at construction") {
  CHECK_THROWS_AS(FeatureTensor(0, 2, 2, {}), InputError);
  CHECK_THROWS_AS(FeatureTensor(1, 2, 2, std::vector<float>(3)), InputError);
}

TEST_CASE("malformed containers raise FormatError") {
  const FeatureTensor t(1, 2, 2, {1, 2, 3, 4});
  const auto good = encode_npy(t);

  auto bad_magic = good;
  bad_magic[1] = 'X';
  CHECK_THROWS_AS(decode_npy(bad_magic), FormatError);

  std::string f8 = std::string(good.begin(), good.end());
  f8.replace(f8.find("<f4"), 3, "<f8");
  CHECK_THROWS_AS(decode_npy(std::vector<char>(f8.begin(), f8.end())), FormatError);

  std::string fortran = std::string(good.begin(), good.end());
  fortran.replace(fortran.find("False"), 5, "True ");
  CHECK_THROWS_AS(decode_npy(std::vector<char>(fortran.begin(), fortran.end())), FormatError);

  std::string two_d = std::string(good.begin(), good.end());
  two_d.replace(two_d.find("(1, 2, 2)"), 9, "(2, 2)   ");
  CHECK_THROWS_AS(decode_npy(std::vector<char>(two_d.begin(), two_d.end())), FormatError);

  auto truncated = good;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_npy(truncated), FormatError);

  CHECK_THROWS_AS(load_tensor(scratch("does_not_exist.npy")), IoError);
}

TEST_CASE("save into a missing directory raises IoError") {
  const FeatureTensor t(1, 1, 1, {1.0f});
  CHECK_THROWS_AS(save_tensor(t, scratch("missing_dir") / "x" / "t.npy"), IoError);
}

TEST_CASE("property: random tensors round-trip bit-exactly across 1000 seeds") {
  const auto path = scratch("prop.npy");
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<float> values(4 * 8 * 8);
    // Arbitrary finite bit patterns, including subnormals and negative zero.
    for (float& v : values) {
      do {
        const auto bits = static_cast<std::uint32_t>(rng());
        std::memcpy(&v, &bits, sizeof(v));
      } while (!std::isfinite(v));
    }
    const FeatureTensor t(4, 8, 8, values);
    save_tensor(t, path);
    const auto first = slurp(path);
    const FeatureTensor back = load_tensor(path);
    REQUIRE(back == t);
    save_tensor(back, path);
    REQUIRE(slurp(path) == first);
  }
}
