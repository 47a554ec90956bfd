#include "rvlad/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <regex>

#include "rvlad/errors.hpp"

namespace rvlad {

static_assert(std::endian::native == std::endian::little,
              "tensor container codec assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kPreambleV1 = kMagicLen + 2 + 2;
constexpr std::size_t kPreambleV2 = kMagicLen + 2 + 4;

void check_finite(std::span<const float> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw DataError("non-finite activation", i);
    }
  }
}

std::string header_dict(const FeatureTensor& t) {
  return "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(t.channels()) +
         ", " + std::to_string(t.height()) + ", " + std::to_string(t.width()) + "), }";
}

struct ParsedHeader {
  std::vector<std::size_t> shape;
};

ParsedHeader parse_header(const std::string& dict) {
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");

  std::smatch m;
  if (!std::regex_search(dict, m, descr_re)) throw FormatError("npy header: missing descr");
  if (m[1].str() != "<f4") {
    throw FormatError("npy header: unsupported dtype '" + m[1].str() + "', expected '<f4'");
  }
  if (!std::regex_search(dict, m, order_re)) {
    throw FormatError("npy header: missing fortran_order");
  }
  if (m[1].str() != "False") throw FormatError("npy header: fortran_order arrays unsupported");
  if (!std::regex_search(dict, m, shape_re)) throw FormatError("npy header: missing shape");

  ParsedHeader out;
  const std::string dims = m[1].str();
  static const std::regex int_re(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), int_re);
       it != std::sregex_iterator(); ++it) {
    out.shape.push_back(static_cast<std::size_t>(std::stoull(it->str())));
  }
  if (out.shape.size() != 3) {
    throw FormatError("npy header: expected a 3-d shape (K, Y, X), got " +
                      std::to_string(out.shape.size()) + " dims");
  }
  return out;
}

}  // namespace

FeatureTensor::FeatureTensor(std::size_t channels, std::size_t height, std::size_t width,
                             std::vector<float> data, std::string image_id)
    : channels_(channels),
      height_(height),
      width_(width),
      data_(std::move(data)),
      image_id_(std::move(image_id)) {
  if (channels_ == 0 || height_ == 0 || width_ == 0) {
    throw InputError("tensor dimensions must be positive");
  }
  if (data_.size() != channels_ * height_ * width_) {
    throw InputError("tensor data length " + std::to_string(data_.size()) +
                     " does not match K*Y*X = " +
                     std::to_string(channels_ * height_ * width_));
  }
  check_finite(data_);
}

bool operator==(const FeatureTensor& a, const FeatureTensor& b) {
  if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width()) {
    return false;
  }
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

std::vector<char> encode_npy(const FeatureTensor& tensor) {
  std::string dict = header_dict(tensor);
  // Pad with spaces so that the payload starts on a 64-byte boundary.
  std::size_t total = kPreambleV1 + dict.size() + 1;
  std::size_t pad = (64 - total % 64) % 64;
  dict.append(pad, ' ');
  dict.push_back('\n');

  std::vector<char> out;
  out.reserve(kPreambleV1 + dict.size() + tensor.size() * sizeof(float));
  out.insert(out.end(), kMagic, kMagic + kMagicLen);
  out.push_back('\x01');
  out.push_back('\x00');
  auto hlen = static_cast<std::uint16_t>(dict.size());
  out.push_back(static_cast<char>(hlen & 0xff));
  out.push_back(static_cast<char>(hlen >> 8));
  out.insert(out.end(), dict.begin(), dict.end());
  const auto* payload = reinterpret_cast<const char*>(tensor.data().data());
  out.insert(out.end(), payload, payload + tensor.size() * sizeof(float));
  return out;
}

FeatureTensor decode_npy(std::span<const char> bytes, std::string image_id) {
  if (bytes.size() < kPreambleV1 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw FormatError("not an npy file (bad magic)");
  }
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t preamble = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) |
                 (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    preamble = kPreambleV1;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < kPreambleV2) throw FormatError("truncated npy preamble");
    for (int i = 3; i >= 0; --i) {
      header_len = (header_len << 8) | static_cast<unsigned char>(bytes[8 + i]);
    }
    preamble = kPreambleV2;
  } else {
    throw FormatError("unsupported npy version " + std::to_string(major));
  }
  if (bytes.size() < preamble + header_len) throw FormatError("truncated npy header");

  const std::string dict(bytes.data() + preamble, header_len);
  const ParsedHeader header = parse_header(dict);
  for (std::size_t d : header.shape) {
    if (d == 0) throw FormatError("npy shape has a zero dimension");
  }

  const std::size_t count = header.shape[0] * header.shape[1] * header.shape[2];
  const std::size_t payload = bytes.size() - preamble - header_len;
  if (payload != count * sizeof(float)) {
    throw FormatError("npy payload is " + std::to_string(payload) + " bytes, expected " +
                      std::to_string(count * sizeof(float)));
  }
  std::vector<float> data(count);
  std::memcpy(data.data(), bytes.data() + preamble + header_len, payload);
  check_finite(data);
  return FeatureTensor(header.shape[0], header.shape[1], header.shape[2], std::move(data),
                       std::move(image_id));
}

FeatureTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path.string());
  return decode_npy(bytes, path.stem().string());
}

void save_tensor(const FeatureTensor& tensor, const std::filesystem::path& path) {
  const std::vector<char> bytes = encode_npy(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace rvlad
