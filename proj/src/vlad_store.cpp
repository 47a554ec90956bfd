#include "rvlad/vlad_store.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <utility>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include "rvlad/errors.hpp"

namespace rvlad {

static_assert(std::endian::native == std::endian::little);

namespace {

constexpr char kMagic[5] = {'R', 'V', 'L', 'D', '1'};
constexpr std::size_t kHeaderBytes = sizeof(kMagic) + 8 + 4 + 4;

template <typename T>
void append(std::vector<char>& out, T value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T read_at(const char* base, std::size_t length, std::size_t offset) {
  if (offset + sizeof(T) > length) throw FormatError("truncated VLAD store");
  T value;
  std::memcpy(&value, base + offset, sizeof(T));
  return value;
}

struct Layout {
  std::size_t clusters = 0;
  std::size_t dims = 0;
  std::vector<std::size_t> offsets;
};

Layout scan(const char* base, std::size_t length) {
  if (length < kHeaderBytes || std::memcmp(base, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a VLAD store (bad magic)");
  }
  Layout layout;
  const auto count = read_at<std::uint64_t>(base, length, 5);
  layout.clusters = read_at<std::uint32_t>(base, length, 13);
  layout.dims = read_at<std::uint32_t>(base, length, 17);
  const std::size_t payload = layout.clusters * layout.dims * sizeof(float);
  std::size_t offset = kHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i) {
    layout.offsets.push_back(offset);
    const auto id_len = read_at<std::uint32_t>(base, length, offset);
    offset += 4 + id_len + payload;
    if (offset > length) throw FormatError("truncated VLAD store record " + std::to_string(i));
  }
  if (offset != length) throw FormatError("trailing bytes after VLAD store records");
  return layout;
}

}  // namespace

VladStore::VladStore(std::vector<VladDescriptor> descriptors) {
  for (auto& d : descriptors) add(std::move(d));
}

void VladStore::add(VladDescriptor descriptor) {
  if (descriptors_.empty()) {
    clusters_ = descriptor.clusters;
    dims_ = descriptor.dims;
  } else if (descriptor.clusters != clusters_ || descriptor.dims != dims_) {
    throw InputError("descriptor shape " + std::to_string(descriptor.clusters) + "x" +
                     std::to_string(descriptor.dims) + " does not match store shape " +
                     std::to_string(clusters_) + "x" + std::to_string(dims_));
  }
  descriptors_.push_back(std::move(descriptor));
}

void save_vlad_store(const VladStore& store, const std::filesystem::path& path) {
  std::vector<char> bytes(kMagic, kMagic + sizeof(kMagic));
  append<std::uint64_t>(bytes, store.size());
  append<std::uint32_t>(bytes, static_cast<std::uint32_t>(store.clusters()));
  append<std::uint32_t>(bytes, static_cast<std::uint32_t>(store.dims()));
  for (const auto& d : store.descriptors()) {
    append<std::uint32_t>(bytes, static_cast<std::uint32_t>(d.image_id.size()));
    bytes.insert(bytes.end(), d.image_id.begin(), d.image_id.end());
    for (double v : d.data) append<float>(bytes, static_cast<float>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

VladStore load_vlad_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open VLAD store " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  const Layout layout = scan(bytes.data(), bytes.size());
  const std::size_t n = layout.clusters * layout.dims;
  VladStore store;
  std::vector<float> row(n);
  for (std::size_t offset : layout.offsets) {
    const auto id_len = read_at<std::uint32_t>(bytes.data(), bytes.size(), offset);
    VladDescriptor d;
    d.image_id.assign(bytes.data() + offset + 4, id_len);
    d.clusters = layout.clusters;
    d.dims = layout.dims;
    std::memcpy(row.data(), bytes.data() + offset + 4 + id_len, n * sizeof(float));
    d.data.assign(row.begin(), row.end());
    store.add(std::move(d));
  }
  return store;
}

MappedVladStore::MappedVladStore(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw IoError("cannot open VLAD store " + path.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw IoError("cannot stat " + path.string());
  }
  length_ = static_cast<std::size_t>(st.st_size);
  if (length_ > 0) {
    void* p = ::mmap(nullptr, length_, PROT_READ, MAP_PRIVATE, fd, 0);
    ::close(fd);
    if (p == MAP_FAILED) throw IoError("cannot map " + path.string());
    base_ = static_cast<const char*>(p);
  } else {
    ::close(fd);
  }
  try {
    Layout layout = scan(base_ ? base_ : "", length_);
    clusters_ = layout.clusters;
    dims_ = layout.dims;
    offsets_ = std::move(layout.offsets);
  } catch (...) {
    if (base_) ::munmap(const_cast<char*>(base_), length_);
    throw;
  }
}

MappedVladStore::~MappedVladStore() {
  if (base_) ::munmap(const_cast<char*>(base_), length_);
}

MappedVladStore::MappedVladStore(MappedVladStore&& other) noexcept
    : base_(std::exchange(other.base_, nullptr)),
      length_(std::exchange(other.length_, 0)),
      clusters_(other.clusters_),
      dims_(other.dims_),
      offsets_(std::move(other.offsets_)) {}

std::string_view MappedVladStore::id(std::size_t i) const {
  const std::size_t offset = offsets_.at(i);
  const auto id_len = read_at<std::uint32_t>(base_, length_, offset);
  return {base_ + offset + 4, id_len};
}

void MappedVladStore::read(std::size_t i, std::vector<float>& out) const {
  const std::size_t offset = offsets_.at(i);
  const auto id_len = read_at<std::uint32_t>(base_, length_, offset);
  out.resize(clusters_ * dims_);
  std::memcpy(out.data(), base_ + offset + 4 + id_len, out.size() * sizeof(float));
}

}  // namespace rvlad
