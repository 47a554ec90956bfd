#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rvlad/vlad.hpp"

namespace rvlad {

// In-memory reference database; every descriptor shares one V x K shape.
class VladStore {
 public:
  VladStore() = default;
  explicit VladStore(std::vector<VladDescriptor> descriptors);

  void add(VladDescriptor descriptor);
  std::size_t size() const noexcept { return descriptors_.size(); }
  bool empty() const noexcept { return descriptors_.empty(); }
  std::size_t clusters() const noexcept { return clusters_; }
  std::size_t dims() const noexcept { return dims_; }
  const VladDescriptor& operator[](std::size_t i) const { return descriptors_.at(i); }
  const std::vector<VladDescriptor>& descriptors() const noexcept { return descriptors_; }

 private:
  std::vector<VladDescriptor> descriptors_;
  std::size_t clusters_ = 0;
  std::size_t dims_ = 0;
};

// File layout (little-endian): "RVLD1", u64 count, u32 V, u32 K, then per
// record u32 id length, id bytes, V*K float32.
void save_vlad_store(const VladStore& store, const std::filesystem::path& path);
VladStore load_vlad_store(const std::filesystem::path& path);

// Read-only memory map of a store file for sequential scans without loading
// every record. Record payloads are not aligned, so rows are copied out.
class MappedVladStore {
 public:
  explicit MappedVladStore(const std::filesystem::path& path);
  ~MappedVladStore();
  MappedVladStore(const MappedVladStore&) = delete;
  MappedVladStore& operator=(const MappedVladStore&) = delete;
  MappedVladStore(MappedVladStore&& other) noexcept;
  MappedVladStore& operator=(MappedVladStore&&) = delete;

  std::size_t size() const noexcept { return offsets_.size(); }
  std::size_t clusters() const noexcept { return clusters_; }
  std::size_t dims() const noexcept { return dims_; }

  std::string_view id(std::size_t i) const;
  // Copies record i into `out` (resized to V*K).
  void read(std::size_t i, std::vector<float>& out) const;

 private:
  const char* base_ = nullptr;
  std::size_t length_ = 0;
  std::size_t clusters_ = 0;
  std::size_t dims_ = 0;
  std::vector<std::size_t> offsets_;  // start of each record's id length field
};

}  // namespace rvlad
