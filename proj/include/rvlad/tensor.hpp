#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rvlad {

// Activation volume of one image at one convolutional layer.
// Layout is channel-major: index = (k * height + row) * width + col.
// Shape is fixed at construction and every value is finite.
class FeatureTensor {
 public:
  FeatureTensor(std::size_t channels, std::size_t height, std::size_t width,
                std::vector<float> data, std::string image_id = {});

  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t plane_size() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }

  const std::string& image_id() const noexcept { return image_id_; }
  void set_image_id(std::string id) { image_id_ = std::move(id); }

  float at(std::size_t k, std::size_t row, std::size_t col) const noexcept {
    return data_[(k * height_ + row) * width_ + col];
  }

  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> channel(std::size_t k) const noexcept {
    return std::span<const float>(data_).subspan(k * plane_size(), plane_size());
  }

 private:
  std::size_t channels_;
  std::size_t height_;
  std::size_t width_;
  std::vector<float> data_;
  std::string image_id_;
};

bool operator==(const FeatureTensor& a, const FeatureTensor& b);

// .npy v1.0 container: '<f4', C order, shape (K, Y, X).
// The image id defaults to the file stem.
FeatureTensor load_tensor(const std::filesystem::path& path);
void save_tensor(const FeatureTensor& tensor, const std::filesystem::path& path);

// In-memory variants of the container codec.
FeatureTensor decode_npy(std::span<const char> bytes, std::string image_id = {});
std::vector<char> encode_npy(const FeatureTensor& tensor);

}  // namespace rvlad
