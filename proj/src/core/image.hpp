#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace semcomm {

// 8-bit RGB, row-major, interleaved channels.
class ImageBuffer {
 public:
  static constexpr std::size_t kChannels = 3;

  ImageBuffer() = default;
  ImageBuffer(std::size_t height, std::size_t width, std::uint8_t fill = 0);
  ImageBuffer(std::size_t height, std::size_t width, std::vector<std::uint8_t> pixels);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept { return height_ * width_; }

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return pixels_[(y * width_ + x) * kChannels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return pixels_[(y * width_ + x) * kChannels + c];
  }

  std::span<std::uint8_t> pixels() noexcept { return pixels_; }
  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

  bool operator==(const ImageBuffer& other) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// Binary key-region mask; true = key pixel.
class SegmentationMask {
 public:
  SegmentationMask() = default;
  SegmentationMask(std::size_t height, std::size_t width, bool fill = false);
  SegmentationMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return bits_.size(); }

  bool at(std::size_t y, std::size_t x) const noexcept { return bits_[y * width_ + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v) noexcept { bits_[y * width_ + x] = v ? 1 : 0; }
  bool operator[](std::size_t i) const noexcept { return bits_[i] != 0; }

  std::size_t count() const noexcept;
  // (count of true bits) / (H*W).
  double alpha_effective() const noexcept;

  bool matches(const ImageBuffer& img) const noexcept {
    return img.height() == height_ && img.width() == width_;
  }

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  bool operator==(const SegmentationMask& other) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;  // one byte per pixel, 0/1
};

struct Box {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t w = 0;
  std::uint32_t h = 0;
  bool operator==(const Box&) const = default;
};

// 0.299 R + 0.587 G + 0.114 B per pixel.
std::vector<double> luminance(const ImageBuffer& img);

// 3x3 Sobel gradient magnitude with replicated borders.
std::vector<double> sobel_magnitude(std::span<const double> plane, std::size_t height, std::size_t width);

struct Component {
  std::vector<std::size_t> pixels;  // linear indices, scan order
  Box box;
};

// 8-connected components of the pixels where `selected[i] == want`, ordered
// by their first pixel in scan order.
std::vector<Component> connected_components(std::span<const std::uint8_t> selected, std::size_t height,
                                            std::size_t width, bool want = true);

}  // namespace semcomm
