#include "core/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "core/errors.hpp"

namespace semcomm {

ImageBuffer::ImageBuffer(std::size_t height, std::size_t width, std::uint8_t fill)
    : height_(height), width_(width), pixels_(height * width * kChannels, fill) {
  if (height == 0 || width == 0) throw Error(ErrorCode::InvalidInput, "image dimensions must be >= 1");
}

ImageBuffer::ImageBuffer(std::size_t height, std::size_t width, std::vector<std::uint8_t> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height == 0 || width == 0) throw Error(ErrorCode::InvalidInput, "image dimensions must be >= 1");
  if (pixels_.size() != height * width * kChannels) {
    throw Error(ErrorCode::InvalidInput, "image pixel buffer has " + std::to_string(pixels_.size()) +
                                             " bytes, expected " +
                                             std::to_string(height * width * kChannels));
  }
}

SegmentationMask::SegmentationMask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), bits_(height * width, fill ? 1 : 0) {}

SegmentationMask::SegmentationMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  if (bits_.size() != height * width) throw Error(ErrorCode::InvalidInput, "mask bit count mismatch");
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t SegmentationMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double SegmentationMask::alpha_effective() const noexcept {
  if (bits_.empty()) return 0.0;
  return static_cast<double>(count()) / static_cast<double>(bits_.size());
}

std::vector<double> luminance(const ImageBuffer& img) {
  std::vector<double> out(img.pixel_count());
  const auto px = img.pixels();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.299 * px[3 * i] + 0.587 * px[3 * i + 1] + 0.114 * px[3 * i + 2];
  }
  return out;
}

std::vector<double> sobel_magnitude(std::span<const double> plane, std::size_t height, std::size_t width) {
  std::vector<double> out(height * width, 0.0);
  auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(height) - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(width) - 1);
    return plane[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
  };
  for (std::ptrdiff_t y = 0; y < static_cast<std::ptrdiff_t>(height); ++y) {
    for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(width); ++x) {
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      out[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

std::vector<Component> connected_components(std::span<const std::uint8_t> selected, std::size_t height,
                                            std::size_t width, bool want) {
  std::vector<Component> comps;
  std::vector<std::uint8_t> seen(height * width, 0);
  std::vector<std::size_t> stack;
  const std::uint8_t target = want ? 1 : 0;
  for (std::size_t start = 0; start < height * width; ++start) {
    if (seen[start] || (selected[start] ? 1 : 0) != target) continue;
    Component comp;
    std::size_t x0 = width, y0 = height, x1 = 0, y1 = 0;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      comp.pixels.push_back(p);
      const std::size_t py = p / width, pxx = p % width;
      x0 = std::min(x0, pxx);
      x1 = std::max(x1, pxx);
      y0 = std::min(y0, py);
      y1 = std::max(y1, py);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const auto ny = static_cast<std::ptrdiff_t>(py) + dy;
          const auto nx = static_cast<std::ptrdiff_t>(pxx) + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(height) ||
              nx >= static_cast<std::ptrdiff_t>(width))
            continue;
          const std::size_t q = static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx);
          if (seen[q] || (selected[q] ? 1 : 0) != target) continue;
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
    std::sort(comp.pixels.begin(), comp.pixels.end());
    comp.box = Box{static_cast<std::uint32_t>(x0), static_cast<std::uint32_t>(y0),
                   static_cast<std::uint32_t>(x1 - x0 + 1), static_cast<std::uint32_t>(y1 - y0 + 1)};
    comps.push_back(std::move(comp));
  }
  return comps;
}

}  // namespace semcomm
