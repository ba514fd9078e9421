#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/image.hpp"

namespace semcomm {

inline constexpr std::size_t kMaxDominantColors = 4;
inline constexpr std::size_t kMaxRegionBoxes = 8;
inline constexpr std::size_t kMaxLabels = 8;

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  bool operator==(const Rgb&) const = default;
};

// Structured summary of the non-key region (the text side of the split).
struct TextDescriptor {
  std::array<double, 3> mean_rgb{};
  std::vector<Rgb> dominant_colors;  // at most kMaxDominantColors
  double luminance_mean = 0.0;
  double texture_energy = 0.0;       // mean Sobel magnitude, >= 0
  std::vector<Box> region_boxes;     // at most kMaxRegionBoxes
  std::vector<std::string> labels;
  std::size_t dim_n = 0;             // token count of the serialized prompt

  bool operator==(const TextDescriptor&) const = default;
};

}  // namespace semcomm
