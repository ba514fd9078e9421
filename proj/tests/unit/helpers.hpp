#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "core/descriptor.hpp"
#include "core/errors.hpp"
#include "core/image.hpp"
#include "core/numerics.hpp"
#include "doctest.h"

namespace semcomm::test {

// Name of the error `fn` raises ("none" when it returns normally), so a
// failing check prints which error actually came out.
template <class Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return std::string(error_code_name(e.code()));
  }
  return "none";
}

inline ImageBuffer random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  RngStream rng(seed, 0);
  ImageBuffer img(h, w);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(rng.next_u64() & 0xFF);
  return img;
}

inline ImageBuffer constant_image(std::size_t h, std::size_t w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  ImageBuffer img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

// Random descriptor within the grammar's ranges, labels drawn from `labels`.
inline TextDescriptor random_descriptor(RngStream& rng, const std::vector<std::string>& labels) {
  auto u8 = [&] { return static_cast<std::uint8_t>(rng.next_u64() & 0xFF); };
  TextDescriptor d;
  for (auto& m : d.mean_rgb) m = 255.0 * rng.uniform();
  d.luminance_mean = 255.0 * rng.uniform();
  d.texture_energy = 300.0 * rng.uniform();
  const auto colors = rng.next_u64() % (kMaxDominantColors + 1);
  for (std::size_t i = 0; i < colors; ++i) d.dominant_colors.push_back({u8(), u8(), u8()});
  const auto boxes = rng.next_u64() % (kMaxRegionBoxes + 1);
  for (std::size_t i = 0; i < boxes; ++i) {
    const auto c = [&] { return static_cast<std::uint32_t>(rng.next_u64() % 512); };
    d.region_boxes.push_back({c(), c(), c() + 1, c() + 1});
  }
  if (!labels.empty()) {
    const auto n = rng.next_u64() % (std::min(labels.size(), kMaxLabels) + 1);
    for (std::size_t i = 0; i < n; ++i) d.labels.push_back(labels[rng.next_u64() % labels.size()]);
  }
  return d;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace semcomm::test
