#pragma once

#include <span>

#include <string>
#include <vector>

#include "core/descriptor.hpp"
#include "core/image.hpp"

namespace semcomm {

// Key-region pixels packed in scan order, scaled to [0,1].
struct KeyFeatures {
  std::vector<double> values;
  std::vector<Box> boxes;  // one per 8-connected mask component

  std::size_t m() const noexcept { return values.size(); }
};

// Pixels whose Sobel magnitude exceeds the `threshold_quantile` quantile,
// dilated by one pixel and reduced to the largest 8-connected component.
SegmentationMask segment_saliency(const ImageBuffer& img, double threshold_quantile);

KeyFeatures extract_key_features(const ImageBuffer& img, const SegmentationMask& mask);

// Inverse of extract_key_features: writes `values` (clamped, rounded to 8 bit)
// into the key pixels of a copy of `base`.
ImageBuffer scatter_key_features(std::span<const double> values, const SegmentationMask& mask,
                                 const ImageBuffer& base);

// Two-level empirical-Bayes denoiser for decoded key features (per channel):
// the mean of the key pixels in each (2r+1)^2 neighbourhood is shrunk towards
// the global mean by its estimated reliability, then each value is pulled
// towards that shrunk local mean by the local Wiener (Lee) gain
// max(local variance - noise_var, 0) / local variance. Identity when
// noise_var = 0.
void wiener_denoise_key_features(std::span<double> values, const SegmentationMask& mask, double noise_var,
                                 std::size_t radius = 2);

TextDescriptor describe_nonkey(const ImageBuffer& img, const SegmentationMask& mask,
                               const std::vector<std::string>& labels);

// Nested masks for alpha sweeps: the round(alpha*H*W) pixels closest to the
// image centre (ties by scan order).
SegmentationMask centered_mask(std::size_t height, std::size_t width, double alpha);

}  // namespace semcomm
