#pragma once

#include "core/image.hpp"

namespace semcomm {

struct MetricReport {
  double mse = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double iou = 0.0;
  double hist_similarity = 0.0;
  double keypoint_similarity = 0.0;
};

inline constexpr double kPsnrCapDb = 100.0;

// Mean squared difference over all channels on the 8-bit scale.
double mse(const ImageBuffer& a, const ImageBuffer& b);
// 10 log10(255^2 / mse), capped at 100 dB when mse < 255^2 * 1e-10.
double psnr_from_mse(double mse_value);
double psnr(const ImageBuffer& a, const ImageBuffer& b);
// Mean local SSIM on luminance: 11x11 Gaussian window (sigma 1.5) over all
// fully contained windows, K1 = 0.01, K2 = 0.03, L = 255.
double ssim(const ImageBuffer& a, const ImageBuffer& b);
// |m1 & m2| / |m1 | m2|; 1 when both are empty.
double iou(const SegmentationMask& m1, const SegmentationMask& m2);
// Pearson correlation of the concatenated per-channel normalized histograms.
double hist_similarity(const ImageBuffer& a, const ImageBuffer& b, std::size_t bins = 32);
// Harris corners matched by 7x7 NCC >= 0.8 within 4 pixels; 2 matches / (n_a + n_b).
double keypoint_similarity(const ImageBuffer& a, const ImageBuffer& b);

struct Corner {
  std::size_t y = 0, x = 0;
  double response = 0.0;
};
// Harris (k = 0.04) on luminance; response >= 1% of the maximum, 3x3
// non-maximum suppression, at least 3 pixels from the border.
std::vector<Corner> harris_corners(const ImageBuffer& img);

MetricReport evaluate_metrics(const ImageBuffer& original, const ImageBuffer& reconstructed,
                              const SegmentationMask& mask_original, const SegmentationMask& mask_reconstructed);

}  // namespace semcomm
