#include "core/splitter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>

#include "core/errors.hpp"
#include "core/prompt.hpp"

namespace semcomm {

namespace {

void require_match(const ImageBuffer& img, const SegmentationMask& mask, const char* op) {
  if (!mask.matches(img)) {
    throw Error(ErrorCode::InvalidInput, std::string(op) + ": mask " + std::to_string(mask.height()) + "x" +
                                             std::to_string(mask.width()) + " does not match image " +
                                             std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
}

// Sobel magnitude restricted to non-key pixels: neighbours that are key
// pixels or outside the image take the centre value, so key pixels never
// influence the result.
std::vector<double> masked_sobel(std::span<const double> lum, const SegmentationMask& mask) {
  const auto h = static_cast<std::ptrdiff_t>(mask.height());
  const auto w = static_cast<std::ptrdiff_t>(mask.width());
  std::vector<double> out(lum.size(), 0.0);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const auto idx = static_cast<std::size_t>(y * w + x);
      if (mask[idx]) continue;
      const double centre = lum[idx];
      auto px = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) {
        if (yy < 0 || xx < 0 || yy >= h || xx >= w) return centre;
        const auto j = static_cast<std::size_t>(yy * w + xx);
        return mask[j] ? centre : lum[j];
      };
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      out[idx] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

}  // namespace

SegmentationMask segment_saliency(const ImageBuffer& img, double threshold_quantile) {
  if (!(threshold_quantile > 0.0 && threshold_quantile < 1.0)) {
    throw Error(ErrorCode::InvalidParameter, "segment_saliency: quantile must be in (0,1)");
  }
  const std::size_t h = img.height(), w = img.width(), n = h * w;
  const auto grad = sobel_magnitude(luminance(img), h, w);

  std::vector<double> sorted = grad;
  const auto k = static_cast<std::size_t>(std::floor(threshold_quantile * static_cast<double>(n - 1)));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const double threshold = sorted[k];

  std::vector<std::uint8_t> dilated(n, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!(grad[y * w + x] > threshold)) continue;
      for (std::size_t yy = (y ? y - 1 : 0); yy <= std::min(h - 1, y + 1); ++yy)
        for (std::size_t xx = (x ? x - 1 : 0); xx <= std::min(w - 1, x + 1); ++xx) dilated[yy * w + xx] = 1;
    }
  }

  SegmentationMask mask(h, w, false);
  const auto comps = connected_components(dilated, h, w, true);
  const Component* best = nullptr;
  for (const auto& c : comps)
    if (!best || c.pixels.size() > best->pixels.size()) best = &c;
  if (best)
    for (auto p : best->pixels) mask.set(p / w, p % w, true);
  return mask;
}

KeyFeatures extract_key_features(const ImageBuffer& img, const SegmentationMask& mask) {
  require_match(img, mask, "extract_key_features");
  KeyFeatures out;
  out.values.reserve(mask.count() * 3);
  const auto px = img.pixels();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t c = 0; c < 3; ++c) out.values.push_back(px[3 * i + c] / 255.0);
  }
  for (const auto& comp : connected_components(mask.bits(), mask.height(), mask.width(), true))
    out.boxes.push_back(comp.box);
  return out;
}

ImageBuffer scatter_key_features(std::span<const double> values, const SegmentationMask& mask,
                                 const ImageBuffer& base) {
  require_match(base, mask, "scatter_key_features");
  if (values.size() != mask.count() * 3) {
    throw Error(ErrorCode::InvalidInput, "scatter_key_features: expected " + std::to_string(mask.count() * 3) +
                                             " values, got " + std::to_string(values.size()));
  }
  ImageBuffer out = base;
  auto px = out.pixels();
  std::size_t j = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t c = 0; c < 3; ++c) px[3 * i + c] = to_u8(values[j++] * 255.0);
  }
  return out;
}

void wiener_denoise_key_features(std::span<double> values, const SegmentationMask& mask, double noise_var,
                                 std::size_t radius) {
  if (values.size() != mask.count() * 3) {
    throw Error(ErrorCode::InvalidInput, "wiener_denoise_key_features: expected " + std::to_string(mask.count() * 3) +
                                             " values, got " + std::to_string(values.size()));
  }
  if (!(noise_var > 0.0) || values.empty()) return;
  const std::size_t h = mask.height(), w = mask.width();
  // Position of every key pixel's features, -1 elsewhere.
  std::vector<std::ptrdiff_t> slot(mask.size(), -1);
  std::vector<std::size_t> where;
  where.reserve(mask.count());
  for (std::size_t i = 0, j = 0; i < mask.size(); ++i)
    if (mask[i]) {
      slot[i] = static_cast<std::ptrdiff_t>(j++);
      where.push_back(i);
    }
  const std::vector<double> noisy(values.begin(), values.end());
  const std::size_t n_key = where.size();
  const auto r = static_cast<std::ptrdiff_t>(radius);
  // Local statistics per key pixel and channel.
  std::vector<double> local_mean(3 * n_key), local_var(3 * n_key), local_n(n_key);
  for (std::size_t j = 0; j < n_key; ++j) {
    const auto y = static_cast<std::ptrdiff_t>(where[j] / w), x = static_cast<std::ptrdiff_t>(where[j] % w);
    std::array<double, 3> sum{}, sq{};
    double n = 0.0;
    for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
      for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
        const std::ptrdiff_t yy = y + dy, xx = x + dx;
        if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx >= static_cast<std::ptrdiff_t>(w)) continue;
        const auto k = slot[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
        if (k < 0) continue;
        n += 1.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = noisy[3 * static_cast<std::size_t>(k) + c];
          sum[c] += v;
          sq[c] += v * v;
        }
      }
    local_n[j] = n;
    for (std::size_t c = 0; c < 3; ++c) {
      local_mean[3 * j + c] = sum[c] / n;
      local_var[3 * j + c] = std::max(sq[c] / n - (sum[c] / n) * (sum[c] / n), 0.0);
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    // Level 1: local means shrink towards the global mean by their reliability.
    double global = 0.0;
    for (std::size_t j = 0; j < n_key; ++j) global += noisy[3 * j + c];
    global /= static_cast<double>(n_key);
    double spread = 0.0, mean_noise = 0.0;
    for (std::size_t j = 0; j < n_key; ++j) {
      const double d = local_mean[3 * j + c] - global;
      spread += d * d;
      mean_noise += noise_var / local_n[j];
    }
    const double between = std::max((spread - mean_noise) / static_cast<double>(n_key), 0.0);
    // Level 2: each value shrinks towards its (shrunk) local mean.
    for (std::size_t j = 0; j < n_key; ++j) {
      const double noise_of_mean = noise_var / local_n[j];
      const double g_mean = between > 0.0 ? between / (between + noise_of_mean) : 0.0;
      const double centre = global + g_mean * (local_mean[3 * j + c] - global);
      const double v = local_var[3 * j + c];
      const double g = v > 0.0 ? std::max(v - noise_var, 0.0) / v : 0.0;
      values[3 * j + c] = centre + g * (noisy[3 * j + c] - local_mean[3 * j + c]);
    }
  }
}

TextDescriptor describe_nonkey(const ImageBuffer& img, const SegmentationMask& mask,
                               const std::vector<std::string>& labels) {
  require_match(img, mask, "describe_nonkey");
  TextDescriptor d;
  d.labels = labels;

  const auto px = img.pixels();
  const auto lum = luminance(img);
  const auto grad = masked_sobel(lum, mask);

  std::array<double, 3> sum{};
  double lum_sum = 0.0, tex_sum = 0.0;
  std::size_t count = 0;
  // 4x4x4 histogram, bin = (r>>6)*16 + (g>>6)*4 + (b>>6)
  std::array<std::size_t, 64> occupancy{};
  std::array<std::array<double, 3>, 64> bin_sum{};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) continue;
    const std::uint8_t r = px[3 * i], g = px[3 * i + 1], b = px[3 * i + 2];
    sum[0] += r;
    sum[1] += g;
    sum[2] += b;
    lum_sum += lum[i];
    tex_sum += grad[i];
    const std::size_t bin = (r >> 6) * 16 + (g >> 6) * 4 + (b >> 6);
    ++occupancy[bin];
    bin_sum[bin][0] += r;
    bin_sum[bin][1] += g;
    bin_sum[bin][2] += b;
    ++count;
  }

  if (count > 0) {
    const double n = static_cast<double>(count);
    for (std::size_t c = 0; c < 3; ++c) d.mean_rgb[c] = sum[c] / n;
    d.luminance_mean = lum_sum / n;
    d.texture_energy = tex_sum / n;

    std::vector<std::size_t> bins(64);
    std::iota(bins.begin(), bins.end(), 0);
    std::stable_sort(bins.begin(), bins.end(),
                     [&](std::size_t a, std::size_t b) { return occupancy[a] > occupancy[b]; });
    for (std::size_t k = 0; k < kMaxDominantColors && occupancy[bins[k]] > 0; ++k) {
      const auto bin = bins[k];
      const double cnt = static_cast<double>(occupancy[bin]);
      d.dominant_colors.push_back(
          Rgb{to_u8(bin_sum[bin][0] / cnt), to_u8(bin_sum[bin][1] / cnt), to_u8(bin_sum[bin][2] / cnt)});
    }

    auto comps = connected_components(mask.bits(), mask.height(), mask.width(), false);
    if (comps.size() > kMaxRegionBoxes) {
      std::vector<std::size_t> order(comps.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return comps[a].pixels.size() > comps[b].pixels.size();
      });
      order.resize(kMaxRegionBoxes);
      std::sort(order.begin(), order.end());
      for (auto i : order) d.region_boxes.push_back(comps[i].box);
    } else {
      for (const auto& c : comps) d.region_boxes.push_back(c.box);
    }
  }
  d.dim_n = prompt_token_count(d);
  return d;
}

SegmentationMask centered_mask(std::size_t height, std::size_t width, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidParameter, "centered_mask: alpha must be in [0,1]");
  const std::size_t n = height * width;
  const auto keep = static_cast<std::size_t>(std::nearbyint(alpha * static_cast<double>(n)));
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dy = static_cast<double>(i / width) - cy;
    const double dx = static_cast<double>(i % width) - cx;
    dist[i] = dy * dy + dx * dx;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  SegmentationMask mask(height, width, false);
  for (std::size_t k = 0; k < keep; ++k) mask.set(order[k] / width, order[k] % width, true);
  return mask;
}

}  // namespace semcomm
