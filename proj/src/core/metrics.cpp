#include "core/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <tuple>

#include "core/errors.hpp"

namespace semcomm {

namespace {

void require_same(const ImageBuffer& a, const ImageBuffer& b, const char* op) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw Error(ErrorCode::InvalidInput, std::string(op) + ": images differ in size (" + std::to_string(a.height()) + "x" +
                                             std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                                             std::to_string(b.width()) + ")");
  }
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size * size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - c, dx = static_cast<double>(x) - c;
      w[y * size + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      sum += w[y * size + x];
    }
  for (auto& v : w) v /= sum;
  return w;
}

double ncc(const std::vector<double>& la, const std::vector<double>& lb, std::size_t w, const Corner& a, const Corner& b) {
  constexpr int r = 3;
  double sa = 0, sb = 0;
  constexpr double n = 49.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      sa += la[(a.y + dy) * w + a.x + dx];
      sb += lb[(b.y + dy) * w + b.x + dx];
    }
  const double ma = sa / n, mb = sb / n;
  double num = 0, va = 0, vb = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double da = la[(a.y + dy) * w + a.x + dx] - ma;
      const double db = lb[(b.y + dy) * w + b.x + dx] - mb;
      num += da * db;
      va += da * da;
      vb += db * db;
    }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return num / std::sqrt(va * vb);
}

}  // namespace

double mse(const ImageBuffer& a, const ImageBuffer& b) {
  require_same(a, b, "mse");
  const auto pa = a.pixels(), pb = b.pixels();
  double s = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    s += d * d;
  }
  return s / static_cast<double>(pa.size());
}

double psnr_from_mse(double m) {
  constexpr double peak = 255.0 * 255.0;
  if (m < peak * 1e-10) return kPsnrCapDb;
  return 10.0 * std::log10(peak / m);
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) { return psnr_from_mse(mse(a, b)); }

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  require_same(a, b, "ssim");
  constexpr std::size_t win = 11;
  if (std::min(a.height(), a.width()) < win) throw Error(ErrorCode::InvalidInput, "ssim: images must be at least 11x11");
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0), c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const auto la = luminance(a), lb = luminance(b);
  const auto g = gaussian_window(win, 1.5);
  const std::size_t h = a.height(), w = a.width();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + win <= h; ++y) {
    for (std::size_t x = 0; x + win <= w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t dy = 0; dy < win; ++dy)
        for (std::size_t dx = 0; dx < win; ++dx) {
          const double wt = g[dy * win + dx];
          const double va = la[(y + dy) * w + x + dx], vb = lb[(y + dy) * w + x + dx];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double iou(const SegmentationMask& m1, const SegmentationMask& m2) {
  if (m1.height() != m2.height() || m1.width() != m2.width())
    throw Error(ErrorCode::InvalidInput, "iou: masks differ in size");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < m1.size(); ++i) {
    inter += (m1[i] && m2[i]) ? 1 : 0;
    uni += (m1[i] || m2[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double hist_similarity(const ImageBuffer& a, const ImageBuffer& b, std::size_t bins) {
  if (bins == 0 || bins > 256) throw Error(ErrorCode::InvalidParameter, "hist_similarity: bins must be in [1,256]");
  auto hist = [bins](const ImageBuffer& img) {
    std::vector<double> h(3 * bins, 0.0);
    const auto px = img.pixels();
    const std::size_t n = img.height() * img.width();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 3; ++c) h[c * bins + px[3 * i + c] * bins / 256] += 1.0;
    for (auto& v : h) v /= static_cast<double>(n);
    return h;
  };
  const auto ha = hist(a), hb = hist(b);
  const double n = static_cast<double>(ha.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ha.size(); ++i) {
    ma += ha[i];
    mb += hb[i];
  }
  ma /= n;
  mb /= n;
  double num = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ha.size(); ++i) {
    num += (ha[i] - ma) * (hb[i] - mb);
    va += (ha[i] - ma) * (ha[i] - ma);
    vb += (hb[i] - mb) * (hb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) {
    if (va == 0.0 && vb == 0.0) return ha == hb ? 1.0 : 0.0;
    return 0.0;
  }
  if (ha == hb) return 1.0;
  return std::clamp(num / std::sqrt(va * vb), -1.0, 1.0);
}

std::vector<Corner> harris_corners(const ImageBuffer& img) {
  const std::size_t h = img.height(), w = img.width();
  const auto lum = luminance(img);
  std::vector<double> ix(h * w), iy(h * w);
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return lum[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  for (std::ptrdiff_t y = 0; y < static_cast<std::ptrdiff_t>(h); ++y)
    for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(w); ++x) {
      const auto i = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
      ix[i] = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1) - at(y - 1, x - 1) - 2 * at(y, x - 1) -
               at(y + 1, x - 1)) / 8.0;
      iy[i] = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1) - at(y - 1, x - 1) - 2 * at(y - 1, x) -
               at(y - 1, x + 1)) / 8.0;
    }
  // Structure tensor summed over a 3x3 window, evaluated where the 7x7
  // matching patch fits.
  std::vector<double> resp(h * w, 0.0);
  double max_r = 0.0;
  for (std::size_t y = 3; y + 3 < h; ++y)
    for (std::size_t x = 3; x + 3 < w; ++x) {
      double sxx = 0, syy = 0, sxy = 0;
      for (std::size_t yy = y - 1; yy <= y + 1; ++yy)
        for (std::size_t xx = x - 1; xx <= x + 1; ++xx) {
          const double gx = ix[yy * w + xx], gy = iy[yy * w + xx];
          sxx += gx * gx;
          syy += gy * gy;
          sxy += gx * gy;
        }
      const double tr = sxx + syy;
      const double r = sxx * syy - sxy * sxy - 0.04 * tr * tr;
      resp[y * w + x] = r;
      max_r = std::max(max_r, r);
    }
  std::vector<Corner> corners;
  if (!(max_r > 0.0)) return corners;
  const double thr = 0.01 * max_r;
  for (std::size_t y = 3; y + 3 < h; ++y)
    for (std::size_t x = 3; x + 3 < w; ++x) {
      const double r = resp[y * w + x];
      if (r < thr || r <= 0.0) continue;
      bool is_max = true;
      for (std::size_t yy = y - 1; yy <= y + 1 && is_max; ++yy)
        for (std::size_t xx = x - 1; xx <= x + 1; ++xx) {
          if (yy == y && xx == x) continue;
          const double o = resp[yy * w + xx];
          // ties go to the earlier pixel in scan order
          if (o > r || (o == r && (yy < y || (yy == y && xx < x)))) {
            is_max = false;
            break;
          }
        }
      if (is_max) corners.push_back(Corner{y, x, r});
    }
  return corners;
}

double keypoint_similarity(const ImageBuffer& a, const ImageBuffer& b) {
  require_same(a, b, "keypoint_similarity");
  if (std::min(a.height(), a.width()) < 16) throw Error(ErrorCode::InvalidInput, "keypoint_similarity: images must be at least 16x16");
  const auto ca = harris_corners(a), cb = harris_corners(b);
  if (ca.empty() && cb.empty()) return 1.0;
  if (ca.empty() || cb.empty()) return 0.0;
  const auto la = luminance(a), lb = luminance(b);
  const std::size_t w = a.width();
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < ca.size(); ++i)
    for (std::size_t j = 0; j < cb.size(); ++j) {
      const double dy = static_cast<double>(ca[i].y) - static_cast<double>(cb[j].y);
      const double dx = static_cast<double>(ca[i].x) - static_cast<double>(cb[j].x);
      if (dy * dy + dx * dx > 16.0) continue;
      const double c = ncc(la, lb, w, ca[i], cb[j]);
      if (c >= 0.8) pairs.emplace_back(c, i, j);
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& p, const auto& q) { return std::get<0>(p) > std::get<0>(q); });
  std::vector<bool> used_a(ca.size(), false), used_b(cb.size(), false);
  std::size_t matches = 0;
  for (const auto& [c, i, j] : pairs) {
    if (used_a[i] || used_b[j]) continue;
    used_a[i] = used_b[j] = true;
    ++matches;
  }
  return 2.0 * static_cast<double>(matches) / static_cast<double>(ca.size() + cb.size());
}

MetricReport evaluate_metrics(const ImageBuffer& original, const ImageBuffer& reconstructed,
                              const SegmentationMask& mask_original, const SegmentationMask& mask_reconstructed) {
  MetricReport r;
  r.mse = mse(original, reconstructed);
  r.psnr_db = psnr_from_mse(r.mse);
  r.ssim = ssim(original, reconstructed);
  r.iou = iou(mask_original, mask_reconstructed);
  r.hist_similarity = hist_similarity(original, reconstructed);
  r.keypoint_similarity = keypoint_similarity(original, reconstructed);
  return r;
}

}  // namespace semcomm
