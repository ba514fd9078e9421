#include <algorithm>
#include <deque>
#include <set>

#include "core/splitter.hpp"
#include "helpers.hpp"

using namespace semcomm;
using semcomm::test::constant_image;
using semcomm::test::error_of;
using semcomm::test::random_image;

namespace {

// Brute-force saliency oracle for piecewise-constant images whose edge pixels
// are fewer than (1 - q) of the image, so the quantile threshold is zero: a
// pixel is salient when its 3x3 window is not constant; salient pixels are
// dilated by one pixel and the largest 8-connected component is kept.
std::vector<std::uint8_t> saliency_oracle(const ImageBuffer& img) {
  const long h = static_cast<long>(img.height()), w = static_cast<long>(img.width());
  auto px = [&](long y, long x) {
    y = std::clamp(y, 0L, h - 1);
    x = std::clamp(x, 0L, w - 1);
    return std::array<int, 3>{img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
  };
  std::vector<std::uint8_t> edge(h * w, 0), dil(h * w, 0);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx)
          if (px(y + dy, x + dx) != px(y, x)) edge[y * w + x] = 1;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      if (edge[y * w + x])
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long yy = y + dy, xx = x + dx;
            if (yy >= 0 && xx >= 0 && yy < h && xx < w) dil[yy * w + xx] = 1;
          }
  std::vector<int> label(h * w, -1);
  std::vector<std::size_t> sizes;
  for (long s = 0; s < h * w; ++s) {
    if (!dil[s] || label[s] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    std::deque<long> queue{s};
    label[s] = id;
    while (!queue.empty()) {
      const long p = queue.front();
      queue.pop_front();
      ++sizes[id];
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long yy = p / w + dy, xx = p % w + dx;
          if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
          const long q = yy * w + xx;
          if (dil[q] && label[q] < 0) {
            label[q] = id;
            queue.push_back(q);
          }
        }
    }
  }
  std::vector<std::uint8_t> out(h * w, 0);
  if (sizes.empty()) return out;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (long p = 0; p < h * w; ++p) out[p] = label[p] == best ? 1 : 0;
  return out;
}

void fill_rect(ImageBuffer& img, std::size_t y0, std::size_t x0, std::size_t hh, std::size_t ww, std::uint8_t v) {
  for (std::size_t y = y0; y < y0 + hh; ++y)
    for (std::size_t x = x0; x < x0 + ww; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = v;
}

}  // namespace

TEST_SUITE("semantic_splitter") {

TEST_CASE("constant image has no salient region") {
  const auto mask = segment_saliency(constant_image(24, 24, 128, 128, 128), 0.9);
  CHECK(mask.count() == 0);
  CHECK(mask.alpha_effective() == 0.0);
}

TEST_CASE("white square on black: dilated boundary component") {
  ImageBuffer img(32, 32, 0);
  fill_rect(img, 10, 10, 10, 10, 255);
  const auto mask = segment_saliency(img, 0.9);
  const auto expected = saliency_oracle(img);
  CHECK(std::vector<std::uint8_t>(mask.bits().begin(), mask.bits().end()) == expected);
  // Ring rows/cols 8..21 without the untouched interior 12..17.
  CHECK(mask.count() == 14 * 14 - 6 * 6);
  CHECK(mask.alpha_effective() == doctest::Approx(160.0 / 1024.0));
}

TEST_CASE("two disjoint blobs: only the larger component is kept") {
  ImageBuffer img(48, 48, 0);
  fill_rect(img, 5, 5, 12, 12, 255);
  fill_rect(img, 30, 30, 4, 4, 255);
  const auto mask = segment_saliency(img, 0.9);
  CHECK(std::vector<std::uint8_t>(mask.bits().begin(), mask.bits().end()) == saliency_oracle(img));
  for (std::size_t y = 25; y < 48; ++y)
    for (std::size_t x = 25; x < 48; ++x) CHECK_FALSE(mask.at(y, x));
  CHECK(mask.count() == 16 * 16 - 8 * 8);
}

TEST_CASE("segment_saliency rejects quantiles outside (0,1)") {
  const auto img = random_image(16, 16, 1);
  CHECK(error_of([&] { segment_saliency(img, 0.0); }) == "invalid-parameter");
  CHECK(error_of([&] { segment_saliency(img, 1.0); }) == "invalid-parameter");
}

TEST_CASE("extract_key_features examples") {
  const auto img = random_image(4, 4, 3);
  SUBCASE("all-true mask is the whole image over 255") {
    const auto kf = extract_key_features(img, SegmentationMask(4, 4, true));
    REQUIRE(kf.m() == 4 * 4 * 3);
    for (std::size_t i = 0; i < kf.m(); ++i) CHECK(kf.values[i] == img.pixels()[i] / 255.0);
    CHECK(kf.boxes.size() == 1);
  }
  SUBCASE("all-false mask is empty") {
    const auto kf = extract_key_features(img, SegmentationMask(4, 4, false));
    CHECK(kf.m() == 0);
    CHECK(kf.boxes.empty());
  }
  SUBCASE("four pixels in scan order") {
    SegmentationMask mask(4, 4, false);
    const std::vector<std::pair<std::size_t, std::size_t>> on{{0, 3}, {1, 1}, {2, 0}, {3, 2}};
    for (auto [y, x] : on) mask.set(y, x, true);
    const auto kf = extract_key_features(img, mask);
    REQUIRE(kf.m() == 12);
    std::size_t j = 0;
    for (auto [y, x] : on)
      for (std::size_t c = 0; c < 3; ++c) CHECK(kf.values[j++] == img.at(y, x, c) / 255.0);
  }
  SUBCASE("dimension mismatch") {
    CHECK(error_of([&] { extract_key_features(img, SegmentationMask(4, 5, true)); }) == "invalid-input");
  }
}

TEST_CASE("partition completeness and lossless pack/unpack") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = random_image(13, 17, seed);
    RngStream rng(seed, 99);
    std::vector<std::uint8_t> bits(13 * 17);
    for (auto& b : bits) b = rng.uniform() < 0.4 ? 1 : 0;
    const SegmentationMask mask(13, 17, bits);
    const auto kf = extract_key_features(img, mask);
    CHECK(kf.m() / 3 + (mask.size() - mask.count()) == 13 * 17);
    const auto back = scatter_key_features(kf.values, mask, ImageBuffer(13, 17, 0));
    for (std::size_t i = 0; i < mask.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(back.pixels()[3 * i + c] == (mask[i] ? img.pixels()[3 * i + c] : 0));
  }
}

TEST_CASE("describe_nonkey examples") {
  SUBCASE("uniform gray with an empty mask") {
    const auto d = describe_nonkey(constant_image(16, 16, 128, 128, 128), SegmentationMask(16, 16, false), {});
    CHECK(d.mean_rgb == std::array<double, 3>{128, 128, 128});
    CHECK(d.luminance_mean == doctest::Approx(128.0));
    CHECK(d.texture_energy == 0.0);
    REQUIRE(d.dominant_colors.size() == 1);
    CHECK(d.dominant_colors[0] == Rgb{128, 128, 128});
  }
  SUBCASE("all-true mask zeroes the statistics") {
    const auto d = describe_nonkey(random_image(16, 16, 4), SegmentationMask(16, 16, true), {"cat"});
    CHECK(d.mean_rgb == std::array<double, 3>{0, 0, 0});
    CHECK(d.texture_energy == 0.0);
    CHECK(d.dominant_colors.empty());
    CHECK(d.region_boxes.empty());
    CHECK(d.labels == std::vector<std::string>{"cat"});
  }
  SUBCASE("two-colour checkerboard") {
    const Rgb a{200, 30, 30}, b{20, 90, 240};
    ImageBuffer img(10, 10);
    double sum[3] = {0, 0, 0};
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 10; ++x) {
        const Rgb c = (x + y) % 2 ? b : a;
        img.at(y, x, 0) = c.r;
        img.at(y, x, 1) = c.g;
        img.at(y, x, 2) = c.b;
        sum[0] += c.r;
        sum[1] += c.g;
        sum[2] += c.b;
      }
    const auto d = describe_nonkey(img, SegmentationMask(10, 10, false), {});
    for (std::size_t c = 0; c < 3; ++c) CHECK(d.mean_rgb[c] == doctest::Approx(sum[c] / 100.0));
    REQUIRE(d.dominant_colors.size() == 2);
    const std::set<std::array<int, 3>> got{{d.dominant_colors[0].r, d.dominant_colors[0].g, d.dominant_colors[0].b},
                                           {d.dominant_colors[1].r, d.dominant_colors[1].g, d.dominant_colors[1].b}};
    CHECK(got == std::set<std::array<int, 3>>{{a.r, a.g, a.b}, {b.r, b.g, b.b}});
    CHECK(d.texture_energy > 0.0);
  }
}

TEST_CASE("describe_nonkey ignores the values of key pixels") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto img = random_image(20, 20, seed);
    const auto mask = centered_mask(20, 20, 0.3);
    const auto before = describe_nonkey(img, mask, {"tree"});
    RngStream rng(seed, 5);
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i])
        for (std::size_t c = 0; c < 3; ++c) img.pixels()[3 * i + c] = static_cast<std::uint8_t>(rng.next_u64());
    CHECK(describe_nonkey(img, mask, {"tree"}) == before);
  }
}

TEST_CASE("centered masks are nested and take round(alpha*H*W) pixels") {
  SegmentationMask prev(9, 11, false);
  for (double alpha : {0.0, 0.1, 0.25, 0.5, 0.77, 1.0}) {
    const auto m = centered_mask(9, 11, alpha);
    CHECK(m.count() == static_cast<std::size_t>(std::nearbyint(alpha * 99)));
    for (std::size_t i = 0; i < m.size(); ++i)
      if (prev[i]) CHECK(m[i]);
    prev = m;
  }
  CHECK(centered_mask(3, 3, 1.0 / 9.0).at(1, 1));
  CHECK(error_of([] { centered_mask(4, 4, 1.5); }) == "invalid-parameter");
}

TEST_CASE("receiver denoising is the identity without noise and shrinks noisy values") {
  const auto mask = centered_mask(16, 16, 0.5);
  const auto img = constant_image(16, 16, 100, 150, 200);
  const auto clean = extract_key_features(img, mask).values;
  auto same = clean;
  wiener_denoise_key_features(same, mask, 0.0);
  CHECK(same == clean);

  RngStream rng(3, 3);
  auto noisy = clean;
  for (auto& v : noisy) v += 0.1 * rng.gaussian();
  auto filtered = noisy;
  wiener_denoise_key_features(filtered, mask, 0.01);
  double err_noisy = 0.0, err_filtered = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    err_noisy += (noisy[i] - clean[i]) * (noisy[i] - clean[i]);
    err_filtered += (filtered[i] - clean[i]) * (filtered[i] - clean[i]);
  }
  CHECK(err_filtered < 0.5 * err_noisy);
}

}  // TEST_SUITE
