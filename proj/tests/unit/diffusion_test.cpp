#include "core/diffusion.hpp"
#include "core/splitter.hpp"
#include "helpers.hpp"

using namespace semcomm;
using semcomm::test::error_of;
using semcomm::test::random_image;

namespace {

double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_var(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

std::vector<BoundMeasurement> planted_grid(double c1, double c2, double c3) {
  std::vector<BoundMeasurement> ms;
  const double alphas[] = {0.1, 0.4, 0.6, 0.8};
  const double sigmas[] = {0.05, 0.3, 1.0};
  double eps = 0.2;
  for (double a : alphas)
    for (double s : sigmas) {
      eps = std::fmod(eps * 1.7 + 0.13, 1.0);
      BoundMeasurement m{a, s, 16.0, eps, 0.0};
      m.distortion = c1 / std::sqrt(1.0 - a) + c2 * s * 4.0 + c3 * eps;
      ms.push_back(m);
    }
  return ms;
}

}  // namespace

TEST_SUITE("diffusion_reconstructor") {

TEST_CASE("variance-preserving schedule") {
  const NoiseSchedule s;
  CHECK(s.alpha_bar(0.0) == 1.0);
  CHECK(s.alpha_bar(1.0) == doctest::Approx(std::exp(-10.05)).epsilon(1e-12));
  double prev = 1.0;
  for (int i = 1; i <= 100; ++i) {
    const double t = i / 100.0;
    const double ab = s.alpha_bar(t);
    CHECK(ab < prev);
    CHECK(ab == doctest::Approx(std::exp(-(0.1 * t + 0.5 * 19.9 * t * t))).epsilon(1e-12));
    prev = ab;
  }
  CHECK(error_of([] { NoiseSchedule{0.1, 20.0, 5}.validate(); }) == "invalid-config");
  CHECK(error_of([] { NoiseSchedule{0.0, 20.0, 100}.validate(); }) == "invalid-config");
}

TEST_CASE("forward_perturb examples") {
  const NoiseSchedule s;
  RngStream rng(1, 1);
  const std::vector<double> x0{0.5, -1.0, 2.0};
  CHECK(forward_perturb(x0, 0.0, s, rng) == x0);
  CHECK(error_of([&] { forward_perturb(x0, 1.5, s, rng); }) == "invalid-parameter");

  // Var(x_t) = 1 - abar + abar Var(x0) for x0 ~ N(0, 4).
  const double t = 0.3, ab = s.alpha_bar(t);
  std::vector<double> xt;
  for (int i = 0; i < 100000; ++i) {
    const std::vector<double> x{2.0 * rng.gaussian()};
    xt.push_back(forward_perturb(x, t, s, rng)[0]);
  }
  CHECK(sample_var(xt) == doctest::Approx(1.0 - ab + ab * 4.0).epsilon(0.02));

  std::vector<double> at_one;
  for (int i = 0; i < 20000; ++i) at_one.push_back(forward_perturb(std::vector<double>{3.0}, 1.0, s, rng)[0]);
  CHECK(std::abs(sample_mean(at_one)) < 0.03);
}

TEST_CASE("analytic_score examples") {
  const NoiseSchedule s;
  const std::vector<double> mu{1.0, -2.0}, sigma{0.5, 2.0};
  const double t = 0.4, ab = s.alpha_bar(t);
  const std::vector<double> mode{std::sqrt(ab) * mu[0], std::sqrt(ab) * mu[1]};
  for (double v : analytic_score(mode, t, mu, sigma, s)) CHECK(v == 0.0);

  for (double tt : {0.0, 0.3, 1.0}) {
    const std::vector<double> x{0.7};
    CHECK(analytic_score(x, tt, std::vector<double>{0.0}, std::vector<double>{1.0}, s)[0] ==
          doctest::Approx(-0.7).epsilon(1e-12));
  }

  // Gradient of the perturbed Gaussian log density.
  RngStream rng(2, 2);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double tt = rng.uniform();
    const double abt = s.alpha_bar(tt);
    const std::vector<double> x{3.0 * rng.gaussian(), 3.0 * rng.gaussian()};
    auto logp = [&](std::span<const double> z) {
      double l = 0.0;
      for (std::size_t d = 0; d < 2; ++d) {
        const double var = abt * sigma[d] + 1.0 - abt;
        const double r = z[d] - std::sqrt(abt) * mu[d];
        l += -0.5 * r * r / var - 0.5 * std::log(var);
      }
      return l;
    };
    const auto fd = finite_diff_grad(logp, x, 1e-5);
    const auto an = analytic_score(x, tt, mu, sigma, s);
    for (std::size_t d = 0; d < 2; ++d) worst = std::max(worst, std::abs(fd[d] - an[d]));
  }
  CHECK(worst <= 1e-5);
  CHECK(error_of([&] { analytic_score(mode, t, mu, std::vector<double>{1.0, 0.0}, s); }) == "invalid-parameter");
}

TEST_CASE("single Euler-Maruyama step by hand") {
  std::vector<double> x{1.0, -2.0};
  const std::vector<double> zero{0.0, 0.0}, z{1.0, -1.0};
  reverse_em_step(x, zero, 2.0, 0.1, zero);
  CHECK(x[0] == doctest::Approx(1.1));
  CHECK(x[1] == doctest::Approx(-2.2));
  std::vector<double> y{1.0, 0.0};
  const std::vector<double> score{0.5, 1.0};
  reverse_em_step(y, score, 2.0, 0.1, z);
  CHECK(y[0] == doctest::Approx(1.0 + (1.0 + 1.0) * 0.1 + std::sqrt(0.2)));
  CHECK(y[1] == doctest::Approx((0.0 + 2.0) * 0.1 - std::sqrt(0.2)));
}

TEST_CASE("sampler reproduces a standard normal target") {
  const NoiseSchedule s{0.1, 20.0, 1000};
  const AnalyticGaussianScore model({0.0, 0.0}, {1.0, 1.0}, s);
  RngStream rng(3, 3);
  std::vector<double> c0, c1;
  for (int i = 0; i < 10000; ++i) {
    const auto x = reverse_sde_sample(model, {}, s, rng, 2);
    c0.push_back(x[0]);
    c1.push_back(x[1]);
  }
  for (const auto* c : {&c0, &c1}) {
    CHECK(std::abs(sample_mean(*c)) <= 0.04);
    CHECK(sample_var(*c) >= 0.9);
    CHECK(sample_var(*c) <= 1.1);
  }
}

TEST_CASE("sampler is deterministic and reports divergence with the step") {
  const NoiseSchedule s{0.1, 20.0, 50};
  const AnalyticGaussianScore model({1.0}, {0.5}, s);
  RngStream a(4, 4), b(4, 4);
  CHECK(reverse_sde_sample(model, {}, s, a, 1) == reverse_sde_sample(model, {}, s, b, 1));

  const FunctionScore blowup([](std::span<const double>, double t, std::span<const double>, std::span<double> out) {
    for (auto& o : out) o = t < 0.5 ? std::nan("") : 0.0;
  });
  RngStream r(5, 5);
  try {
    reverse_sde_sample(blowup, {}, s, r, 2);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Diverged);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("composite examples") {
  const auto img = random_image(12, 12, 6);
  const auto gen = random_image(12, 12, 7);
  SUBCASE("all-true mask ignores the generated image") {
    const SegmentationMask mask(12, 12, true);
    CHECK(composite(extract_key_features(img, mask).values, mask, gen) == img);
  }
  SUBCASE("all-false mask returns the generated image") {
    CHECK(composite({}, SegmentationMask(12, 12, false), gen) == gen);
  }
  SUBCASE("generated pixels inside the key region are never read") {
    const auto mask = centered_mask(12, 12, 0.3);
    const auto key = extract_key_features(img, mask).values;
    auto gen2 = gen;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i])
        for (std::size_t c = 0; c < 3; ++c) gen2.pixels()[3 * i + c] ^= 0x5A;
    CHECK(composite(key, mask, gen) == composite(key, mask, gen2));
  }
  SUBCASE("one-pixel blend band") {
    SegmentationMask mask(5, 5, false);
    mask.set(2, 2, true);
    const ImageBuffer flat(5, 5, 100);
    const auto out = composite(std::vector<double>(3, 200.0 / 255.0), mask, flat);
    CHECK(out.at(2, 2, 0) == 200);
    CHECK(out.at(1, 1, 1) == 150);  // band: 0.5 * 100 + 0.5 * 200
    CHECK(out.at(3, 2, 2) == 150);
    CHECK(out.at(0, 0, 0) == 100);  // outside the band
    CHECK(out.at(4, 2, 0) == 100);
  }
  SUBCASE("key values are clamped") {
    SegmentationMask mask(3, 3, false);
    mask.set(0, 0, true);
    const auto out = composite(std::vector<double>{-0.5, 2.0, 0.5}, mask, ImageBuffer(3, 3, 0));
    CHECK(out.at(0, 0, 0) == 0);
    CHECK(out.at(0, 0, 1) == 255);
    CHECK(out.at(0, 0, 2) == 128);
  }
  SUBCASE("dimension mismatch") {
    CHECK(error_of([&] { composite({}, SegmentationMask(11, 12, false), gen); }) == "invalid-input");
    CHECK(error_of([&] { composite(std::vector<double>(2, 0.0), centered_mask(12, 12, 0.1), gen); }) ==
          "invalid-input");
  }
}

TEST_CASE("condition embedding pools key features into eight chunks") {
  std::vector<double> key(16);
  for (std::size_t i = 0; i < 16; ++i) key[i] = static_cast<double>(i);
  const auto c = condition_embedding(key, nullptr, 4);
  REQUIRE(c.size() == kPooledChunks + 4);
  for (std::size_t j = 0; j < kPooledChunks; ++j) CHECK(c[j] == doctest::Approx(2.0 * j + 0.5));
  for (std::size_t j = kPooledChunks; j < c.size(); ++j) CHECK(c[j] == 0.0);

  TextDescriptor d;
  d.mean_rgb = {10, 20, 30};
  const auto with_text = condition_embedding(key, &d, 32);
  double energy = 0.0;
  for (std::size_t j = kPooledChunks; j < with_text.size(); ++j) energy += with_text[j] * with_text[j];
  CHECK(energy > 0.0);
  CHECK(condition_embedding({}, nullptr, 0) == std::vector<double>(kPooledChunks, 0.0));
}

TEST_CASE("distortion bound fit examples") {
  SUBCASE("planted constants are recovered") {
    const auto fit = fit_distortion_bound(planted_grid(2.0, 3.0, 1.0));
    CHECK(std::abs(fit.c1 - 2.0) <= 1e-6);
    CHECK(std::abs(fit.c2 - 3.0) <= 1e-6);
    CHECK(std::abs(fit.c3 - 1.0) <= 1e-6);
    CHECK(fit.inflation == doctest::Approx(1.0));
  }
  SUBCASE("all-zero distortions give zero constants") {
    auto ms = planted_grid(0.0, 0.0, 0.0);
    const auto fit = fit_distortion_bound(ms);
    CHECK(fit.c1 == 0.0);
    CHECK(fit.c2 == 0.0);
    CHECK(fit.c3 == 0.0);
  }
  SUBCASE("noisy data: nonnegative constants and every fit point covered") {
    auto ms = planted_grid(0.5, 2.0, 0.3);
    RngStream rng(8, 8);
    for (auto& m : ms) m.distortion *= 1.0 + 0.3 * (rng.uniform() - 0.5);
    const auto fit = fit_distortion_bound(ms);
    CHECK(fit.c1 >= 0.0);
    CHECK(fit.c2 >= 0.0);
    CHECK(fit.c3 >= 0.0);
    CHECK(fit.inflation >= 1.0);
    for (const auto& m : ms) CHECK(check_bound(fit, m.alpha, m.sigma, m.k, m.eps_xi_hat, m.distortion).holds);
  }
  SUBCASE("alpha = 1 is a singular feature") {
    auto ms = planted_grid(1.0, 1.0, 1.0);
    ms[3].alpha = 1.0;
    CHECK(error_of([&] { fit_distortion_bound(ms); }) == "singular-feature");
  }
  SUBCASE("too few points or too little spread") {
    auto ms = planted_grid(1.0, 1.0, 1.0);
    ms.resize(9);
    CHECK(error_of([&] { fit_distortion_bound(ms); }) == "invalid-config");
    auto flat = planted_grid(1.0, 1.0, 1.0);
    for (auto& m : flat) m.sigma = 0.3;
    CHECK(error_of([&] { fit_distortion_bound(flat); }) == "invalid-config");
  }
}

TEST_CASE("check_bound examples") {
  const DistortionBoundFit fit{1.0, 2.0, 3.0, 1.0};
  const double bound = 1.0 / std::sqrt(0.75) + 2.0 * 0.5 * 2.0 + 3.0 * 0.1;
  CHECK(fit.bound(0.25, 0.5, 4.0, 0.1) == doctest::Approx(bound));
  const auto zero = check_bound(fit, 0.25, 0.5, 4.0, 0.1, 0.0);
  CHECK(zero.holds);
  CHECK(zero.slack == doctest::Approx(bound));
  const auto over = check_bound(fit, 0.25, 0.5, 4.0, 0.1, bound + 1.0);
  CHECK_FALSE(over.holds);
  CHECK(over.slack == doctest::Approx(-1.0));
}

}  // TEST_SUITE
