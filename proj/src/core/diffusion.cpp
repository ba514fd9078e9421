#include "core/diffusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <string>

#include "core/errors.hpp"
#include "core/prompt.hpp"

namespace semcomm {

void NoiseSchedule::validate() const {
  if (!(beta_min > 0.0) || !(beta_max > 0.0) || !std::isfinite(beta_min) || !std::isfinite(beta_max)) {
    throw Error(ErrorCode::InvalidConfig, "schedule: beta_min and beta_max must be finite and > 0");
  }
  if (n_steps < 10) throw Error(ErrorCode::InvalidConfig, "schedule: n_steps must be >= 10");
}

double NoiseSchedule::alpha_bar(double t) const noexcept {
  return std::exp(-(beta_min * t + 0.5 * (beta_max - beta_min) * t * t));
}

std::vector<double> forward_perturb(std::span<const double> x0, double t, const NoiseSchedule& sched, RngStream& rng) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::InvalidParameter, "forward_perturb: t must be in [0,1]");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double z = rng.gaussian();
    out[i] = a * x0[i] + s * z;
  }
  return out;
}

std::vector<double> analytic_score(std::span<const double> x_t, double t, std::span<const double> mu,
                                   std::span<const double> sigma, const NoiseSchedule& sched) {
  if (mu.size() != x_t.size() || sigma.size() != x_t.size())
    throw Error(ErrorCode::InvalidInput, "analytic_score: mu/Sigma length mismatch");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw Error(ErrorCode::InvalidParameter, "analytic_score: Sigma entries must be > 0");
    out[i] = -(x_t[i] - a * mu[i]) / (ab * sigma[i] + (1.0 - ab));
  }
  return out;
}

AnalyticGaussianScore::AnalyticGaussianScore(std::vector<double> mu, std::vector<double> sigma, NoiseSchedule sched)
    : mu_(std::move(mu)), sigma_(std::move(sigma)), sched_(sched) {
  if (mu_.size() != sigma_.size()) throw Error(ErrorCode::InvalidInput, "analytic score: mu/Sigma length mismatch");
  for (double s : sigma_)
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::InvalidParameter, "analytic score: Sigma entries must be > 0");
}

void AnalyticGaussianScore::score(std::span<const double> x_t, double t, std::span<const double>,
                                  std::span<double> out) const {
  if (x_t.size() != mu_.size() || out.size() != mu_.size())
    throw Error(ErrorCode::InvalidInput, "analytic score: dimension mismatch");
  const double ab = sched_.alpha_bar(t);
  const double a = std::sqrt(ab);
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = -(x_t[i] - a * mu_[i]) / (ab * sigma_[i] + (1.0 - ab));
}

void reverse_em_step(std::span<double> x, std::span<const double> score, double beta, double dt,
                     std::span<const double> z) {
  const double noise = std::sqrt(beta * dt);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += (0.5 * beta * x[i] + beta * score[i]) * dt + noise * z[i];
}

std::vector<double> reverse_sde_sample(const ScoreModel& model, std::span<const double> cond,
                                       const NoiseSchedule& sched, RngStream& rng, std::size_t dim) {
  sched.validate();
  std::vector<double> x(dim), s(dim), z(dim);
  for (auto& v : x) v = rng.gaussian();
  const double dt = 1.0 / static_cast<double>(sched.n_steps);
  for (std::size_t i = sched.n_steps; i >= 1; --i) {
    const double t = static_cast<double>(i) * dt;
    model.score(x, t, cond, s);
    for (auto& v : z) v = rng.gaussian();
    reverse_em_step(x, s, sched.beta(t), dt, z);
    for (double v : x) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::Diverged,
                    "reverse_sde_sample: non-finite state at step " + std::to_string(sched.n_steps - i + 1));
      }
    }
  }
  return x;
}

std::vector<double> condition_embedding(std::span<const double> key_features, const TextDescriptor* descriptor,
                                        std::size_t text_dim) {
  std::vector<double> c(kPooledChunks + text_dim, 0.0);
  const std::size_t m = key_features.size();
  for (std::size_t j = 0; j < kPooledChunks; ++j) {
    const std::size_t lo = j * m / kPooledChunks, hi = (j + 1) * m / kPooledChunks;
    if (hi == lo) continue;
    double sum = 0.0;
    for (std::size_t i = lo; i < hi; ++i) sum += key_features[i];
    c[j] = sum / static_cast<double>(hi - lo);
  }
  if (descriptor && text_dim > 0) {
    const auto toks = prompt_tokens(quantize_descriptor(*descriptor));
    const double w = 1.0 / std::sqrt(static_cast<double>(toks.size()));
    for (const auto& tok : toks) {
      const std::uint64_t h = mix64(fnv1a64(tok));
      c[kPooledChunks + (h % text_dim)] += ((h >> 63) ? -1.0 : 1.0) * w;
    }
  }
  return c;
}

ImageBuffer composite(std::span<const double> key_features, const SegmentationMask& mask, const ImageBuffer& generated) {
  if (!mask.matches(generated)) throw Error(ErrorCode::InvalidInput, "composite: mask and generated image dimensions differ");
  if (key_features.size() != mask.count() * 3) {
    throw Error(ErrorCode::InvalidInput, "composite: expected " + std::to_string(mask.count() * 3) +
                                             " key values, got " + std::to_string(key_features.size()));
  }
  const std::size_t h = mask.height(), w = mask.width();
  ImageBuffer out = generated;
  auto px = out.pixels();
  std::size_t j = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t c = 0; c < 3; ++c)
      px[3 * i + c] = static_cast<std::uint8_t>(std::clamp(std::nearbyint(key_features[j++] * 255.0), 0.0, 255.0));
  }
  const auto gen = generated.pixels();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      if (mask[i]) continue;
      std::array<double, 3> sum{};
      std::size_t n = 0;
      for (std::size_t yy = (y ? y - 1 : 0); yy <= std::min(h - 1, y + 1); ++yy) {
        for (std::size_t xx = (x ? x - 1 : 0); xx <= std::min(w - 1, x + 1); ++xx) {
          const std::size_t q = yy * w + xx;
          if (!mask[q]) continue;
          for (std::size_t c = 0; c < 3; ++c) sum[c] += px[3 * q + c];
          ++n;
        }
      }
      if (n == 0) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        const double key_mean = sum[c] / static_cast<double>(n);
        px[3 * i + c] = static_cast<std::uint8_t>(std::clamp(std::nearbyint(0.5 * gen[3 * i + c] + 0.5 * key_mean), 0.0, 255.0));
      }
    }
  }
  return out;
}

std::array<double, 3> bound_features(double alpha, double sigma, double k, double eps_xi_hat) {
  if (alpha >= 1.0) throw Error(ErrorCode::SingularFeature, "distortion bound: alpha = 1 makes (1-alpha)^(-1/2) infinite");
  if (alpha < 0.0) throw Error(ErrorCode::InvalidInput, "distortion bound: alpha must be in [0,1)");
  return {1.0 / std::sqrt(1.0 - alpha), sigma * std::sqrt(k), eps_xi_hat};
}

double DistortionBoundFit::bound(double alpha, double sigma, double k, double eps_xi_hat) const {
  const auto f = bound_features(alpha, sigma, k, eps_xi_hat);
  return c1 * f[0] + c2 * f[1] + c3 * f[2];
}

namespace {

// Solves the n x n system (n <= 3) by Gaussian elimination with partial
// pivoting; returns false when singular.
bool solve_small(std::array<std::array<double, 4>, 3> a, std::size_t n, std::array<double, 3>& x) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    double scale = 0.0;
    for (std::size_t r = 0; r < n; ++r) scale = std::max(scale, std::abs(a[r][col]));
    if (std::abs(a[piv][col]) <= 1e-300 || std::abs(a[piv][col]) <= 1e-13 * scale) return false;
    std::swap(a[piv], a[col]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= n; ++c) a[r][c] -= f * a[col][c];
    }
  }
  for (std::size_t i = 0; i < n; ++i) x[i] = a[i][n] / a[i][i];
  return true;
}

}  // namespace

DistortionBoundFit fit_distortion_bound(std::span<const BoundMeasurement> ms) {
  std::vector<std::array<double, 3>> feats;
  feats.reserve(ms.size());
  std::set<double> alphas, sigmas;
  for (const auto& m : ms) {
    feats.push_back(bound_features(m.alpha, m.sigma, m.k, m.eps_xi_hat));
    if (!std::isfinite(m.distortion) || m.distortion < 0.0)
      throw Error(ErrorCode::InvalidInput, "fit_distortion_bound: distortions must be finite and >= 0");
    alphas.insert(m.alpha);
    sigmas.insert(m.sigma);
  }
  if (ms.size() < 10 || alphas.size() < 3 || sigmas.size() < 3) {
    throw Error(ErrorCode::InvalidConfig,
                "fit_distortion_bound: need >= 10 measurements spanning >= 3 alpha and >= 3 sigma values");
  }

  std::array<double, 3> best{0.0, 0.0, 0.0};
  double best_rss = 0.0;
  for (const auto& m : ms) best_rss += m.distortion * m.distortion;
  for (unsigned subset = 1; subset < 8; ++subset) {
    std::array<std::size_t, 3> idx{};
    std::size_t n = 0;
    for (std::size_t j = 0; j < 3; ++j)
      if (subset & (1u << j)) idx[n++] = j;
    std::array<std::array<double, 4>, 3> normal{};
    for (std::size_t p = 0; p < ms.size(); ++p) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) normal[r][c] += feats[p][idx[r]] * feats[p][idx[c]];
        normal[r][n] += feats[p][idx[r]] * ms[p].distortion;
      }
    }
    std::array<double, 3> sol{};
    if (!solve_small(normal, n, sol)) continue;
    bool feasible = true;
    for (std::size_t r = 0; r < n; ++r) feasible = feasible && sol[r] >= 0.0;
    if (!feasible) continue;
    std::array<double, 3> c{};
    for (std::size_t r = 0; r < n; ++r) c[idx[r]] = sol[r];
    double rss = 0.0;
    for (std::size_t p = 0; p < ms.size(); ++p) {
      const double e = c[0] * feats[p][0] + c[1] * feats[p][1] + c[2] * feats[p][2] - ms[p].distortion;
      rss += e * e;
    }
    if (rss < best_rss) {
      best_rss = rss;
      best = c;
    }
  }

  double factor = 1.0;
  for (std::size_t p = 0; p < ms.size(); ++p) {
    const double b = best[0] * feats[p][0] + best[1] * feats[p][1] + best[2] * feats[p][2];
    if (ms[p].distortion <= b) continue;
    if (b <= 0.0) {
      throw Error(ErrorCode::NumericFailure, "fit_distortion_bound: fitted bound is zero at a point with positive distortion");
    }
    factor = std::max(factor, ms[p].distortion / b);
  }
  // Rounding in factor * c can leave the binding point a few ulps short; bump
  // until every fit point is covered by the bound as check_bound computes it.
  DistortionBoundFit fit{best[0] * factor, best[1] * factor, best[2] * factor, factor};
  for (int guard = 0; guard < 64; ++guard) {
    bool covered = true;
    for (const auto& m : ms) covered = covered && check_bound(fit, m.alpha, m.sigma, m.k, m.eps_xi_hat, m.distortion).holds;
    if (covered) break;
    factor = std::nextafter(factor, 2.0 * factor) * (1.0 + 1e-15);
    fit = DistortionBoundFit{best[0] * factor, best[1] * factor, best[2] * factor, factor};
  }
  return fit;
}

BoundCheck check_bound(const DistortionBoundFit& fit, double alpha, double sigma, double k, double eps_xi_hat,
                       double measured) {
  const double b = fit.bound(alpha, sigma, k, eps_xi_hat);
  return BoundCheck{measured <= b, b - measured};
}

}  // namespace semcomm
