#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "core/descriptor.hpp"
#include "core/image.hpp"
#include "core/numerics.hpp"

namespace semcomm {

/// Variance-preserving schedule with linear beta(t) on t in [0, 1].
struct NoiseSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  std::size_t n_steps = 1000;

  void validate() const;
  double beta(double t) const noexcept { return beta_min + t * (beta_max - beta_min); }
  // exp(-integral_0^t beta) in closed form.
  double alpha_bar(double t) const noexcept;
};

std::vector<double> forward_perturb(std::span<const double> x0, double t, const NoiseSchedule& sched, RngStream& rng);

// -(x_t - sqrt(abar) mu) / (abar Sigma + 1 - abar), elementwise.
std::vector<double> analytic_score(std::span<const double> x_t, double t, std::span<const double> mu,
                                   std::span<const double> sigma, const NoiseSchedule& sched);

/// Score function s(x_t, t, c) used by the reverse sampler.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  virtual void score(std::span<const double> x_t, double t, std::span<const double> cond,
                     std::span<double> out) const = 0;
};

/// Exact score of a diagonal Gaussian target N(mu, diag(Sigma)); ignores the
/// condition (the condition is already folded into mu and Sigma).
class AnalyticGaussianScore final : public ScoreModel {
 public:
  AnalyticGaussianScore(std::vector<double> mu, std::vector<double> sigma, NoiseSchedule sched);
  void score(std::span<const double> x_t, double t, std::span<const double> cond, std::span<double> out) const override;

  const std::vector<double>& mu() const noexcept { return mu_; }
  const std::vector<double>& sigma() const noexcept { return sigma_; }

 private:
  std::vector<double> mu_, sigma_;
  NoiseSchedule sched_;
};

/// Adapts any callable to the ScoreModel interface.
class FunctionScore final : public ScoreModel {
 public:
  using Fn = std::function<void(std::span<const double>, double, std::span<const double>, std::span<double>)>;
  explicit FunctionScore(Fn fn) : fn_(std::move(fn)) {}
  void score(std::span<const double> x_t, double t, std::span<const double> cond, std::span<double> out) const override {
    fn_(x_t, t, cond, out);
  }

 private:
  Fn fn_;
};

// One Euler-Maruyama step backwards in time:
//   x <- x + [0.5 beta x + beta score] dt + sqrt(beta dt) z
void reverse_em_step(std::span<double> x, std::span<const double> score, double beta, double dt,
                     std::span<const double> z);

// Integrates the reverse SDE from x_1 ~ N(0, I) at t = 1 down to t = 0 with
// step 1/n_steps, evaluating the score at t_i = i / n_steps for
// i = n_steps, ..., 1. Throws Diverged naming the step on a non-finite state.
std::vector<double> reverse_sde_sample(const ScoreModel& model, std::span<const double> cond,
                                       const NoiseSchedule& sched, RngStream& rng, std::size_t dim);

// Pooled key features (means over 8 equal chunks) followed by a signed hash
// embedding of the descriptor's token stream of dimension `text_dim`.
inline constexpr std::size_t kPooledChunks = 8;
std::vector<double> condition_embedding(std::span<const double> key_features, const TextDescriptor* descriptor,
                                        std::size_t text_dim);

// Key pixels come from the decoded key features (clamped to [0,255]), the
// rest from `generated`. Non-key pixels 8-adjacent to the key region form a
// one-pixel blend band: the average of the generated value and the mean of
// the adjacent key pixels. Generated values inside the key region are never
// read.
ImageBuffer composite(std::span<const double> key_features, const SegmentationMask& mask, const ImageBuffer& generated);

struct BoundMeasurement {
  double alpha = 0.0;
  double sigma = 0.0;
  double k = 0.0;
  double eps_xi_hat = 0.0;
  double distortion = 0.0;
};

struct DistortionBoundFit {
  double c1 = 0.0, c2 = 0.0, c3 = 0.0;
  double inflation = 1.0;  // factor already applied to c1..c3

  double bound(double alpha, double sigma, double k, double eps_xi_hat) const;
};

// Features [(1-alpha)^(-1/2), sigma sqrt(k), eps_xi_hat].
std::array<double, 3> bound_features(double alpha, double sigma, double k, double eps_xi_hat);

// Nonnegative least squares over the three features (exact active-set
// enumeration), then the smallest factor >= 1 making the bound hold on every
// measurement. Needs >= 10 measurements with >= 3 distinct alpha and sigma
// values; alpha = 1 anywhere is a SingularFeature error.
DistortionBoundFit fit_distortion_bound(std::span<const BoundMeasurement> measurements);

struct BoundCheck {
  bool holds = false;
  double slack = 0.0;
};

BoundCheck check_bound(const DistortionBoundFit& fit, double alpha, double sigma, double k, double eps_xi_hat,
                       double measured);

}  // namespace semcomm
