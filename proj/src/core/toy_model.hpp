#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/diffusion.hpp"
#include "core/numerics.hpp"
#include "core/quant.hpp"

namespace semcomm {

/// Affine layer y = W x + b. After quantize() the forward pass uses the
/// dequantized int4 weights; an attached adapter adds s B (A x).
struct DenseLayer {
  std::string name;
  Matrix w;
  std::vector<double> b;
  std::optional<QuantizedTensor> quantized;
  std::optional<LoraAdapter> adapter;

  std::size_t in() const noexcept { return w.cols(); }
  std::size_t out() const noexcept { return w.rows(); }
  // Weights the forward pass multiplies by (dequantized when quantized).
  const Matrix& base_weights() const noexcept { return base_; }
  void refresh_base();
  void forward(std::span<const double> x, std::span<double> y) const;

 private:
  Matrix base_;
};

/// Two hidden layers of width 128 with SiLU, predicting the noise eps from
/// [x_t, sinusoidal time embedding (16), condition]; score = -eps / sqrt(1 - abar(t)).
class ToyScoreModel final : public ScoreModel {
 public:
  static constexpr std::size_t kHidden = 128;
  static constexpr std::size_t kTimeDim = 16;

  ToyScoreModel(std::size_t data_dim, std::size_t cond_dim, const NoiseSchedule& sched, RngStream& rng);

  std::size_t data_dim() const noexcept { return data_dim_; }
  std::size_t cond_dim() const noexcept { return cond_dim_; }
  const NoiseSchedule& schedule() const noexcept { return sched_; }

  void predict_eps(std::span<const double> x_t, double t, std::span<const double> cond, std::span<double> eps) const;
  void score(std::span<const double> x_t, double t, std::span<const double> cond, std::span<double> out) const override;

  std::array<DenseLayer, 3>& layers() noexcept { return layers_; }
  const std::array<DenseLayer, 3>& layers() const noexcept { return layers_; }

  // Replaces every layer's weights in the forward pass by their int4 blockwise reconstruction.
  void quantize_layers();
  // Attaches a fresh (zero-B) adapter of rank r to every layer.
  void attach_adapters(std::size_t rank, RngStream& rng, double init_std = 0.02, double alpha = 16.0);
  void detach_adapters();

  // SCM1 checkpoint of the full-precision weights; byte-exact round trip.
  std::vector<std::uint8_t> serialize() const;
  static ToyScoreModel deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static ToyScoreModel load(const std::filesystem::path& path);

  bool same_weights(const ToyScoreModel& other) const;

 private:
  ToyScoreModel() = default;
  void build_input(std::span<const double> x_t, double t, std::span<const double> cond, std::vector<double>& in) const;

  std::size_t data_dim_ = 0;
  std::size_t cond_dim_ = 0;
  NoiseSchedule sched_;
  std::array<DenseLayer, 3> layers_;

  friend struct ToyTrainer;
};

std::array<double, ToyScoreModel::kTimeDim> time_embedding(double t);

struct ToyTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double cond_dropout = 0.1;    // probability of zeroing the condition (one model, conditional and not)
  double val_fraction = 0.2;    // held-out share of the patches
  double t_min = 1e-3;
  std::size_t val_draws = 8;    // (t, z) draws per held-out patch
};

struct ToyTrainResult {
  ToyScoreModel model;
  std::vector<double> epoch_losses;  // mean training loss per epoch
  double train_loss = 0.0;           // final-epoch training loss
  double val_loss = 0.0;             // held-out denoising score-matching loss (eps_xi_hat proxy)
};

// Patches are 64-value vectors scaled to [-1,1]; conds may be empty
// (unconditional training) or one vector per patch.
ToyTrainResult train_score_toy(const std::vector<std::vector<double>>& patches,
                               const std::vector<std::vector<double>>& conds, const NoiseSchedule& sched,
                               const ToyTrainConfig& cfg, RngStream& rng);

// Mean of || eps_hat(x_t, t, c) - z ||^2 / dim over `draws` seeded (t, z)
// draws per patch, t ~ U(t_min, 1).
double denoising_loss(const ToyScoreModel& model, const std::vector<std::vector<double>>& patches,
                      const std::vector<std::vector<double>>& conds, RngStream& rng, std::size_t draws,
                      double t_min = 1e-3);

// Two-cluster synthetic 8x8 patch set: cluster 0 is a smooth ramp, cluster 1
// vertical stripes, both with small noise. conds are one-hot cluster ids
// padded to cond_dim (cond_dim >= 2).
struct PatchSet {
  std::vector<std::vector<double>> patches;
  std::vector<std::vector<double>> conds;
  std::vector<int> cluster;
};
PatchSet synthetic_patch_set(std::size_t n, std::size_t cond_dim, RngStream& rng);

}  // namespace semcomm
