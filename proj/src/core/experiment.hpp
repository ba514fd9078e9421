#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/channel.hpp"
#include "core/config.hpp"
#include "core/descriptor.hpp"
#include "core/diffusion.hpp"
#include "core/image.hpp"
#include "core/latent.hpp"
#include "core/metrics.hpp"
#include "core/prompt.hpp"
#include "core/toy_model.hpp"
#include "core/wire.hpp"

namespace semcomm {

enum class GeneratorKind : std::uint8_t { Analytic, Toy };

/// Everything a pipeline run or sweep needs; built from a Config file.
struct ExperimentConfig {
  // inputs
  std::filesystem::path image_path;   // empty: synthetic scene per trial
  std::filesystem::path mask_path;    // optional fixed key mask
  std::filesystem::path labels_path;  // optional caption labels, one per line
  std::vector<std::string> labels;
  std::size_t scene_size = 64;
  bool fixed_scene = false;  // synthetic input: one scene for all trials instead of one per trial

  // sweep axes (alphas: centred masks; mask_quantiles: saliency masks)
  std::vector<double> alphas;
  std::vector<double> mask_quantiles;
  std::vector<double> snr_db{20.0};
  std::vector<bool> prompts{true};
  std::size_t trials = 1;
  std::uint64_t seed = 1;

  // channel
  ChannelKind channel = ChannelKind::Awgn;
  bool equalize = true;

  // codec
  double k1_ratio = 1.0;  // k1 = ceil(k1_ratio * m)
  std::size_t k2 = 256;
  TextMode text_mode = TextMode::Digital;
  bool key_denoise = true;

  // generator
  NoiseSchedule schedule{0.1, 20.0, 100};
  GeneratorKind generator = GeneratorKind::Analytic;
  std::filesystem::path model_path;
  bool quantize_model = false;
  std::size_t adapter_rank = 0;  // > 0: quantize the toy model and attach fresh adapters
  std::size_t eps_draws = 8;  // stratified t draws for eps_xi_hat

  // reporting
  double saliency_quantile = 0.9;  // masks compared by IoU
  std::filesystem::path out_dir = ".";
  std::size_t threads = 0;  // 0: hardware concurrency

  static ExperimentConfig from_config(const Config& cfg);
  void validate() const;
};

// Reads the file, applies the SEMCOMM_SEED override and validates. Relative
// input paths (image, mask, labels_file, model) are resolved against the
// directory of the config file; `out` stays relative to the working directory.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig experiment_config_from(const Config& cfg, const std::filesystem::path& base_dir = {});

// Stationary synthetic test scene: 8x8 tiles drawn from two colour/texture
// clusters whose colours are random per scene.
ImageBuffer synthetic_scene(std::size_t height, std::size_t width, std::uint64_t seed);

struct PipelineResult {
  ImageBuffer reconstruction;
  SegmentationMask mask;
  MetricReport metrics;
  std::size_t overhead_bytes = 0;
  double eps_xi_hat = 0.0;
  double alpha_effective = 0.0;
  double sigma = 0.0;
  std::size_t k = 0;  // analog channel uses
  SemanticPacket packet;
  TextDescriptor sent;
  TextDescriptor received;
};

// Transmitter output: the packet (latent still noiseless) and the descriptor
// that was serialized into it.
struct EncodedImage {
  SemanticPacket packet;
  TextDescriptor sent;
};

// Packet after the channel: latent replaced by the (optionally equalized)
// received values; sigma and gain are what the receiver needs to denoise.
struct ChannelPass {
  SemanticPacket packet;
  double sigma = 0.0;
  double gain = 1.0;
};

struct Reconstruction {
  ImageBuffer image;
  SegmentationMask mask;
  std::vector<double> key_features;  // decoded, after receiver denoising
  TextDescriptor received;
  bool prompts = true;  // false when the packet carried no descriptor
};

/// Shared, immutable pipeline state (vocabulary, optional toy generator).
class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg, std::shared_ptr<const ToyScoreModel> model = nullptr);

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }

  // channel_stream drives the channel noise; generator_stream the sampler
  // (sharing it across SNR points gives paired comparisons).
  PipelineResult run(const ImageBuffer& image, const SegmentationMask& mask, double snr_db, bool prompts,
                     std::uint64_t channel_stream, std::uint64_t generator_stream) const;

  // The three stages run() is composed of. decode() learns whether prompts
  // were sent from the packet: digital mode with empty text is unconditional.
  EncodedImage encode(const ImageBuffer& image, const SegmentationMask& mask, bool prompts) const;
  ChannelPass transmit(const SemanticPacket& packet, double snr_db, std::uint64_t channel_stream) const;
  Reconstruction decode(const SemanticPacket& received, double sigma, double gain,
                        std::uint64_t generator_stream) const;

 private:
  std::vector<double> generate_nonkey(const SegmentationMask& mask, const std::vector<double>& key,
                                      const TextDescriptor* descriptor, std::uint64_t stream,
                                      ImageBuffer& generated) const;
  double score_matching_loss(const ImageBuffer& image, const SegmentationMask& mask, const std::vector<double>& key,
                             const TextDescriptor* descriptor, std::uint64_t stream) const;

  ExperimentConfig cfg_;
  Vocabulary vocab_;
  std::shared_ptr<const ToyScoreModel> model_;
};

// Channel and generator stream id of a single (non-sweep) run.
std::uint64_t single_run_stream();

// One run with single-run streams.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const ImageBuffer& image, const SegmentationMask& mask,
                            double snr_db, bool prompts = true);

// Input of a single run: the configured image (else the trial-0 synthetic
// scene) and its key mask (mask file, else a centred mask at the first alpha,
// else saliency at the first mask quantile, else at saliency_quantile).
struct RunInput {
  ImageBuffer image;
  SegmentationMask mask;
};
RunInput single_run_input(const ExperimentConfig& cfg);
// The mask rule of single_run_input applied to a given image.
SegmentationMask single_run_mask(const ExperimentConfig& cfg, const ImageBuffer& image);

// Analytic Gaussian prior over non-key pixels in [-1,1], per channel: mean from
// the descriptor's mean colour, variance from its texture energy plus the
// spread of its dominant colours; N(0, 1) without prompts. Returns (mu, Sigma).
std::pair<std::array<double, 3>, std::array<double, 3>> descriptor_prior(const TextDescriptor* descriptor);

struct TrialRow {
  double alpha = 0.0;  // nominal sweep value (alpha or mask quantile)
  double snr_db = 0.0;
  bool prompts = true;
  std::size_t trial = 0;
  MetricReport metrics;
  double overhead_bytes = 0.0;
  double eps_xi_hat = 0.0;
  double sigma = 0.0;
  double k = 0.0;
  double alpha_effective = 0.0;
};

TrialRow trial_row(const PipelineResult& res, double alpha, double snr_db, bool prompts, std::size_t trial);

struct SweepPoint {
  std::size_t alpha_index = 0;
  std::size_t snr_index = 0;
  std::size_t prompt_index = 0;
  double alpha = 0.0;
  double snr_db = 0.0;
  bool prompts = true;
  std::vector<TrialRow> trials;
  TrialRow mean;
  TrialRow stddev;  // sample standard deviation (n - 1)
};

struct SweepResult {
  std::vector<SweepPoint> points;
};

SweepResult run_sweep(const ExperimentConfig& cfg, std::shared_ptr<const ToyScoreModel> model = nullptr);

inline constexpr const char* kCsvHeader =
    "kind,alpha,snr_db,prompts,trial,mse,psnr_db,ssim,iou,hist_similarity,keypoint_similarity,overhead_bytes,eps_xi_hat";
std::string csv_row(const std::string& kind, const TrialRow& row, bool with_trial);
std::string sweep_csv(const SweepResult& sweep);

struct BoundReport {
  DistortionBoundFit fit;
  std::size_t fit_points = 0;
  std::size_t held_out = 0;
  std::size_t covered = 0;
  double coverage = 0.0;
  std::string csv;  // alpha,snr_db,sigma,k,eps_xi_hat,distortion,bound,holds,slack,set
};

// Fits on the even (alpha index + SNR index) cells of `fit_sweep` and checks
// the bound on the odd cells of `held_out` (the same grid run with new seeds).
// Uses the prompt-enabled points (first prompt setting). Distortion is per-pixel MSE on [0,1] scale.
BoundReport fit_bound_from_sweeps(const SweepResult& fit_sweep, const SweepResult& held_out);
// Runs the grid twice (seed and a derived held-out seed) and fits.
BoundReport fit_bound_cmd(const ExperimentConfig& cfg, std::shared_ptr<const ToyScoreModel> model = nullptr);

// Toy-generator training data from the synthetic scene domain: the non-key
// 8x8 tiles of `scenes` scenes (centred masks cycling through cfg.alphas, 0.5
// if empty), each conditioned like the pipeline's toy generator.
PatchSet scene_patch_set(const ExperimentConfig& cfg, std::size_t scenes, std::size_t cond_dim, std::uint64_t seed);

struct ToyTrainReport {
  ToyTrainResult result;
  std::size_t train_patches = 0;  // handed to the trainer, including its validation split
  std::size_t check_patches = 0;  // tiles of freshly seeded scenes
  double initial_loss = 0.0;      // untrained model on the check tiles
  double check_loss = 0.0;        // trained model, with conditions
  double check_loss_uncond = 0.0; // trained model, conditions zeroed
};

// Trains on scene tiles and scores the result on independently seeded scenes.
ToyTrainReport train_toy_cmd(const ExperimentConfig& cfg, std::size_t scenes, std::size_t cond_dim,
                             const ToyTrainConfig& train);

std::string format_double(double v);

}  // namespace semcomm
