#include "core/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>

#include "core/errors.hpp"
#include "core/image_io.hpp"
#include "core/splitter.hpp"

namespace semcomm {

namespace {

template <typename F>
auto stage(std::string_view module, std::string_view step, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    rethrow_with_context(e, module, step);
  }
}

constexpr std::uint64_t kProjectionPurpose = 0x50524F4aULL;  // "PROJ"
constexpr std::uint64_t kGeneratorPurpose = 0x47454EULL;     // "GEN"
constexpr std::uint64_t kScorePurpose = 0x53434F5245ULL;     // "SCORE"
constexpr std::uint64_t kScenePurpose = 0x5343454E45ULL;     // "SCENE"
constexpr std::uint64_t kHeldOutPurpose = 0x484F4C44ULL;   // "HOLD"
constexpr std::uint64_t kAdapterPurpose = 0x4C4F5241ULL;     // "LORA"
constexpr double kTMin = 1e-3;

std::uint8_t to_pixel(double x) {
  return static_cast<std::uint8_t>(std::clamp(std::nearbyint((x + 1.0) * 127.5), 0.0, 255.0));
}

double to_unit(std::uint8_t p) { return p / 127.5 - 1.0; }

// Single-channel 8x8 tiles (in [-1,1]) that lie fully inside the image and
// contain at least one non-key pixel; three tiles (R, G, B) per position.
std::vector<std::vector<double>> nonkey_tiles(const ImageBuffer& image, const SegmentationMask& mask) {
  std::vector<std::vector<double>> tiles;
  const auto px = image.pixels();
  const std::size_t h = mask.height(), w = mask.width();
  for (std::size_t ty = 0; ty + 8 <= h; ty += 8)
    for (std::size_t tx = 0; tx + 8 <= w; tx += 8) {
      bool needed = false;
      for (std::size_t y = ty; y < ty + 8; ++y)
        for (std::size_t x = tx; x < tx + 8; ++x) needed = needed || !mask.at(y, x);
      if (!needed) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> p(64);
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x) p[y * 8 + x] = to_unit(px[3 * ((ty + y) * w + tx + x) + c]);
        tiles.push_back(std::move(p));
      }
    }
  return tiles;
}

struct MaskSpec {
  enum class Kind { File, Centered, Saliency } kind;
  double value;
};

std::vector<MaskSpec> mask_specs(const ExperimentConfig& cfg) {
  std::vector<MaskSpec> specs;
  if (!cfg.mask_path.empty()) {
    specs.push_back({MaskSpec::Kind::File, 0.0});
    return specs;
  }
  for (double a : cfg.alphas) specs.push_back({MaskSpec::Kind::Centered, a});
  for (double q : cfg.mask_quantiles) specs.push_back({MaskSpec::Kind::Saliency, q});
  return specs;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "image",     "mask",        "labels",     "labels_file",  "scene_size",     "alpha",
      "mask_quantile", "snr_db",  "prompts",    "trials",       "seed",           "channel",
      "equalize",  "k1_ratio",    "k2",         "text_mode",    "key_denoise",    "beta_min",
      "beta_max",  "steps",       "generator",  "model",        "quantize_model", "adapter_rank",
      "eps_draws", "saliency_quantile", "out",  "threads", "fixed_scene"};
  return keys;
}

std::size_t non_negative(long long v, const char* key) {
  if (v < 0) throw Error(ErrorCode::InvalidConfig, std::string(key) + " must be >= 0");
  return static_cast<std::size_t>(v);
}

TrialRow summarize(const std::vector<TrialRow>& rows, bool stddev, const TrialRow& proto) {
  TrialRow out = proto;
  const double n = static_cast<double>(rows.size());
  auto stat = [&](auto get) {
    double mean = 0.0;
    for (const auto& r : rows) mean += get(r);
    mean /= n;
    if (!stddev) return mean;
    if (rows.size() < 2) return 0.0;
    double ss = 0.0;
    for (const auto& r : rows) ss += (get(r) - mean) * (get(r) - mean);
    return std::sqrt(ss / (n - 1.0));
  };
  out.metrics.mse = stat([](const TrialRow& r) { return r.metrics.mse; });
  out.metrics.psnr_db = stat([](const TrialRow& r) { return r.metrics.psnr_db; });
  out.metrics.ssim = stat([](const TrialRow& r) { return r.metrics.ssim; });
  out.metrics.iou = stat([](const TrialRow& r) { return r.metrics.iou; });
  out.metrics.hist_similarity = stat([](const TrialRow& r) { return r.metrics.hist_similarity; });
  out.metrics.keypoint_similarity = stat([](const TrialRow& r) { return r.metrics.keypoint_similarity; });
  out.overhead_bytes = stat([](const TrialRow& r) { return r.overhead_bytes; });
  out.eps_xi_hat = stat([](const TrialRow& r) { return r.eps_xi_hat; });
  out.sigma = stat([](const TrialRow& r) { return r.sigma; });
  out.k = stat([](const TrialRow& r) { return r.k; });
  out.alpha_effective = stat([](const TrialRow& r) { return r.alpha_effective; });
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

ExperimentConfig ExperimentConfig::from_config(const Config& c) {
  c.require_known(known_keys());
  ExperimentConfig e;
  e.image_path = c.get_string("image", "");
  e.mask_path = c.get_string("mask", "");
  e.labels = c.get_strings("labels");
  e.labels_path = c.get_string("labels_file", "");
  e.scene_size = non_negative(c.get_int("scene_size", 64), "scene_size");
  e.fixed_scene = c.get_bool("fixed_scene", false);
  e.alphas = c.get_doubles("alpha");
  e.mask_quantiles = c.get_doubles("mask_quantile");
  if (c.has("snr_db")) e.snr_db = c.get_doubles("snr_db");
  if (c.has("prompts")) e.prompts = c.get_bools("prompts");
  e.trials = non_negative(c.get_int("trials", 1), "trials");
  e.seed = static_cast<std::uint64_t>(c.get_int("seed", 1));
  const auto channel = c.get_string("channel", "awgn");
  if (channel == "awgn") e.channel = ChannelKind::Awgn;
  else if (channel == "rayleigh" || channel == "rayleigh-block") e.channel = ChannelKind::RayleighBlock;
  else throw Error(ErrorCode::InvalidConfig, "channel must be awgn or rayleigh, got '" + channel + "'");
  e.equalize = c.get_bool("equalize", true);
  e.k1_ratio = c.get_double("k1_ratio", 1.0);
  e.k2 = non_negative(c.get_int("k2", 256), "k2");
  const auto mode = c.get_string("text_mode", "digital");
  if (mode == "digital") e.text_mode = TextMode::Digital;
  else if (mode == "analog") e.text_mode = TextMode::Analog;
  else throw Error(ErrorCode::InvalidConfig, "text_mode must be digital or analog, got '" + mode + "'");
  e.key_denoise = c.get_bool("key_denoise", true);
  e.schedule.beta_min = c.get_double("beta_min", 0.1);
  e.schedule.beta_max = c.get_double("beta_max", 20.0);
  e.schedule.n_steps = non_negative(c.get_int("steps", 100), "steps");
  const auto gen = c.get_string("generator", "analytic");
  if (gen == "analytic") e.generator = GeneratorKind::Analytic;
  else if (gen == "toy") e.generator = GeneratorKind::Toy;
  else throw Error(ErrorCode::InvalidConfig, "generator must be analytic or toy, got '" + gen + "'");
  e.model_path = c.get_string("model", "");
  e.quantize_model = c.get_bool("quantize_model", false);
  e.adapter_rank = non_negative(c.get_int("adapter_rank", 0), "adapter_rank");
  e.eps_draws = non_negative(c.get_int("eps_draws", 8), "eps_draws");
  e.saliency_quantile = c.get_double("saliency_quantile", 0.9);
  e.out_dir = c.get_string("out", ".");
  e.threads = non_negative(c.get_int("threads", 0), "threads");
  return e;
}

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (trials < 1) bad("trials must be >= 1");
  if (snr_db.empty()) bad("snr_db list must not be empty");
  if (prompts.empty()) bad("prompts list must not be empty");
  if (mask_path.empty() && alphas.empty() && mask_quantiles.empty()) bad("one of mask, alpha or mask_quantile is required");
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) bad("alpha values must be in [0,1]");
  for (double q : mask_quantiles)
    if (!(q > 0.0 && q < 1.0)) bad("mask_quantile values must be in (0,1)");
  for (double s : snr_db)
    if (std::isnan(s) || s == -INFINITY) bad("snr_db values must be numbers or inf");
  if (!(k1_ratio > 0.0 && k1_ratio <= 1.0)) bad("k1_ratio must be in (0,1]");
  if (text_mode == TextMode::Analog && k2 < 1) bad("analog text mode needs k2 >= 1");
  if (k2 > 0xFFFF) bad("k2 must fit in 16 bits");
  if (image_path.empty() && scene_size < 16) bad("scene_size must be >= 16");
  if (!(saliency_quantile > 0.0 && saliency_quantile < 1.0)) bad("saliency_quantile must be in (0,1)");
  if (generator == GeneratorKind::Toy && model_path.empty()) bad("generator = toy needs a model path");
  schedule.validate();
}

ExperimentConfig experiment_config_from(const Config& cfg, const std::filesystem::path& base_dir) {
  ExperimentConfig e = ExperimentConfig::from_config(cfg);
  if (!base_dir.empty()) {
    for (auto* p : {&e.image_path, &e.mask_path, &e.labels_path, &e.model_path})
      if (!p->empty() && p->is_relative()) *p = base_dir / *p;
  }
  if (const char* env = std::getenv("SEMCOMM_SEED"); env && *env) {
    e.seed = static_cast<std::uint64_t>(parse_int(env, "SEMCOMM_SEED"));
  }
  for (const auto* p : {&e.image_path, &e.mask_path, &e.labels_path, &e.model_path}) {
    if (!p->empty() && !std::filesystem::is_regular_file(*p))
      throw Error(ErrorCode::InvalidConfig, "path not readable: " + p->string());
  }
  if (!e.labels_path.empty()) {
    for (auto& l : load_lines(e.labels_path)) e.labels.push_back(std::move(l));
  }
  e.validate();
  return e;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from(Config::load(path), path.parent_path());
}

ImageBuffer synthetic_scene(std::size_t height, std::size_t width, std::uint64_t seed) {
  RngStream rng(seed, kScenePurpose);
  std::array<std::array<double, 3>, 2> colour{};
  std::array<double, 2> noise{4.0 + 8.0 * rng.uniform(), 12.0 + 16.0 * rng.uniform()};
  for (auto& c : colour)
    for (auto& v : c) v = 40.0 + 175.0 * rng.uniform();
  const std::size_t ty = (height + 7) / 8, tx = (width + 7) / 8;
  std::vector<int> cluster(ty * tx);
  for (auto& k : cluster) k = static_cast<int>(rng.next_u64() & 1u);
  ImageBuffer img(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const int k = cluster[(y / 8) * tx + x / 8];
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = colour[static_cast<std::size_t>(k)][c] + noise[static_cast<std::size_t>(k)] * rng.gaussian();
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
      }
    }
  return img;
}

std::pair<std::array<double, 3>, std::array<double, 3>> descriptor_prior(const TextDescriptor* d) {
  if (!d) return {{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
  std::array<double, 3> mu{}, var{};
  for (std::size_t c = 0; c < 3; ++c) mu[c] = d->mean_rgb[c] / 127.5 - 1.0;
  // Mean Sobel magnitude of i.i.d. pixels with std s is s * sqrt(12) * sqrt(pi/2) ~= 4.34 s.
  const double s = d->texture_energy / (std::sqrt(12.0) * std::sqrt(std::numbers::pi / 2.0)) / 127.5;
  for (std::size_t c = 0; c < 3; ++c) {
    // Spread of the dominant colours around the mean accounts for a multi-modal region.
    double spread = 0.0;
    for (const auto& col : d->dominant_colors) {
      const double v = (c == 0 ? col.r : c == 1 ? col.g : col.b) / 127.5 - 1.0 - mu[c];
      spread += v * v;
    }
    if (!d->dominant_colors.empty()) spread /= static_cast<double>(d->dominant_colors.size());
    var[c] = std::clamp(s * s + spread, 1e-4, 1.0);
  }
  return {mu, var};
}

Pipeline::Pipeline(ExperimentConfig cfg, std::shared_ptr<const ToyScoreModel> model)
    : cfg_(std::move(cfg)), vocab_(Vocabulary::standard(cfg_.labels)), model_(std::move(model)) {
  if (cfg_.generator == GeneratorKind::Toy && !model_) {
    auto m = std::make_shared<ToyScoreModel>(ToyScoreModel::load(cfg_.model_path));
    if (cfg_.quantize_model || cfg_.adapter_rank > 0) m->quantize_layers();
    if (cfg_.adapter_rank > 0) {
      RngStream rng(cfg_.seed, kAdapterPurpose);
      m->attach_adapters(cfg_.adapter_rank, rng);
    }
    model_ = std::move(m);
  }
  if (cfg_.generator == GeneratorKind::Toy && model_->cond_dim() != 0 && model_->cond_dim() < kPooledChunks) {
    throw Error(ErrorCode::InvalidConfig, "toy generator: condition dimension must be 0 or >= 8");
  }
}

std::vector<double> Pipeline::generate_nonkey(const SegmentationMask& mask, const std::vector<double>& key,
                                              const TextDescriptor* descriptor, std::uint64_t stream,
                                              ImageBuffer& generated) const {
  RngStream rng = RngStream(cfg_.seed, kGeneratorPurpose).derive(stream);
  const std::size_t nk = mask.size() - mask.count();
  std::vector<double> samples;
  if (nk == 0) return samples;
  auto px = generated.pixels();
  if (cfg_.generator == GeneratorKind::Analytic) {
    // The prior is diagonal, so every coordinate evolves independently. The
    // sampler runs over the full image and keeps the non-key coordinates:
    // a pixel's sample then depends only on its position and the stream, which
    // pairs runs that differ only in the mask.
    const auto [mu_c, var_c] = descriptor_prior(descriptor);
    std::vector<double> mu(3 * mask.size()), sig(3 * mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        mu[3 * i + c] = mu_c[c];
        sig[3 * i + c] = var_c[c];
      }
    AnalyticGaussianScore model(std::move(mu), std::move(sig), cfg_.schedule);
    const auto full = reverse_sde_sample(model, {}, cfg_.schedule, rng, 3 * mask.size());
    samples.reserve(3 * nk);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        px[3 * i + c] = to_pixel(full[3 * i + c]);
        samples.push_back(full[3 * i + c]);
      }
    }
    return samples;
  }
  // Toy generator: 8x8 tiles per channel, each sampled with the shared condition.
  const ToyScoreModel& model = *model_;
  std::vector<double> cond;
  if (model.cond_dim() > 0) cond = condition_embedding(key, descriptor, model.cond_dim() - kPooledChunks);
  const std::size_t h = mask.height(), w = mask.width();
  std::size_t tile = 0;
  for (std::size_t ty = 0; ty < h; ty += 8) {
    for (std::size_t tx = 0; tx < w; tx += 8, ++tile) {
      bool needed = false;
      for (std::size_t y = ty; y < std::min(h, ty + 8) && !needed; ++y)
        for (std::size_t x = tx; x < std::min(w, tx + 8); ++x) needed = needed || !mask.at(y, x);
      if (!needed) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        RngStream tile_rng = rng.derive(tile * 3 + c);
        const auto patch = reverse_sde_sample(model, cond, cfg_.schedule, tile_rng, model.data_dim());
        for (std::size_t y = ty; y < std::min(h, ty + 8); ++y)
          for (std::size_t x = tx; x < std::min(w, tx + 8); ++x) {
            const std::size_t k = (y - ty) * 8 + (x - tx);
            if (!mask.at(y, x) && k < patch.size()) px[3 * (y * w + x) + c] = to_pixel(patch[k]);
          }
        samples.insert(samples.end(), patch.begin(), patch.end());
      }
    }
  }
  return samples;
}

double Pipeline::score_matching_loss(const ImageBuffer& image, const SegmentationMask& mask,
                                     const std::vector<double>& key, const TextDescriptor* descriptor,
                                     std::uint64_t stream) const {
  const std::size_t nk = mask.size() - mask.count();
  if (nk == 0 || cfg_.eps_draws == 0) return 0.0;
  RngStream rng = RngStream(cfg_.seed, kScorePurpose).derive(stream);
  const auto px = image.pixels();
  if (cfg_.generator == GeneratorKind::Analytic) {
    const auto [mu_c, var_c] = descriptor_prior(descriptor);
    double total = 0.0;
    for (std::size_t d = 0; d < cfg_.eps_draws; ++d) {
      // Stratified t ~ U(t_min, 1): one draw per equal-width stratum.
      const double u = (static_cast<double>(d) + rng.uniform()) / static_cast<double>(cfg_.eps_draws);
      const double t = kTMin + (1.0 - kTMin) * u;
      const double ab = cfg_.schedule.alpha_bar(t);
      const double sa = std::sqrt(ab), st = std::sqrt(1.0 - ab);
      for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          const double z = rng.gaussian();
          const double xt = sa * to_unit(px[3 * i + c]) + st * z;
          const double s = -(xt - sa * mu_c[c]) / (ab * var_c[c] + 1.0 - ab);
          total += (s * st + z) * (s * st + z);
        }
      }
    }
    return total / static_cast<double>(3 * nk * cfg_.eps_draws);
  }
  const ToyScoreModel& model = *model_;
  std::vector<double> cond;
  if (model.cond_dim() > 0) cond = condition_embedding(key, descriptor, model.cond_dim() - kPooledChunks);
  const auto patches = nonkey_tiles(image, mask);
  const std::vector<std::vector<double>> conds(cond.empty() ? 0 : patches.size(), cond);
  if (patches.empty() || model.data_dim() != 64) return 0.0;
  return denoising_loss(model, patches, conds, rng, cfg_.eps_draws, kTMin);
}

namespace {

CodecConfig codec_for(std::size_t m, double k1_ratio, std::size_t k2, std::uint64_t seed, TextMode mode) {
  CodecConfig cc;
  cc.m = m;
  cc.k1 = m == 0 ? 0
                 : std::clamp<std::size_t>(
                       static_cast<std::size_t>(std::ceil(k1_ratio * static_cast<double>(m) - 1e-9)), 1, m);
  cc.k2 = mode == TextMode::Analog ? k2 : 0;
  cc.seed = seed;
  cc.mode = mode;
  return cc;
}

}  // namespace

EncodedImage Pipeline::encode(const ImageBuffer& image, const SegmentationMask& mask, bool prompts) const {
  EncodedImage enc;
  if (!mask.matches(image))
    throw Error(ErrorCode::InvalidInput, "semantic_splitter/extract: mask and image dimensions differ");
  if (image.height() > 0xFFFF || image.width() > 0xFFFF)
    throw Error(ErrorCode::TooLarge, "wire_format/encode: image dimensions exceed 65535");
  const auto key = stage("semantic_splitter", "extract", [&] { return extract_key_features(image, mask); });
  enc.sent = stage("semantic_splitter", "describe", [&] { return describe_nonkey(image, mask, cfg_.labels); });
  const auto prompt = stage("prompt_codec", "serialize", [&] { return serialize_prompt(enc.sent); });

  const TextMode mode = prompts ? cfg_.text_mode : TextMode::Digital;
  const CodecConfig cc = codec_for(key.values.size(), cfg_.k1_ratio, cfg_.k2, hash_combine(cfg_.seed, kProjectionPurpose), mode);
  if (cc.k1 > 0xFFFF || cc.k2 > 0xFFFF)
    throw Error(ErrorCode::TooLarge, "latent_codec/configure: k1=" + std::to_string(cc.k1) + " exceeds the 16-bit packet field");
  const auto proj = stage("latent_codec", "projection", [&] { return ProjectionPair::build(cc.m, cc.k1, cc.seed); });
  const auto latent = stage("latent_codec", "encode", [&] { return semcomm::encode(key.values, prompt, cc, vocab_, proj); });

  SemanticPacket& pkt = enc.packet;
  pkt.flags = mode == TextMode::Digital ? kFlagDigitalText : 0;
  pkt.height = static_cast<std::uint16_t>(image.height());
  pkt.width = static_cast<std::uint16_t>(image.width());
  pkt.alpha_fx = alpha_to_fx(mask.alpha_effective());
  pkt.k1 = static_cast<std::uint16_t>(cc.k1);
  pkt.k2 = static_cast<std::uint16_t>(cc.k2);
  pkt.norm_scale = static_cast<float>(latent.scale);
  pkt.seed = cc.seed;
  pkt.latent.assign(latent.values.begin(), latent.values.end());
  if (mode == TextMode::Digital && prompts) pkt.text = prompt.text;
  pkt.mask_runs = encode_rle(mask.bits());
  return enc;
}

ChannelPass Pipeline::transmit(const SemanticPacket& packet, double snr_db, std::uint64_t channel_stream) const {
  ChannelPass pass;
  pass.packet = packet;
  pass.sigma = stage("channel", "configure", [&] { return snr_db_to_sigma(snr_db); });
  if (!(packet.norm_scale > 0.0f) || packet.latent.empty()) return pass;  // silent image part
  ChannelConfig ch;
  ch.kind = cfg_.channel;
  ch.snr_db = snr_db;
  ch.equalize = cfg_.equalize;
  ch.seed = cfg_.seed;
  ch.stream = channel_stream;
  // The float latent is renormalized to unit power so rounding to f32 cannot
  // trip the transmitter's power check.
  std::vector<double> y(packet.latent.begin(), packet.latent.end());
  const double p = mean_square(y);
  for (auto& v : y) v /= std::sqrt(p);
  const auto out = stage("channel", "transmit", [&] { return semcomm::transmit(y, ch); });
  const auto rx = cfg_.equalize ? stage("channel", "equalize", [&] { return equalize(out); }) : out.values;
  pass.gain = cfg_.equalize ? out.h_used : 1.0;
  for (std::size_t i = 0; i < rx.size(); ++i) pass.packet.latent[i] = static_cast<float>(rx[i] * std::sqrt(p));
  return pass;
}

Reconstruction Pipeline::decode(const SemanticPacket& rx, double sigma, double gain,
                                std::uint64_t generator_stream) const {
  Reconstruction rec;
  rec.mask = SegmentationMask(rx.height, rx.width, stage("wire_format", "mask", [&] {
                                return decode_rle(rx.mask_runs, std::size_t{rx.height} * rx.width);
                              }));
  rec.prompts = !(rx.digital() && rx.text.empty());
  const TextMode mode = rx.digital() ? TextMode::Digital : TextMode::Analog;
  CodecConfig cc;
  cc.m = 3 * rec.mask.count();
  cc.k1 = rx.k1;
  cc.k2 = mode == TextMode::Analog ? rx.k2 : 0;
  cc.seed = rx.seed;
  cc.mode = mode;
  const double scale = rx.norm_scale;
  const auto proj = stage("latent_codec", "projection", [&] {
    cc.validate();
    return ProjectionPair::build(cc.m, cc.k1, cc.seed);
  });
  const std::vector<double> received(rx.latent.begin(), rx.latent.end());
  if (rec.prompts) {
    auto decoded = stage("latent_codec", "decode", [&] {
      return split_and_decode(received, scale, cc, vocab_, proj,
                              mode == TextMode::Digital ? std::optional<std::string_view>(rx.text) : std::nullopt);
    });
    rec.key_features = std::move(decoded.key_features);
    rec.received = decoded.descriptor;
  } else {
    rec.key_features = stage("latent_codec", "decode", [&] {
      if (received.size() != cc.k1) throw Error(ErrorCode::InvalidInput, "latent length does not match k1");
      if (!(scale > 0.0)) return std::vector<double>(cc.m, 0.0);
      std::vector<double> img(received.begin(), received.end());
      for (auto& v : img) v /= scale;
      return proj.backward(img);
    });
  }
  if (cfg_.key_denoise)
    wiener_denoise_key_features(rec.key_features, rec.mask,
                                key_feature_noise_variance(sigma, gain, scale, cc.k1, cc.m));

  const TextDescriptor* cond_desc = rec.prompts ? &rec.received : nullptr;
  ImageBuffer generated(rx.height, rx.width, std::uint8_t{0});
  stage("diffusion_reconstructor", "sample",
        [&] { return generate_nonkey(rec.mask, rec.key_features, cond_desc, generator_stream, generated); });
  rec.image = stage("diffusion_reconstructor", "composite",
                    [&] { return composite(rec.key_features, rec.mask, generated); });
  return rec;
}

PipelineResult Pipeline::run(const ImageBuffer& image, const SegmentationMask& mask, double snr_db, bool prompts,
                             std::uint64_t channel_stream, std::uint64_t generator_stream) const {
  PipelineResult res;
  auto enc = encode(image, mask, prompts);
  res.sent = enc.sent;
  const auto bytes = stage("wire_format", "encode", [&] { return encode_packet(enc.packet); });
  res.overhead_bytes = bytes.size();
  res.packet = stage("wire_format", "decode", [&] { return decode_packet(bytes); });
  const auto pass = transmit(res.packet, snr_db, channel_stream);
  res.sigma = pass.sigma;
  res.k = res.packet.latent.size();
  auto rec = decode(pass.packet, pass.sigma, pass.gain, generator_stream);
  res.received = rec.received;
  res.reconstruction = std::move(rec.image);
  res.mask = std::move(rec.mask);
  const TextDescriptor* cond_desc = rec.prompts ? &res.received : nullptr;
  res.eps_xi_hat = stage("diffusion_reconstructor", "score_loss", [&] {
    return score_matching_loss(image, res.mask, rec.key_features, cond_desc, generator_stream);
  });
  res.metrics = stage("metrics", "evaluate", [&] {
    return evaluate_metrics(image, res.reconstruction, segment_saliency(image, cfg_.saliency_quantile),
                            segment_saliency(res.reconstruction, cfg_.saliency_quantile));
  });
  res.alpha_effective = mask.alpha_effective();
  return res;
}

std::uint64_t single_run_stream() { return hash_combine(0, 0); }

PipelineResult run_pipeline(const ExperimentConfig& cfg, const ImageBuffer& image, const SegmentationMask& mask,
                            double snr_db, bool prompts) {
  const Pipeline p(cfg);
  return p.run(image, mask, snr_db, prompts, single_run_stream(), single_run_stream());
}

SegmentationMask single_run_mask(const ExperimentConfig& cfg, const ImageBuffer& image) {
  if (!cfg.mask_path.empty()) return load_mask(cfg.mask_path, image);
  if (!cfg.alphas.empty()) return centered_mask(image.height(), image.width(), cfg.alphas.front());
  return segment_saliency(image, cfg.mask_quantiles.empty() ? cfg.saliency_quantile : cfg.mask_quantiles.front());
}

RunInput single_run_input(const ExperimentConfig& cfg) {
  RunInput in;
  in.image = cfg.image_path.empty() ? synthetic_scene(cfg.scene_size, cfg.scene_size, hash_combine(cfg.seed, 0))
                                    : load_image(cfg.image_path);
  in.mask = single_run_mask(cfg, in.image);
  return in;
}

TrialRow trial_row(const PipelineResult& res, double alpha, double snr_db, bool prompts, std::size_t trial) {
  TrialRow row;
  row.alpha = alpha;
  row.snr_db = snr_db;
  row.prompts = prompts;
  row.trial = trial;
  row.metrics = res.metrics;
  row.overhead_bytes = static_cast<double>(res.overhead_bytes);
  row.eps_xi_hat = res.eps_xi_hat;
  row.sigma = res.sigma;
  row.k = static_cast<double>(res.k);
  row.alpha_effective = res.alpha_effective;
  return row;
}

SweepResult run_sweep(const ExperimentConfig& cfg, std::shared_ptr<const ToyScoreModel> model) {
  cfg.validate();
  const auto specs = mask_specs(cfg);
  const std::size_t na = specs.size(), ns = cfg.snr_db.size(), np = cfg.prompts.size();
  if (na * ns * np < 2) throw Error(ErrorCode::InvalidConfig, "sweep needs at least 2 sweep points");
  const Pipeline pipeline(cfg, std::move(model));

  std::optional<ImageBuffer> fixed_image;
  if (!cfg.image_path.empty()) fixed_image = load_image(cfg.image_path);
  std::optional<SegmentationMask> fixed_mask;
  if (!cfg.mask_path.empty()) {
    if (!fixed_image) throw Error(ErrorCode::InvalidConfig, "a mask file needs an image file");
    fixed_mask = load_mask(cfg.mask_path, *fixed_image);
  }

  SweepResult result;
  result.points.resize(na * ns * np);
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t s = 0; s < ns; ++s)
      for (std::size_t p = 0; p < np; ++p) {
        auto& pt = result.points[(a * ns + s) * np + p];
        pt.alpha_index = a;
        pt.snr_index = s;
        pt.prompt_index = p;
        pt.alpha = fixed_mask ? fixed_mask->alpha_effective() : specs[a].value;
        pt.snr_db = cfg.snr_db[s];
        pt.prompts = cfg.prompts[p];
        pt.trials.resize(cfg.trials);
      }

  const std::size_t jobs = result.points.size() * cfg.trials;
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        const std::size_t point = j / cfg.trials, trial = j % cfg.trials;
        auto& pt = result.points[point];
        const ImageBuffer image = fixed_image ? *fixed_image
                                              : synthetic_scene(cfg.scene_size, cfg.scene_size,
                                                                hash_combine(cfg.seed, cfg.fixed_scene ? 0 : trial));
        SegmentationMask mask = fixed_mask ? *fixed_mask : SegmentationMask(image.height(), image.width(), false);
        if (!fixed_mask) {
          const auto& spec = specs[pt.alpha_index];
          mask = spec.kind == MaskSpec::Kind::Centered ? centered_mask(image.height(), image.width(), spec.value)
                                                       : segment_saliency(image, spec.value);
        }
        // Channel noise differs per point; the generator stream depends only
        // on the mask point and trial, pairing trials across SNR and prompt settings.
        const auto res = pipeline.run(image, mask, pt.snr_db, pt.prompts, hash_combine(point, trial),
                                      hash_combine(hash_combine(kGeneratorPurpose, pt.alpha_index), trial));
        pt.trials[trial] = trial_row(res, pt.alpha, pt.snr_db, pt.prompts, trial);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  std::size_t threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (auto& pt : result.points) {
    pt.mean = summarize(pt.trials, false, pt.trials.front());
    pt.stddev = summarize(pt.trials, true, pt.trials.front());
  }
  return result;
}

std::string csv_row(const std::string& kind, const TrialRow& r, bool with_trial) {
  std::string s = kind;
  auto add = [&s](const std::string& v) {
    s.push_back(',');
    s += v;
  };
  add(format_double(r.alpha));
  add(format_double(r.snr_db));
  add(r.prompts ? "1" : "0");
  add(with_trial ? std::to_string(r.trial) : "");
  add(format_double(r.metrics.mse));
  add(format_double(r.metrics.psnr_db));
  add(format_double(r.metrics.ssim));
  add(format_double(r.metrics.iou));
  add(format_double(r.metrics.hist_similarity));
  add(format_double(r.metrics.keypoint_similarity));
  add(format_double(r.overhead_bytes));
  add(format_double(r.eps_xi_hat));
  return s;
}

std::string sweep_csv(const SweepResult& sweep) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& pt : sweep.points)
    for (const auto& row : pt.trials) out += csv_row("trial", row, true) + "\n";
  for (const auto& pt : sweep.points) {
    out += csv_row("mean", pt.mean, false) + "\n";
    out += csv_row("std", pt.stddev, false) + "\n";
  }
  return out;
}

BoundReport fit_bound_from_sweeps(const SweepResult& fit_sweep, const SweepResult& held_out) {
  // Grid cells are split like a checkerboard: even (alpha index + SNR index)
  // cells of the first sweep fit the constants, odd cells of the re-seeded
  // sweep check them, so no check point shares a grid cell or a seed with
  // the fit.
  auto collect = [](const SweepResult& sweep, std::size_t parity, std::vector<BoundMeasurement>& ms,
                    std::vector<double>& snrs) {
    std::set<std::size_t> alphas, snr_set;
    for (const auto& pt : sweep.points) {
      if (pt.prompt_index != 0) continue;
      alphas.insert(pt.alpha_index);
      snr_set.insert(pt.snr_index);
      if (pt.mean.alpha_effective >= 1.0)
        throw Error(ErrorCode::SingularFeature, "fit-bound: alpha = 1 makes (1-alpha)^(-1/2) infinite");
      if ((pt.alpha_index + pt.snr_index) % 2 != parity) continue;
      ms.push_back({pt.mean.alpha_effective, pt.mean.sigma, pt.mean.k, pt.mean.eps_xi_hat,
                    pt.mean.metrics.mse / (255.0 * 255.0)});
      snrs.push_back(pt.snr_db);
    }
    if (alphas.size() < 3 || snr_set.size() < 3)
      throw Error(ErrorCode::InvalidConfig, "fit-bound: the sweep must cover >= 3 alpha and >= 3 SNR values");
  };
  std::vector<BoundMeasurement> fit_set, held;
  std::vector<double> fit_snr, held_snr;
  collect(fit_sweep, 0, fit_set, fit_snr);
  collect(held_out, 1, held, held_snr);

  BoundReport rep;
  rep.fit = fit_distortion_bound(fit_set);
  rep.fit_points = fit_set.size();
  rep.held_out = held.size();
  rep.csv = "alpha,snr_db,sigma,k,eps_xi_hat,distortion,bound,holds,slack,set\n";
  auto emit = [&](const BoundMeasurement& m, double snr, const char* set) {
    const auto chk = check_bound(rep.fit, m.alpha, m.sigma, m.k, m.eps_xi_hat, m.distortion);
    rep.csv += format_double(m.alpha) + "," + format_double(snr) + "," + format_double(m.sigma) + "," +
               format_double(m.k) + "," + format_double(m.eps_xi_hat) + "," + format_double(m.distortion) + "," +
               format_double(chk.slack + m.distortion) + "," + (chk.holds ? "1" : "0") + "," +
               format_double(chk.slack) + "," + set + "\n";
    return chk.holds;
  };
  for (std::size_t i = 0; i < fit_set.size(); ++i) emit(fit_set[i], fit_snr[i], "fit");
  for (std::size_t i = 0; i < held.size(); ++i) rep.covered += emit(held[i], held_snr[i], "held_out") ? 1 : 0;
  rep.coverage = held.empty() ? 1.0 : static_cast<double>(rep.covered) / static_cast<double>(held.size());
  return rep;
}

BoundReport fit_bound_cmd(const ExperimentConfig& cfg, std::shared_ptr<const ToyScoreModel> model) {
  for (double a : cfg.alphas)
    if (a >= 1.0) throw Error(ErrorCode::SingularFeature, "fit-bound: alpha = 1 makes (1-alpha)^(-1/2) infinite");
  if (cfg.alphas.size() + cfg.mask_quantiles.size() < 3 || cfg.snr_db.size() < 3)
    throw Error(ErrorCode::InvalidConfig, "fit-bound: need >= 3 alpha values and >= 3 SNR values");
  ExperimentConfig held = cfg;
  held.seed = hash_combine(cfg.seed, kHeldOutPurpose);
  return fit_bound_from_sweeps(run_sweep(cfg, model), run_sweep(held, model));
}

PatchSet scene_patch_set(const ExperimentConfig& cfg, std::size_t scenes, std::size_t cond_dim, std::uint64_t seed) {
  if (cond_dim != 0 && cond_dim < kPooledChunks)
    throw Error(ErrorCode::InvalidParameter, "train-toy: condition dimension must be 0 or >= 8");
  if (cfg.scene_size < 8) throw Error(ErrorCode::InvalidConfig, "train-toy: scene_size must be >= 8");
  const std::vector<double> alphas = cfg.alphas.empty() ? std::vector<double>{0.5} : cfg.alphas;
  PatchSet set;
  for (std::size_t s = 0; s < scenes; ++s) {
    const auto scene = synthetic_scene(cfg.scene_size, cfg.scene_size, hash_combine(seed, s));
    const auto mask = centered_mask(cfg.scene_size, cfg.scene_size, alphas[s % alphas.size()]);
    std::vector<double> cond;
    if (cond_dim > 0) {
      const auto key = extract_key_features(scene, mask);
      const auto desc = describe_nonkey(scene, mask, cfg.labels);
      cond = condition_embedding(key.values, &desc, cond_dim - kPooledChunks);
    }
    for (auto& tile : nonkey_tiles(scene, mask)) {
      set.patches.push_back(std::move(tile));
      if (cond_dim > 0) set.conds.push_back(cond);
      set.cluster.push_back(static_cast<int>(s));
    }
  }
  return set;
}

ToyTrainReport train_toy_cmd(const ExperimentConfig& cfg, std::size_t scenes, std::size_t cond_dim,
                             const ToyTrainConfig& train) {
  const auto data = scene_patch_set(cfg, scenes, cond_dim, hash_combine(cfg.seed, kScenePurpose));
  const auto check = scene_patch_set(cfg, std::max<std::size_t>(scenes / 4, 1), cond_dim,
                                     hash_combine(cfg.seed, kHeldOutPurpose));
  RngStream rng(cfg.seed, kGeneratorPurpose);
  ToyTrainReport rep{train_score_toy(data.patches, data.conds, cfg.schedule, train, rng), data.patches.size(),
                     check.patches.size()};
  // The trainer initializes from rng.derive(1); rebuilding that model gives
  // the untrained loss on the same check draws.
  RngStream init_rng = rng.derive(1);
  const ToyScoreModel untrained(data.patches.front().size(), cond_dim, cfg.schedule, init_rng);
  const std::vector<std::vector<double>> zero(check.conds.size(), std::vector<double>(cond_dim, 0.0));
  auto loss = [&](const ToyScoreModel& model, const std::vector<std::vector<double>>& conds) {
    RngStream r(cfg.seed, kScorePurpose);
    return denoising_loss(model, check.patches, conds, r, train.val_draws, train.t_min);
  };
  rep.initial_loss = loss(untrained, check.conds);
  rep.check_loss = loss(rep.result.model, check.conds);
  rep.check_loss_uncond = loss(rep.result.model, zero);
  return rep;
}

}  // namespace semcomm
