#include "semcomm/semcomm.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <new>
#include <string>
#include <utility>
#include <vector>

#include "core/config.hpp"
#include "core/errors.hpp"
#include "core/experiment.hpp"
#include "core/image_io.hpp"
#include "core/losses.hpp"
#include "core/metrics.hpp"
#include "core/quant.hpp"
#include "core/splitter.hpp"
#include "core/toy_model.hpp"
#include "core/wire.hpp"
#include "json.hpp"

struct semc_buffer {
  std::string bytes;  // std::string keeps a trailing NUL for text payloads
};

struct semc_image {
  semcomm::ImageBuffer image;
};

struct semc_mask {
  semcomm::SegmentationMask mask;
};

struct semc_experiment {
  semcomm::ExperimentConfig cfg;
  std::string out_dir;
  std::unique_ptr<semcomm::Pipeline> pipeline;
};

struct semc_result {
  semcomm::PipelineResult result;
  semc_image image;
  double snr_db = 0.0;
  bool prompts = true;
};

namespace {

using nlohmann::json;
using semcomm::ErrorCode;

constexpr const char* kVersion = "0.1.0";

static_assert(static_cast<int>(ErrorCode::IoError) + 1 == SEMC_IO_ERROR,
              "status codes must follow the core error order");

thread_local std::string g_last_error;

struct NullArgument {
  const char* name;
};

template <typename T>
T* require(T* p, const char* name) {
  if (!p) throw NullArgument{name};
  return p;
}

semc_status fail(semc_status status, std::string message) {
  try {
    g_last_error = std::move(message);
  } catch (...) {
    g_last_error.clear();
  }
  return status;
}

template <typename F>
semc_status guard(F&& body) noexcept {
  try {
    body();
    return SEMC_OK;
  } catch (const NullArgument& e) {
    return fail(SEMC_NULL_ARGUMENT, std::string("null argument: ") + e.name);
  } catch (const semcomm::Error& e) {
    return fail(static_cast<semc_status>(static_cast<int>(e.code()) + 1), e.what());
  } catch (const std::bad_alloc&) {
    return fail(SEMC_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SEMC_INTERNAL, std::string("internal error: ") + e.what());
  } catch (...) {
    return fail(SEMC_INTERNAL, "internal error");
  }
}

semc_buffer* new_buffer(std::string bytes) { return new semc_buffer{std::move(bytes)}; }

semc_buffer* new_buffer(const std::vector<std::uint8_t>& bytes) {
  return new semc_buffer{std::string(bytes.begin(), bytes.end())};
}

std::span<const std::uint8_t> bytes_of(const semc_buffer* buf) {
  return {reinterpret_cast<const std::uint8_t*>(buf->bytes.data()), buf->bytes.size()};
}

semc_metrics to_c(const semcomm::MetricReport& m) {
  return {m.mse, m.psnr_db, m.ssim, m.iou, m.hist_similarity, m.keypoint_similarity};
}

semc_experiment* build_experiment(semcomm::Config cfg, const char* const* overrides, std::size_t n,
                                  const std::filesystem::path& base_dir) {
  if (n > 0) require(overrides, "overrides");
  for (std::size_t i = 0; i < n; ++i) cfg.merge(semcomm::Config::parse(require(overrides[i], "override")));
  auto exp = std::make_unique<semc_experiment>();
  exp->cfg = semcomm::experiment_config_from(cfg, base_dir);
  exp->out_dir = exp->cfg.out_dir.string();
  exp->pipeline = std::make_unique<semcomm::Pipeline>(exp->cfg);
  return exp.release();
}

json weights_json(const semcomm::LossWeights& w) {
  return {{"lambda", w.lambda}, {"beta", w.beta}, {"tau", w.tau}, {"distill_t", w.distill_t}};
}

}  // namespace

extern "C" {

const char* semc_status_name(semc_status status) {
  switch (status) {
    case SEMC_OK: return "ok";
    case SEMC_NULL_ARGUMENT: return "null-argument";
    case SEMC_INTERNAL: return "internal";
    default: break;
  }
  if (status >= SEMC_INVALID_PARAMETER && status <= SEMC_IO_ERROR)
    return semcomm::error_code_name(static_cast<ErrorCode>(status - 1)).data();
  return "unknown";
}

const char* semc_last_error(void) { return g_last_error.c_str(); }

const char* semc_version(void) { return kVersion; }

// ---------------------------------------------------------------- buffers

semc_status semc_buffer_create(const void* data, size_t size, semc_buffer** out) {
  return guard([&] {
    require(out, "out");
    if (size > 0) require(data, "data");
    *out = new_buffer(std::string(static_cast<const char*>(data), size));
  });
}

semc_status semc_buffer_read_file(const char* path, semc_buffer** out) {
  return guard([&] { *require(out, "out") = new_buffer(semcomm::read_file_bytes(require(path, "path"))); });
}

semc_status semc_buffer_write_file(const semc_buffer* buf, const char* path) {
  return guard([&] { semcomm::write_file_bytes(require(path, "path"), bytes_of(require(buf, "buf"))); });
}

semc_status semc_buffer_data(const semc_buffer* buf, const uint8_t** data, size_t* size) {
  return guard([&] {
    require(buf, "buf");
    *require(data, "data") = reinterpret_cast<const uint8_t*>(buf->bytes.c_str());
    *require(size, "size") = buf->bytes.size();
  });
}

void semc_buffer_free(semc_buffer* buf) { delete buf; }

// ----------------------------------------------------------- images/masks

semc_status semc_image_load(const char* path, semc_image** out) {
  return guard([&] { *require(out, "out") = new semc_image{semcomm::load_image(require(path, "path"))}; });
}

semc_status semc_image_save(const semc_image* img, const char* path) {
  return guard([&] { semcomm::save_image(require(img, "img")->image, require(path, "path")); });
}

semc_status semc_image_create(size_t height, size_t width, const uint8_t* rgb, semc_image** out) {
  return guard([&] {
    require(out, "out");
    const std::size_t n = height * width * semcomm::ImageBuffer::kChannels;
    if (n > 0) require(rgb, "rgb");
    *out = new semc_image{semcomm::ImageBuffer(height, width, std::vector<std::uint8_t>(rgb, rgb + n))};
  });
}

semc_status semc_image_size(const semc_image* img, size_t* height, size_t* width) {
  return guard([&] {
    require(img, "img");
    *require(height, "height") = img->image.height();
    *require(width, "width") = img->image.width();
  });
}

semc_status semc_image_pixels(const semc_image* img, const uint8_t** rgb) {
  return guard([&] { *require(rgb, "rgb") = require(img, "img")->image.pixels().data(); });
}

void semc_image_free(semc_image* img) { delete img; }

semc_status semc_mask_load(const char* path, const semc_image* ref, semc_mask** out) {
  return guard([&] {
    require(out, "out");
    require(path, "path");
    *out = new semc_mask{ref ? semcomm::load_mask(path, ref->image) : semcomm::load_mask(path)};
  });
}

semc_status semc_mask_save(const semc_mask* mask, const char* path) {
  return guard([&] { semcomm::save_mask(require(mask, "mask")->mask, require(path, "path")); });
}

semc_status semc_mask_create(size_t height, size_t width, const uint8_t* bits, semc_mask** out) {
  return guard([&] {
    require(out, "out");
    if (height * width > 0) require(bits, "bits");
    *out = new semc_mask{semcomm::SegmentationMask(height, width, std::vector<std::uint8_t>(bits, bits + height * width))};
  });
}

semc_status semc_mask_centered(size_t height, size_t width, double alpha, semc_mask** out) {
  return guard([&] { *require(out, "out") = new semc_mask{semcomm::centered_mask(height, width, alpha)}; });
}

semc_status semc_mask_size(const semc_mask* mask, size_t* height, size_t* width, size_t* key_pixels) {
  return guard([&] {
    require(mask, "mask");
    *require(height, "height") = mask->mask.height();
    *require(width, "width") = mask->mask.width();
    *require(key_pixels, "key_pixels") = mask->mask.count();
  });
}

semc_status semc_mask_bits(const semc_mask* mask, const uint8_t** bits) {
  return guard([&] { *require(bits, "bits") = require(mask, "mask")->mask.bits().data(); });
}

void semc_mask_free(semc_mask* mask) { delete mask; }

semc_status semc_segment(const semc_image* img, double quantile, semc_mask** out) {
  return guard([&] {
    require(out, "out");
    *out = new semc_mask{semcomm::segment_saliency(require(img, "img")->image, quantile)};
  });
}

// --------------------------------------------------------------- metrics

semc_status semc_metrics_compare(const semc_image* original, const semc_image* reconstructed,
                                 const semc_mask* mask_original, const semc_mask* mask_reconstructed,
                                 double quantile, semc_metrics* out) {
  return guard([&] {
    const auto& a = require(original, "original")->image;
    const auto& b = require(reconstructed, "reconstructed")->image;
    require(out, "out");
    if ((mask_original == nullptr) != (mask_reconstructed == nullptr))
      throw semcomm::Error(ErrorCode::InvalidInput, "metrics: give both masks or neither");
    const auto ma = mask_original ? mask_original->mask : semcomm::segment_saliency(a, quantile);
    const auto mb = mask_reconstructed ? mask_reconstructed->mask : semcomm::segment_saliency(b, quantile);
    *out = to_c(semcomm::evaluate_metrics(a, b, ma, mb));
  });
}

// ------------------------------------------------------------ experiments

semc_status semc_experiment_load(const char* path, const char* const* overrides, size_t n_overrides,
                                 semc_experiment** out) {
  return guard([&] {
    require(out, "out");
    const std::filesystem::path p = require(path, "path");
    *out = build_experiment(semcomm::Config::load(p), overrides, n_overrides, p.parent_path());
  });
}

semc_status semc_experiment_parse(const char* text, const char* const* overrides, size_t n_overrides,
                                  semc_experiment** out) {
  return guard([&] {
    require(out, "out");
    *out = build_experiment(semcomm::Config::parse(require(text, "text")), overrides, n_overrides, {});
  });
}

semc_status semc_experiment_seed(const semc_experiment* exp, uint64_t* seed) {
  return guard([&] { *require(seed, "seed") = require(exp, "exp")->cfg.seed; });
}

semc_status semc_experiment_out_dir(const semc_experiment* exp, const char** dir) {
  return guard([&] { *require(dir, "dir") = require(exp, "exp")->out_dir.c_str(); });
}

semc_status semc_experiment_snr_db(const semc_experiment* exp, double* snr_db) {
  return guard([&] { *require(snr_db, "snr_db") = require(exp, "exp")->cfg.snr_db.front(); });
}

semc_status semc_experiment_input(const semc_experiment* exp, semc_image** image, semc_mask** mask) {
  return guard([&] {
    require(image, "image");
    require(mask, "mask");
    auto in = semcomm::single_run_input(require(exp, "exp")->cfg);
    auto img = std::make_unique<semc_image>(semc_image{std::move(in.image)});
    *mask = new semc_mask{std::move(in.mask)};
    *image = img.release();
  });
}

semc_status semc_experiment_mask(const semc_experiment* exp, const semc_image* image, semc_mask** mask) {
  return guard([&] {
    require(mask, "mask");
    *mask = new semc_mask{semcomm::single_run_mask(require(exp, "exp")->cfg, require(image, "image")->image)};
  });
}

void semc_experiment_free(semc_experiment* exp) { delete exp; }

// --------------------------------------------------------- staged pipeline

semc_status semc_encode(const semc_experiment* exp, const semc_image* img, const semc_mask* mask, int prompts,
                        semc_buffer** packet) {
  return guard([&] {
    require(packet, "packet");
    const auto enc = require(exp, "exp")->pipeline->encode(require(img, "img")->image, require(mask, "mask")->mask,
                                                            prompts != 0);
    *packet = new_buffer(semcomm::encode_packet(enc.packet));
  });
}

semc_status semc_transmit(const semc_experiment* exp, const semc_buffer* packet, double snr_db,
                          semc_buffer** received, semc_channel_state* state) {
  return guard([&] {
    require(received, "received");
    require(state, "state");
    const auto pkt = semcomm::decode_packet(bytes_of(require(packet, "packet")));
    const auto pass = require(exp, "exp")->pipeline->transmit(pkt, snr_db, semcomm::single_run_stream());
    *received = new_buffer(semcomm::encode_packet(pass.packet));
    *state = {snr_db, pass.sigma, pass.gain};
  });
}

semc_status semc_decode(const semc_experiment* exp, const semc_buffer* received, const semc_channel_state* state,
                        semc_image** reconstruction, semc_mask** mask) {
  return guard([&] {
    require(reconstruction, "reconstruction");
    require(mask, "mask");
    const auto pkt = semcomm::decode_packet(bytes_of(require(received, "received")));
    const double sigma = state ? state->sigma : 0.0, gain = state ? state->gain : 1.0;
    auto rec = require(exp, "exp")->pipeline->decode(pkt, sigma, gain, semcomm::single_run_stream());
    auto img = std::make_unique<semc_image>(semc_image{std::move(rec.image)});
    *mask = new semc_mask{std::move(rec.mask)};
    *reconstruction = img.release();
  });
}

// ------------------------------------------------------ end-to-end runs

semc_status semc_pipeline(const semc_experiment* exp, const semc_image* img, const semc_mask* mask,
                          semc_result** out) {
  return guard([&] {
    require(out, "out");
    const auto& cfg = require(exp, "exp")->cfg;
    auto res = std::make_unique<semc_result>();
    res->snr_db = cfg.snr_db.front();
    res->prompts = cfg.prompts.front();
    res->result = exp->pipeline->run(require(img, "img")->image, require(mask, "mask")->mask, res->snr_db,
                                     res->prompts, semcomm::single_run_stream(), semcomm::single_run_stream());
    res->image.image = res->result.reconstruction;
    *out = res.release();
  });
}

semc_status semc_result_image(const semc_result* res, const semc_image** img) {
  return guard([&] { *require(img, "img") = &require(res, "res")->image; });
}

semc_status semc_result_metrics(const semc_result* res, semc_metrics* out) {
  return guard([&] { *require(out, "out") = to_c(require(res, "res")->result.metrics); });
}

semc_status semc_result_overhead(const semc_result* res, size_t* bytes) {
  return guard([&] { *require(bytes, "bytes") = require(res, "res")->result.overhead_bytes; });
}

semc_status semc_result_csv(const semc_result* res, semc_buffer** csv) {
  return guard([&] {
    require(csv, "csv");
    const auto& r = require(res, "res")->result;
    const auto row = semcomm::trial_row(r, r.alpha_effective, res->snr_db, res->prompts, 0);
    *csv = new_buffer(std::string(semcomm::kCsvHeader) + "\n" + semcomm::csv_row("trial", row, true) + "\n");
  });
}

void semc_result_free(semc_result* res) { delete res; }

semc_status semc_sweep(const semc_experiment* exp, semc_buffer** csv) {
  return guard([&] {
    require(csv, "csv");
    *csv = new_buffer(semcomm::sweep_csv(semcomm::run_sweep(require(exp, "exp")->cfg)));
  });
}

semc_status semc_fit_bound(const semc_experiment* exp, semc_bound_fit* fit, semc_buffer** csv) {
  return guard([&] {
    require(fit, "fit");
    require(csv, "csv");
    const auto rep = semcomm::fit_bound_cmd(require(exp, "exp")->cfg);
    *csv = new_buffer(rep.csv);
    *fit = {rep.fit.c1,  rep.fit.c2,       rep.fit.c3,  rep.fit.inflation,
            rep.fit_points, rep.held_out, rep.covered, rep.coverage};
  });
}

// --------------------------------------------------- model-side utilities

semc_status semc_quantize(const char* checkpoint_path, const char* const* critical, size_t n_critical,
                          const char* out_path, semc_buffer** report) {
  return guard([&] {
    require(report, "report");
    require(out_path, "out_path");
    if (n_critical > 0) require(critical, "critical");
    const auto model = semcomm::ToyScoreModel::load(require(checkpoint_path, "checkpoint_path"));
    std::vector<std::string> patterns, names;
    for (std::size_t i = 0; i < n_critical; ++i) patterns.emplace_back(require(critical[i], "critical pattern"));
    for (const auto& l : model.layers()) names.push_back(l.name);
    const auto part = semcomm::partition_weights(names, patterns);

    std::vector<semcomm::QuantizedTensor> tensors;
    json per = json::array();
    double fp32_bytes = 0.0, packed_bytes = 0.0;
    for (const auto& l : model.layers()) {
      const double n = static_cast<double>(l.w.size());
      fp32_bytes += 4.0 * n;
      if (std::find(part.quantizable.begin(), part.quantizable.end(), l.name) == part.quantizable.end()) {
        packed_bytes += 4.0 * n;
        continue;
      }
      auto q = semcomm::quantize_tensor(l.name, l.w);
      const auto back = q.dequantize();
      double worst = 0.0;  // max over blocks of error / absmax
      for (std::size_t b = 0; b < q.blocks.size(); ++b) {
        const std::size_t lo = b * semcomm::kQuantBlockSize;
        const std::size_t hi = std::min(lo + semcomm::kQuantBlockSize, l.w.size());
        double err = 0.0;
        for (std::size_t i = lo; i < hi; ++i) err = std::max(err, std::abs(l.w.data()[i] - back.data()[i]));
        if (q.blocks[b].absmax > 0.0f) worst = std::max(worst, err / q.blocks[b].absmax);
      }
      packed_bytes += std::ceil(n / 2.0) + 4.0 * static_cast<double>(q.blocks.size());
      per.push_back({{"name", l.name},
                     {"rows", q.rows},
                     {"cols", q.cols},
                     {"blocks", q.blocks.size()},
                     {"max_error_over_absmax", worst}});
      tensors.push_back(std::move(q));
    }
    semcomm::save_quantized(out_path, tensors);
    json rep = {{"checkpoint", checkpoint_path},
                {"output", out_path},
                {"critical", part.critical},
                {"quantized", per},
                {"biases", "kept at full precision"},
                {"weight_bytes_fp32", fp32_bytes},
                {"weight_bytes_after", packed_bytes},
                {"warnings", json::array()}};
    for (const auto& p : part.unmatched_patterns)
      rep["warnings"].push_back("critical pattern '" + p + "' matches no tensor");
    *report = new_buffer(rep.dump(2) + "\n");
  });
}

semc_status semc_account(const char* spec_text, semc_buffer** report) {
  return guard([&] {
    require(report, "report");
    const auto spec = semcomm::parse_model_spec(require(spec_text, "spec_text"));
    const auto mem = semcomm::account_memory(spec);
    json entries = json::array();
    for (const auto& e : spec)
      entries.push_back({{"name", e.name}, {"count", e.count}, {"precision", std::string(semcomm::precision_name(e.precision))}});
    const json rep = {{"entries", entries},
                      {"fp32_params", mem.fp32_params},
                      {"fp16_params", mem.fp16_params},
                      {"int4_params", mem.int4_params},
                      {"total_params_millions", mem.total_params_millions},
                      {"memory_gib", mem.memory_gib},
                      {"memory_gib_2dp", mem.memory_gib_2dp()},
                      {"int4_scale_overhead_gib", mem.int4_scale_overhead_gib}};
    *report = new_buffer(rep.dump(2) + "\n");
  });
}

void semc_train_params_default(semc_train_params* params) {
  if (!params) return;
  const semcomm::ToyTrainConfig d;
  *params = {40, semcomm::kPooledChunks + 8, d.epochs, d.batch_size, d.learning_rate};
}

semc_status semc_train_toy(const semc_experiment* exp, const semc_train_params* params, const char* model_path,
                           semc_buffer** report) {
  return guard([&] {
    require(report, "report");
    require(model_path, "model_path");
    semc_train_params p;
    semc_train_params_default(&p);
    if (params) p = *params;
    if (p.scenes == 0) throw semcomm::Error(ErrorCode::InvalidParameter, "train-toy: scenes must be >= 1");
    semcomm::ToyTrainConfig tc;
    tc.epochs = p.epochs;
    tc.batch_size = p.batch_size;
    tc.learning_rate = p.learning_rate;
    const auto rep = semcomm::train_toy_cmd(require(exp, "exp")->cfg, p.scenes, p.cond_dim, tc);
    rep.result.model.save(model_path);
    const double first = rep.result.epoch_losses.front();
    const json out = {{"model", model_path},
                      {"scenes", p.scenes},
                      {"cond_dim", p.cond_dim},
                      {"train_patches", rep.train_patches},
                      {"check_patches", rep.check_patches},
                      {"epoch_losses", rep.result.epoch_losses},
                      {"train_loss", rep.result.train_loss},
                      {"val_loss", rep.result.val_loss},
                      {"initial_check_loss", rep.initial_loss},
                      {"check_loss", rep.check_loss},
                      {"check_loss_unconditional", rep.check_loss_uncond},
                      {"loss_decrease_vs_untrained", 1.0 - rep.check_loss / rep.initial_loss},
                      {"loss_decrease_vs_first_epoch", 1.0 - rep.result.train_loss / first}};
    *report = new_buffer(out.dump(2) + "\n");
  });
}

semc_status semc_losses_check(uint64_t seed, semc_buffer** report) {
  return guard([&] {
    require(report, "report");
    semcomm::RngStream rng(seed, 0);
    const auto prob = semcomm::random_loss_problem(8, 16, 12, rng);
    const semcomm::LossWeights w;
    json grads = json::object();
    double worst = 0.0;
    for (auto k : {semcomm::LossKind::Itc, semcomm::LossKind::Itm, semcomm::LossKind::Kl, semcomm::LossKind::Ce}) {
      const double e = semcomm::validate_gradients(k, prob, w);
      grads[std::string(semcomm::loss_kind_name(k))] = e;
      worst = std::max(worst, e);
    }
    const double itc = semcomm::itc_loss(prob.batch, w.tau);
    const double itm = semcomm::itm_loss(prob.itm.logits, prob.itm.labels);
    const double kl = semcomm::kl_distill_loss(prob.distill.student, prob.distill.teacher, w.distill_t);
    const double ce = semcomm::ce_loss(prob.ce.logits, prob.ce.targets);
    auto at = [&](double lambda, double beta) {
      semcomm::LossWeights x = w;
      x.lambda = lambda;
      x.beta = beta;
      return std::pair{semcomm::align_loss(prob.batch, prob.itm, x), semcomm::enhance_loss(prob.distill, prob.ce, x)};
    };
    const bool endpoints =
        at(1, 1).first == itc && at(0, 0).first == itm && at(1, 1).second == kl && at(0, 0).second == ce;
    double affine = 0.0;
    for (double l : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      affine = std::max(affine, std::abs(at(l, l).first - (l * itc + (1 - l) * itm)));
      affine = std::max(affine, std::abs(at(l, l).second - (l * kl + (1 - l) * ce)));
    }
    const bool pass = worst < 1e-4 && endpoints && affine <= 1e-12;
    const json out = {{"seed", seed},
                      {"weights", weights_json(w)},
                      {"losses", {{"itc", itc}, {"itm", itm}, {"kl", kl}, {"ce", ce}}},
                      {"max_relative_gradient_error", grads},
                      {"endpoint_identities_exact", endpoints},
                      {"max_affinity_deviation", affine},
                      {"pass", pass}};
    *report = new_buffer(out.dump(2) + "\n");
  });
}

}  // extern "C"
