// Command-line front end over the semcomm C interface.
//
// Exit codes: 0 success, 1 a check command ran but its check failed,
// 2 configuration or usage error, 3 runtime module error. Errors are written
// to stderr as one JSON object per line.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "semcomm/semcomm.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Failure {
  int exit_code;
  std::string status;
  int code;
  std::string message;
};

// Anything that goes wrong while the configuration is read, and any
// invalid-config status, is a configuration error; the rest are runtime.
enum class Phase { Config, Run };

void check(semc_status st, Phase phase = Phase::Run) {
  if (st == SEMC_OK) return;
  const bool config = phase == Phase::Config || st == SEMC_INVALID_CONFIG;
  throw Failure{config ? kExitConfig : kExitRuntime, semc_status_name(st), static_cast<int>(st), semc_last_error()};
}

[[noreturn]] void usage_error(const std::string& message) {
  throw Failure{kExitConfig, semc_status_name(SEMC_INVALID_CONFIG), SEMC_INVALID_CONFIG, message};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Image = std::unique_ptr<semc_image, Deleter<semc_image, semc_image_free>>;
using Mask = std::unique_ptr<semc_mask, Deleter<semc_mask, semc_mask_free>>;
using Buffer = std::unique_ptr<semc_buffer, Deleter<semc_buffer, semc_buffer_free>>;
using Experiment = std::unique_ptr<semc_experiment, Deleter<semc_experiment, semc_experiment_free>>;
using Result = std::unique_ptr<semc_result, Deleter<semc_result, semc_result_free>>;

std::string text_of(const semc_buffer* buf) {
  const uint8_t* data = nullptr;
  size_t size = 0;
  check(semc_buffer_data(buf, &data, &size));
  return std::string(reinterpret_cast<const char*>(data), size);
}

void write_buffer(const semc_buffer* buf, const fs::path& path) {
  check(semc_buffer_write_file(buf, path.string().c_str()));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Failure{kExitRuntime, semc_status_name(SEMC_IO_ERROR), SEMC_IO_ERROR, "cannot write " + path.string()};
}

std::string read_text(const fs::path& path) {
  semc_buffer* b = nullptr;
  check(semc_buffer_read_file(path.string().c_str(), &b));
  return text_of(Buffer(b).get());
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

constexpr const char* kMetricsHeader = "mse,psnr_db,ssim,iou,hist_similarity,keypoint_similarity";

// Shortest round-trip decimal, independent of the locale.
std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string metrics_csv(const semc_metrics& m) {
  std::string line;
  for (double v : {m.mse, m.psnr_db, m.ssim, m.iou, m.hist_similarity, m.keypoint_similarity}) {
    if (!line.empty()) line += ',';
    line += format_number(v);
  }
  return line;
}

// Options shared by every subcommand.
struct Common {
  std::string config;
  std::vector<std::string> set;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
  if (with_config) {
    cmd->add_option("-c,--config", c.config, "Experiment config file (built-in defaults, alpha = 0.5, if omitted)");
    cmd->add_option("-s,--set", c.set, "Override a config key: key=value (repeatable)");
  }
  cmd->add_option("--out", c.out, "Output directory (overrides the config's 'out')");
}

// Loads the experiment with --set overrides and --out applied.
Experiment load_experiment(const Common& c) {
  std::vector<std::string> lines;
  bool mask_rule_set = false;
  for (const auto& kv : c.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) usage_error("--set expects key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    if (key == "alpha" || key == "mask" || key == "mask_quantile") mask_rule_set = true;
    lines.push_back(kv.substr(0, eq) + " = " + kv.substr(eq + 1));
  }
  if (!c.out.empty()) lines.push_back("out = " + quoted(c.out));
  std::vector<const char*> ptrs;
  for (const auto& l : lines) ptrs.push_back(l.c_str());
  semc_experiment* exp = nullptr;
  if (c.config.empty())
    // Built-in defaults: a centred key region covering half of the image.
    check(semc_experiment_parse(mask_rule_set ? "" : "alpha = 0.5\n", ptrs.data(), ptrs.size(), &exp), Phase::Config);
  else
    check(semc_experiment_load(c.config.c_str(), ptrs.data(), ptrs.size(), &exp), Phase::Config);
  return Experiment(exp);
}

// Output directory (created): the experiment's, else --out, else ".".
fs::path output_dir(const Common& c, const semc_experiment* exp = nullptr) {
  fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
  if (exp) {
    const char* d = nullptr;
    check(semc_experiment_out_dir(exp, &d));
    dir = d;
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{kExitRuntime, semc_status_name(SEMC_IO_ERROR), SEMC_IO_ERROR,
                        "cannot create output directory " + dir.string() + ": " + ec.message()};
  return dir;
}

Image load_image(const std::string& path) {
  semc_image* img = nullptr;
  check(semc_image_load(path.c_str(), &img));
  return Image(img);
}

Mask load_mask(const std::string& path, const semc_image* ref) {
  semc_mask* m = nullptr;
  check(semc_mask_load(path.c_str(), ref, &m));
  return Mask(m);
}

// --image/--mask when given (paths relative to the working directory), else
// the experiment's own input.
std::pair<Image, Mask> run_input(const semc_experiment* exp, const std::string& image, const std::string& mask) {
  if (image.empty()) {
    if (!mask.empty()) usage_error("--mask needs --image");
    semc_image* img = nullptr;
    semc_mask* m = nullptr;
    check(semc_experiment_input(exp, &img, &m));
    return {Image(img), Mask(m)};
  }
  Image img = load_image(image);
  if (!mask.empty()) {
    Mask m = load_mask(mask, img.get());
    return {std::move(img), std::move(m)};
  }
  semc_mask* m = nullptr;
  check(semc_experiment_mask(exp, img.get(), &m));
  return {std::move(img), Mask(m)};
}

// ------------------------------------------------------------ subcommands

struct SegmentArgs {
  Common common;
  std::string image;
  double quantile = 0.9;
  std::string name = "mask.png";
};

int cmd_segment(const SegmentArgs& a) {
  const auto dir = output_dir(a.common);
  Image img = load_image(a.image);
  semc_mask* m = nullptr;
  check(semc_segment(img.get(), a.quantile, &m));
  Mask mask(m);
  const auto path = dir / a.name;
  check(semc_mask_save(mask.get(), path.string().c_str()));
  size_t h = 0, w = 0, k = 0;
  check(semc_mask_size(mask.get(), &h, &w, &k));
  std::cout << json{{"mask", path.string()},
                    {"height", h},
                    {"width", w},
                    {"key_pixels", k},
                    {"alpha", h * w > 0 ? static_cast<double>(k) / static_cast<double>(h * w) : 0.0}}
                   .dump()
            << "\n";
  return 0;
}

struct EncodeArgs {
  Common common;
  std::string image, mask;
  bool no_prompts = false;
};

int cmd_encode(const EncodeArgs& a) {
  Experiment exp = load_experiment(a.common);
  auto [img, mask] = run_input(exp.get(), a.image, a.mask);
  semc_buffer* b = nullptr;
  check(semc_encode(exp.get(), img.get(), mask.get(), a.no_prompts ? 0 : 1, &b));
  Buffer packet(b);
  const auto path = output_dir(a.common, exp.get()) / "packet.semc";
  write_buffer(packet.get(), path);
  std::cout << json{{"packet", path.string()}, {"bytes", text_of(packet.get()).size()}}.dump() << "\n";
  return 0;
}

struct TransmitArgs {
  Common common;
  std::string packet;
  std::optional<double> snr_db;
};

int cmd_transmit(const TransmitArgs& a) {
  Experiment exp = load_experiment(a.common);
  semc_buffer* b = nullptr;
  check(semc_buffer_read_file(a.packet.c_str(), &b));
  Buffer in(b);
  double snr = 0.0;
  if (a.snr_db)
    snr = *a.snr_db;
  else
    check(semc_experiment_snr_db(exp.get(), &snr));
  semc_channel_state state{};
  semc_buffer* r = nullptr;
  check(semc_transmit(exp.get(), in.get(), snr, &r, &state));
  Buffer received(r);
  const auto dir = output_dir(a.common, exp.get());
  write_buffer(received.get(), dir / "received.semc");
  const json st{{"snr_db", state.snr_db}, {"sigma", state.sigma}, {"gain", state.gain}};
  write_text(dir / "channel.json", st.dump(2) + "\n");
  std::cout << json{{"packet", (dir / "received.semc").string()}, {"channel", st}}.dump() << "\n";
  return 0;
}

struct DecodeArgs {
  Common common;
  std::string packet, channel;
};

int cmd_decode(const DecodeArgs& a) {
  Experiment exp = load_experiment(a.common);
  semc_buffer* b = nullptr;
  check(semc_buffer_read_file(a.packet.c_str(), &b));
  Buffer in(b);
  std::optional<semc_channel_state> state;
  if (!a.channel.empty()) {
    json j;
    try {
      j = json::parse(read_text(a.channel));
      state = semc_channel_state{j.at("snr_db").get<double>(), j.at("sigma").get<double>(), j.at("gain").get<double>()};
    } catch (const json::exception& e) {
      usage_error("channel file " + a.channel + ": " + e.what());
    }
  }
  semc_image* img = nullptr;
  semc_mask* m = nullptr;
  check(semc_decode(exp.get(), in.get(), state ? &*state : nullptr, &img, &m));
  Image rec(img);
  Mask mask(m);
  const auto dir = output_dir(a.common, exp.get());
  check(semc_image_save(rec.get(), (dir / "reconstruction.png").string().c_str()));
  check(semc_mask_save(mask.get(), (dir / "decoded_mask.png").string().c_str()));
  std::cout << json{{"reconstruction", (dir / "reconstruction.png").string()},
                    {"mask", (dir / "decoded_mask.png").string()}}
                   .dump()
            << "\n";
  return 0;
}

struct PipelineArgs {
  Common common;
  std::string image, mask;
};

int cmd_pipeline(const PipelineArgs& a) {
  Experiment exp = load_experiment(a.common);
  auto [img, mask] = run_input(exp.get(), a.image, a.mask);
  semc_result* r = nullptr;
  check(semc_pipeline(exp.get(), img.get(), mask.get(), &r));
  Result res(r);
  const semc_image* rec = nullptr;
  check(semc_result_image(res.get(), &rec));
  semc_buffer* c = nullptr;
  check(semc_result_csv(res.get(), &c));
  Buffer csv(c);
  const auto dir = output_dir(a.common, exp.get());
  check(semc_image_save(rec, (dir / "reconstruction.png").string().c_str()));
  write_buffer(csv.get(), dir / "pipeline.csv");
  std::cout << text_of(csv.get());
  return 0;
}

int cmd_sweep(const Common& c) {
  Experiment exp = load_experiment(c);
  semc_buffer* b = nullptr;
  check(semc_sweep(exp.get(), &b));
  Buffer csv(b);
  const auto path = output_dir(c, exp.get()) / "sweep.csv";
  write_buffer(csv.get(), path);
  std::cout << json{{"csv", path.string()}}.dump() << "\n";
  return 0;
}

int cmd_fit_bound(const Common& c) {
  Experiment exp = load_experiment(c);
  semc_bound_fit fit{};
  semc_buffer* b = nullptr;
  check(semc_fit_bound(exp.get(), &fit, &b));
  Buffer csv(b);
  const auto dir = output_dir(c, exp.get());
  write_buffer(csv.get(), dir / "bound.csv");
  const json summary{{"c1", fit.c1},
                     {"c2", fit.c2},
                     {"c3", fit.c3},
                     {"inflation", fit.inflation},
                     {"fit_points", fit.fit_points},
                     {"held_out", fit.held_out},
                     {"covered", fit.covered},
                     {"coverage", fit.coverage},
                     {"csv", (dir / "bound.csv").string()}};
  write_text(dir / "bound.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

struct QuantizeArgs {
  Common common;
  std::string model;
  std::vector<std::string> critical;
  std::string name = "model.qnt";
};

int cmd_quantize(const QuantizeArgs& a) {
  const auto dir = output_dir(a.common);
  std::vector<const char*> globs;
  for (const auto& g : a.critical) globs.push_back(g.c_str());
  const auto path = dir / a.name;
  semc_buffer* b = nullptr;
  check(semc_quantize(a.model.c_str(), globs.data(), globs.size(), path.string().c_str(), &b));
  Buffer report(b);
  write_buffer(report.get(), dir / "quantize.json");
  const auto j = json::parse(text_of(report.get()));
  for (const auto& w : j.at("warnings")) std::cerr << json{{"warning", w}}.dump() << "\n";
  std::cout << text_of(report.get());
  return 0;
}

struct AccountArgs {
  Common common;
  std::string spec;
};

int cmd_account(const AccountArgs& a) {
  const auto dir = output_dir(a.common);
  semc_buffer* b = nullptr;
  check(semc_account(read_text(a.spec).c_str(), &b));
  Buffer report(b);
  write_buffer(report.get(), dir / "account.json");
  std::cout << text_of(report.get());
  return 0;
}

struct TrainArgs {
  Common common;
  semc_train_params params{};
  std::string name = "toy_model.scm";
};

int cmd_train_toy(const TrainArgs& a) {
  Experiment exp = load_experiment(a.common);
  const auto dir = output_dir(a.common, exp.get());
  semc_buffer* b = nullptr;
  check(semc_train_toy(exp.get(), &a.params, (dir / a.name).string().c_str(), &b));
  Buffer report(b);
  write_buffer(report.get(), dir / "train.json");
  std::cout << text_of(report.get());
  return 0;
}

struct MetricsArgs {
  Common common;
  std::string original, reconstructed, mask_original, mask_reconstructed;
  double quantile = 0.9;
  bool header = false;
};

int cmd_metrics(const MetricsArgs& a) {
  if (a.mask_original.empty() != a.mask_reconstructed.empty())
    usage_error("--mask-original and --mask-reconstructed go together");
  Image x = load_image(a.original);
  Image y = load_image(a.reconstructed);
  Mask mx, my;
  if (!a.mask_original.empty()) {
    mx = load_mask(a.mask_original, x.get());
    my = load_mask(a.mask_reconstructed, y.get());
  }
  semc_metrics m{};
  check(semc_metrics_compare(x.get(), y.get(), mx.get(), my.get(), a.quantile, &m));
  const auto line = metrics_csv(m);
  if (!a.common.out.empty()) write_text(output_dir(a.common) / "metrics.csv", std::string(kMetricsHeader) + "\n" + line + "\n");
  if (a.header) std::cout << kMetricsHeader << "\n";
  std::cout << line << "\n";
  return 0;
}

struct LossesArgs {
  Common common;
  std::uint64_t seed = 1;
};

int cmd_losses_check(const LossesArgs& a) {
  semc_buffer* b = nullptr;
  check(semc_losses_check(a.seed, &b));
  Buffer report(b);
  if (!a.common.out.empty()) write_buffer(report.get(), output_dir(a.common) / "losses.json");
  const auto text = text_of(report.get());
  std::cout << text;
  return json::parse(text).at("pass").get<bool>() ? 0 : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic image transmission simulator (set SEMCOMM_SEED to override the config seed)"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(semc_version()));
  std::function<int()> run;

  SegmentArgs seg;
  auto* c_seg = app.add_subcommand("segment", "Saliency segmentation into key/non-key pixels");
  add_common(c_seg, seg.common, false);
  c_seg->add_option("--image", seg.image, "Input image (PNG or PPM)")->required();
  c_seg->add_option("-q,--quantile", seg.quantile, "Saliency quantile above which pixels are key")->capture_default_str();
  c_seg->add_option("--name", seg.name, "Output mask file name (.png or .pbm)")->capture_default_str();
  c_seg->callback([&] { run = [&] { return cmd_segment(seg); }; });

  EncodeArgs enc;
  auto* c_enc = app.add_subcommand("encode", "Encode an image into a semantic packet (packet.semc)");
  add_common(c_enc, enc.common, true);
  c_enc->add_option("--image", enc.image, "Input image (default: config image or synthetic scene)");
  c_enc->add_option("--mask", enc.mask, "Key mask (default: the config's mask rule)");
  c_enc->add_flag("--no-prompts", enc.no_prompts, "Send no descriptor");
  c_enc->callback([&] { run = [&] { return cmd_encode(enc); }; });

  TransmitArgs tx;
  auto* c_tx = app.add_subcommand("transmit", "Channel pass (received.semc, channel.json)");
  add_common(c_tx, tx.common, true);
  c_tx->add_option("--packet", tx.packet, "Packet written by 'encode'")->required();
  c_tx->add_option("--snr", tx.snr_db, "SNR in dB (default: first configured snr_db)");
  c_tx->callback([&] { run = [&] { return cmd_transmit(tx); }; });

  DecodeArgs dec;
  auto* c_dec = app.add_subcommand("decode", "Reconstruct an image from a packet (reconstruction.png)");
  add_common(c_dec, dec.common, true);
  c_dec->add_option("--packet", dec.packet, "Packet written by 'encode' or 'transmit'")->required();
  c_dec->add_option("--channel", dec.channel, "channel.json from 'transmit' (default: noiseless)");
  c_dec->callback([&] { run = [&] { return cmd_decode(dec); }; });

  PipelineArgs pipe;
  auto* c_pipe = app.add_subcommand("pipeline", "End-to-end run with metrics (pipeline.csv)");
  add_common(c_pipe, pipe.common, true);
  c_pipe->add_option("--image", pipe.image, "Input image (default: config image or synthetic scene)");
  c_pipe->add_option("--mask", pipe.mask, "Key mask (default: the config's mask rule)");
  c_pipe->callback([&] { run = [&] { return cmd_pipeline(pipe); }; });

  Common sweep;
  auto* c_sweep = app.add_subcommand("sweep", "Alpha x SNR x prompt grid sweep (sweep.csv)");
  add_common(c_sweep, sweep, true);
  c_sweep->callback([&] { run = [&] { return cmd_sweep(sweep); }; });

  Common fit;
  auto* c_fit = app.add_subcommand("fit-bound", "Fit the distortion bound, check held-out cells (bound.csv)");
  add_common(c_fit, fit, true);
  c_fit->callback([&] { run = [&] { return cmd_fit_bound(fit); }; });

  QuantizeArgs q;
  auto* c_q = app.add_subcommand("quantize", "4-bit blockwise quantization of a toy checkpoint");
  add_common(c_q, q.common, false);
  c_q->add_option("--model", q.model, "SCM1 checkpoint (from 'train-toy')")->required();
  c_q->add_option("--critical", q.critical, "Glob of tensors kept at full precision (repeatable)");
  c_q->add_option("--name", q.name, "Output file name")->capture_default_str();
  c_q->callback([&] { run = [&] { return cmd_quantize(q); }; });

  AccountArgs acc;
  auto* c_acc = app.add_subcommand("account", "Parameter-memory accounting of a model spec");
  add_common(c_acc, acc.common, false);
  c_acc->add_option("--spec", acc.spec, "Spec file: one 'name count precision' per line")->required();
  c_acc->callback([&] { run = [&] { return cmd_account(acc); }; });

  TrainArgs tr;
  semc_train_params_default(&tr.params);
  auto* c_tr = app.add_subcommand("train-toy", "Train the toy score model on synthetic scene tiles");
  add_common(c_tr, tr.common, true);
  c_tr->add_option("--scenes", tr.params.scenes, "Training scenes")->capture_default_str();
  c_tr->add_option("--cond-dim", tr.params.cond_dim, "Condition dimension (0 or >= 8)")->capture_default_str();
  c_tr->add_option("--epochs", tr.params.epochs, "Epochs")->capture_default_str();
  c_tr->add_option("--batch-size", tr.params.batch_size, "Mini-batch size")->capture_default_str();
  c_tr->add_option("--lr", tr.params.learning_rate, "Adam learning rate")->capture_default_str();
  c_tr->add_option("--name", tr.name, "Checkpoint file name")->capture_default_str();
  c_tr->callback([&] { run = [&] { return cmd_train_toy(tr); }; });

  MetricsArgs met;
  auto* c_met = app.add_subcommand("metrics", "Compare two images");
  add_common(c_met, met.common, false);
  c_met->add_option("original,--original", met.original, "Original image")->required();
  c_met->add_option("reconstructed,--reconstructed", met.reconstructed, "Reconstructed image")->required();
  c_met->add_option("--mask-original", met.mask_original, "Key mask of the original (default: saliency)");
  c_met->add_option("--mask-reconstructed", met.mask_reconstructed, "Key mask of the reconstruction");
  c_met->add_option("-q,--quantile", met.quantile, "Saliency quantile for default masks")->capture_default_str();
  c_met->add_flag("--header", met.header, "Print the column header before the values");
  c_met->callback([&] { run = [&] { return cmd_metrics(met); }; });

  LossesArgs loss;
  auto* c_loss = app.add_subcommand("losses-check", "Gradient and weighting checks of the training losses");
  add_common(c_loss, loss.common, false);
  c_loss->add_option("--seed", loss.seed, "Seed of the random problem")->capture_default_str();
  c_loss->callback([&] { run = [&] { return cmd_losses_check(loss); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run();
  } catch (const Failure& f) {
    std::cerr << json{{"error", f.status}, {"code", f.code}, {"command", command}, {"message", f.message}}.dump()
              << "\n";
    return f.exit_code;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"code", SEMC_INTERNAL}, {"command", command}, {"message", e.what()}}
                     .dump()
              << "\n";
    return kExitRuntime;
  }
}
