#include "core/toy_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "core/errors.hpp"
#include "core/image_io.hpp"

namespace semcomm {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigmoid(x); }
double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint64_t uint(int bytes) {
    if (b_.size() - pos_ < static_cast<std::size_t>(bytes))
      throw Error(ErrorCode::InvalidInput, "model checkpoint: truncated at byte " + std::to_string(pos_));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  double f64() {
    const double v = std::bit_cast<double>(uint(8));
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidInput, "model checkpoint: non-finite value");
    return v;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

DenseLayer make_layer(std::string name, std::size_t out, std::size_t in, RngStream& rng) {
  DenseLayer l;
  l.name = std::move(name);
  l.w = Matrix(out, in);
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
  for (auto& v : l.w.data()) v = std_dev * rng.gaussian();
  l.b.assign(out, 0.0);
  l.refresh_base();
  return l;
}

}  // namespace

void DenseLayer::refresh_base() { base_ = quantized ? quantized->dequantize() : w; }

void DenseLayer::forward(std::span<const double> x, std::span<double> y) const {
  const std::size_t rows = base_.rows(), cols = base_.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = base_.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  if (adapter) {
    const auto ax = adapter->a.matvec(x);
    const auto bax = adapter->b.matvec(ax);
    const double s = adapter->scale();
    for (std::size_t r = 0; r < rows; ++r) y[r] += s * bax[r];
  }
  for (std::size_t r = 0; r < rows; ++r) y[r] += b[r];
}

std::array<double, ToyScoreModel::kTimeDim> time_embedding(double t) {
  std::array<double, ToyScoreModel::kTimeDim> e{};
  constexpr std::size_t half = ToyScoreModel::kTimeDim / 2;
  for (std::size_t j = 0; j < half; ++j) {
    const double freq = std::exp(std::log(1000.0) * static_cast<double>(j) / static_cast<double>(half - 1));
    e[j] = std::sin(freq * t);
    e[half + j] = std::cos(freq * t);
  }
  return e;
}

ToyScoreModel::ToyScoreModel(std::size_t data_dim, std::size_t cond_dim, const NoiseSchedule& sched, RngStream& rng)
    : data_dim_(data_dim), cond_dim_(cond_dim), sched_(sched) {
  if (data_dim == 0) throw Error(ErrorCode::InvalidParameter, "toy model: data dimension must be >= 1");
  const std::size_t in = data_dim + kTimeDim + cond_dim;
  layers_[0] = make_layer("fc1", kHidden, in, rng);
  layers_[1] = make_layer("fc2", kHidden, kHidden, rng);
  layers_[2] = make_layer("out", data_dim, kHidden, rng);
  // A small output layer keeps the initial eps prediction near zero.
  for (auto& v : layers_[2].w.data()) v *= 0.1;
  layers_[2].refresh_base();
}

void ToyScoreModel::build_input(std::span<const double> x_t, double t, std::span<const double> cond,
                                std::vector<double>& in) const {
  if (x_t.size() != data_dim_) throw Error(ErrorCode::InvalidInput, "toy model: input dimension mismatch");
  if (!cond.empty() && cond.size() != cond_dim_) throw Error(ErrorCode::InvalidInput, "toy model: condition dimension mismatch");
  in.assign(data_dim_ + kTimeDim + cond_dim_, 0.0);
  std::copy(x_t.begin(), x_t.end(), in.begin());
  const auto te = time_embedding(t);
  std::copy(te.begin(), te.end(), in.begin() + static_cast<std::ptrdiff_t>(data_dim_));
  std::copy(cond.begin(), cond.end(), in.begin() + static_cast<std::ptrdiff_t>(data_dim_ + kTimeDim));
}

void ToyScoreModel::predict_eps(std::span<const double> x_t, double t, std::span<const double> cond,
                                std::span<double> eps) const {
  std::vector<double> in, h1(kHidden), h2(kHidden);
  build_input(x_t, t, cond, in);
  layers_[0].forward(in, h1);
  for (auto& v : h1) v = silu(v);
  layers_[1].forward(h1, h2);
  for (auto& v : h2) v = silu(v);
  layers_[2].forward(h2, eps);
}

void ToyScoreModel::score(std::span<const double> x_t, double t, std::span<const double> cond,
                          std::span<double> out) const {
  predict_eps(x_t, t, cond, out);
  const double sigma_t = std::sqrt(std::max(1.0 - sched_.alpha_bar(t), 1e-12));
  for (auto& v : out) v = -v / sigma_t;
}

void ToyScoreModel::quantize_layers() {
  for (auto& l : layers_) {
    l.quantized = quantize_tensor(l.name, l.w);
    l.refresh_base();
  }
}

void ToyScoreModel::attach_adapters(std::size_t rank, RngStream& rng, double init_std, double alpha) {
  for (auto& l : layers_) l.adapter = lora_init(l.out(), l.in(), rank, rng, init_std, alpha);
}

void ToyScoreModel::detach_adapters() {
  for (auto& l : layers_) l.adapter.reset();
}

std::vector<std::uint8_t> ToyScoreModel::serialize() const {
  std::vector<std::uint8_t> out{'S', 'C', 'M', '1'};
  put_u32(out, static_cast<std::uint32_t>(data_dim_));
  put_u32(out, static_cast<std::uint32_t>(cond_dim_));
  put_u32(out, static_cast<std::uint32_t>(kHidden));
  put_u32(out, static_cast<std::uint32_t>(kTimeDim));
  put_f64(out, sched_.beta_min);
  put_f64(out, sched_.beta_max);
  put_u32(out, static_cast<std::uint32_t>(sched_.n_steps));
  for (const auto& l : layers_) {
    put_u32(out, static_cast<std::uint32_t>(l.out()));
    put_u32(out, static_cast<std::uint32_t>(l.in()));
    for (double v : l.w.data()) put_f64(out, v);
    for (double v : l.b) put_f64(out, v);
  }
  return out;
}

ToyScoreModel ToyScoreModel::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SCM1", 4) != 0)
    throw Error(ErrorCode::InvalidInput, "model checkpoint: bad magic (expected SCM1)");
  Reader r(bytes.subspan(4));
  ToyScoreModel m;
  m.data_dim_ = r.uint(4);
  m.cond_dim_ = r.uint(4);
  if (r.uint(4) != kHidden || r.uint(4) != kTimeDim)
    throw Error(ErrorCode::InvalidInput, "model checkpoint: unsupported hidden/time dimensions");
  m.sched_.beta_min = r.f64();
  m.sched_.beta_max = r.f64();
  m.sched_.n_steps = r.uint(4);
  const std::array<std::pair<std::size_t, std::size_t>, 3> shapes{
      {{kHidden, m.data_dim_ + kTimeDim + m.cond_dim_}, {kHidden, kHidden}, {m.data_dim_, kHidden}}};
  const std::array<const char*, 3> names{"fc1", "fc2", "out"};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto rows = r.uint(4), cols = r.uint(4);
    if (rows != shapes[i].first || cols != shapes[i].second)
      throw Error(ErrorCode::InvalidInput, std::string("model checkpoint: layer ") + names[i] + " has the wrong shape");
    DenseLayer l;
    l.name = names[i];
    l.w = Matrix(rows, cols);
    for (auto& v : l.w.data()) v = r.f64();
    l.b.resize(rows);
    for (auto& v : l.b) v = r.f64();
    l.refresh_base();
    m.layers_[i] = std::move(l);
  }
  if (!r.done()) throw Error(ErrorCode::InvalidInput, "model checkpoint: trailing bytes");
  return m;
}

void ToyScoreModel::save(const std::filesystem::path& path) const { write_file_bytes(path, serialize()); }

ToyScoreModel ToyScoreModel::load(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

bool ToyScoreModel::same_weights(const ToyScoreModel& o) const {
  if (data_dim_ != o.data_dim_ || cond_dim_ != o.cond_dim_) return false;
  for (std::size_t i = 0; i < 3; ++i)
    if (!(layers_[i].w == o.layers_[i].w) || layers_[i].b != o.layers_[i].b) return false;
  return true;
}

/// Full-precision backpropagation with Adam over all weights and biases.
struct ToyTrainer {
  struct Grad {
    std::array<Matrix, 3> w;
    std::array<std::vector<double>, 3> b;
  };

  ToyScoreModel& model;
  Grad grad, m1, m2;
  std::size_t step = 0;

  explicit ToyTrainer(ToyScoreModel& mdl) : model(mdl) {
    for (auto* g : {&grad, &m1, &m2}) {
      for (std::size_t i = 0; i < 3; ++i) {
        g->w[i] = Matrix(model.layers_[i].out(), model.layers_[i].in(), 0.0);
        g->b[i].assign(model.layers_[i].out(), 0.0);
      }
    }
  }

  void zero() {
    for (std::size_t i = 0; i < 3; ++i) {
      std::fill(grad.w[i].data().begin(), grad.w[i].data().end(), 0.0);
      std::fill(grad.b[i].begin(), grad.b[i].end(), 0.0);
    }
  }

  // Accumulates gradients of weight * ||eps_hat - z||^2 / dim; returns the unweighted loss.
  double accumulate(std::span<const double> x_t, double t, std::span<const double> cond, std::span<const double> z,
                    double weight) {
    const auto& L = model.layers_;
    std::vector<double> in;
    model.build_input(x_t, t, cond, in);
    std::vector<double> p1(ToyScoreModel::kHidden), h1(ToyScoreModel::kHidden), p2(ToyScoreModel::kHidden),
        h2(ToyScoreModel::kHidden), out(model.data_dim_);
    L[0].forward(in, p1);
    for (std::size_t i = 0; i < p1.size(); ++i) h1[i] = silu(p1[i]);
    L[1].forward(h1, p2);
    for (std::size_t i = 0; i < p2.size(); ++i) h2[i] = silu(p2[i]);
    L[2].forward(h2, out);

    const double dim = static_cast<double>(model.data_dim_);
    double loss = 0.0;
    std::vector<double> d_out(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double e = out[i] - z[i];
      loss += e * e;
      d_out[i] = weight * 2.0 * e / dim;
    }
    loss /= dim;

    auto backprop = [&](std::size_t li, std::span<const double> d_y, std::span<const double> x_in,
                        std::vector<double>* d_x) {
      const Matrix& w = L[li].w;
      for (std::size_t r = 0; r < w.rows(); ++r) {
        auto g = grad.w[li].row(r);
        for (std::size_t c = 0; c < w.cols(); ++c) g[c] += d_y[r] * x_in[c];
        grad.b[li][r] += d_y[r];
      }
      if (d_x) {
        d_x->assign(w.cols(), 0.0);
        for (std::size_t r = 0; r < w.rows(); ++r) {
          const auto row = w.row(r);
          for (std::size_t c = 0; c < w.cols(); ++c) (*d_x)[c] += row[c] * d_y[r];
        }
      }
    };
    std::vector<double> d_h2, d_h1;
    backprop(2, d_out, h2, &d_h2);
    for (std::size_t i = 0; i < d_h2.size(); ++i) d_h2[i] *= silu_grad(p2[i]);
    backprop(1, d_h2, h1, &d_h1);
    for (std::size_t i = 0; i < d_h1.size(); ++i) d_h1[i] *= silu_grad(p1[i]);
    backprop(0, d_h1, in, nullptr);
    return loss;
  }

  void adam(double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    auto update = [&](std::span<double> p, std::span<const double> g, std::span<double> m, std::span<double> v) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1 - b1) * g[i];
        v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    };
    for (std::size_t i = 0; i < 3; ++i) {
      auto& l = model.layers_[i];
      update(l.w.data(), grad.w[i].data(), m1.w[i].data(), m2.w[i].data());
      update(l.b, grad.b[i], m1.b[i], m2.b[i]);
      l.refresh_base();
    }
  }
};

double denoising_loss(const ToyScoreModel& model, const std::vector<std::vector<double>>& patches,
                      const std::vector<std::vector<double>>& conds, RngStream& rng, std::size_t draws,
                      double t_min) {
  if (patches.empty()) throw Error(ErrorCode::InvalidInput, "denoising_loss: no patches");
  const std::size_t dim = model.data_dim();
  std::vector<double> xt(dim), z(dim), eps(dim);
  double total = 0.0;
  for (std::size_t p = 0; p < patches.size(); ++p) {
    const std::span<const double> cond = conds.empty() ? std::span<const double>{} : std::span<const double>(conds[p]);
    for (std::size_t d = 0; d < draws; ++d) {
      const double t = t_min + (1.0 - t_min) * rng.uniform();
      const double ab = model.schedule().alpha_bar(t);
      for (std::size_t i = 0; i < dim; ++i) {
        z[i] = rng.gaussian();
        xt[i] = std::sqrt(ab) * patches[p][i] + std::sqrt(1.0 - ab) * z[i];
      }
      model.predict_eps(xt, t, cond, eps);
      double l = 0.0;
      for (std::size_t i = 0; i < dim; ++i) l += (eps[i] - z[i]) * (eps[i] - z[i]);
      total += l / static_cast<double>(dim);
    }
  }
  return total / static_cast<double>(patches.size() * draws);
}

ToyTrainResult train_score_toy(const std::vector<std::vector<double>>& patches,
                               const std::vector<std::vector<double>>& conds, const NoiseSchedule& sched,
                               const ToyTrainConfig& cfg, RngStream& rng) {
  if (patches.size() < 64) throw Error(ErrorCode::InvalidInput, "train_score_toy: need at least 64 patches");
  const std::size_t dim = patches.front().size();
  for (const auto& p : patches)
    if (p.size() != dim) throw Error(ErrorCode::InvalidInput, "train_score_toy: patches differ in length");
  if (!conds.empty() && conds.size() != patches.size())
    throw Error(ErrorCode::InvalidInput, "train_score_toy: one condition per patch required");
  const std::size_t cond_dim = conds.empty() ? 0 : conds.front().size();
  for (const auto& c : conds)
    if (c.size() != cond_dim) throw Error(ErrorCode::InvalidInput, "train_score_toy: conditions differ in length");
  if (cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.learning_rate > 0.0))
    throw Error(ErrorCode::InvalidConfig, "train_score_toy: epochs, batch size and learning rate must be positive");

  RngStream init_rng = rng.derive(1);
  RngStream split_rng = rng.derive(2);
  RngStream train_rng = rng.derive(3);
  RngStream val_rng_seed = rng.derive(4);

  std::vector<std::size_t> order(patches.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[split_rng.next_u64() % (i + 1)]);
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::nearbyint(cfg.val_fraction * static_cast<double>(patches.size()))), 1,
      patches.size() - 1);
  std::vector<std::vector<double>> val_p, val_c;
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  for (std::size_t i = 0; i < n_val; ++i) {
    val_p.push_back(patches[order[i]]);
    if (!conds.empty()) val_c.push_back(conds[order[i]]);
  }

  ToyTrainResult res{ToyScoreModel(dim, cond_dim, sched, init_rng), {}, 0.0, 0.0};
  ToyTrainer trainer(res.model);
  std::vector<double> xt(dim), z(dim), cbuf(cond_dim);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = train_idx.size() - 1; i > 0; --i)
      std::swap(train_idx[i], train_idx[train_rng.next_u64() % (i + 1)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(train_idx.size(), start + cfg.batch_size);
      const double w = 1.0 / static_cast<double>(end - start);
      trainer.zero();
      for (std::size_t k = start; k < end; ++k) {
        const auto& x0 = patches[train_idx[k]];
        const double t = cfg.t_min + (1.0 - cfg.t_min) * train_rng.uniform();
        const double ab = sched.alpha_bar(t);
        for (std::size_t i = 0; i < dim; ++i) {
          z[i] = train_rng.gaussian();
          xt[i] = std::sqrt(ab) * x0[i] + std::sqrt(1.0 - ab) * z[i];
        }
        std::span<const double> cond;
        if (cond_dim > 0) {
          const bool drop = train_rng.uniform() < cfg.cond_dropout;
          const auto& c = conds[train_idx[k]];
          for (std::size_t i = 0; i < cond_dim; ++i) cbuf[i] = drop ? 0.0 : c[i];
          cond = cbuf;
        }
        epoch_loss += trainer.accumulate(xt, t, cond, z, w);
      }
      trainer.adam(cfg.learning_rate);
    }
    epoch_loss /= static_cast<double>(train_idx.size());
    if (!std::isfinite(epoch_loss))
      throw Error(ErrorCode::TrainingDiverged, "train_score_toy: non-finite loss in epoch " + std::to_string(epoch));
    res.epoch_losses.push_back(epoch_loss);
  }
  res.train_loss = res.epoch_losses.back();
  RngStream val_rng = val_rng_seed;
  res.val_loss = denoising_loss(res.model, val_p, val_c, val_rng, cfg.val_draws, cfg.t_min);
  if (!std::isfinite(res.val_loss)) throw Error(ErrorCode::TrainingDiverged, "train_score_toy: non-finite validation loss");
  return res;
}

PatchSet synthetic_patch_set(std::size_t n, std::size_t cond_dim, RngStream& rng) {
  if (cond_dim < 2) throw Error(ErrorCode::InvalidParameter, "synthetic_patch_set: cond_dim must be >= 2");
  PatchSet set;
  for (std::size_t k = 0; k < n; ++k) {
    const int cluster = static_cast<int>(rng.next_u64() & 1u);
    const double level = 0.6 * (rng.uniform() - 0.5);
    std::vector<double> p(64);
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 8; ++x) {
        const double base = cluster == 0 ? level + 0.08 * (static_cast<double>(x + y) - 7.0)
                                         : ((x % 2) ? 0.7 : -0.7);
        p[y * 8 + x] = std::clamp(base + 0.05 * rng.gaussian(), -1.0, 1.0);
      }
    }
    std::vector<double> c(cond_dim, 0.0);
    c[static_cast<std::size_t>(cluster)] = 1.0;
    set.patches.push_back(std::move(p));
    set.conds.push_back(std::move(c));
    set.cluster.push_back(cluster);
  }
  return set;
}

}  // namespace semcomm
