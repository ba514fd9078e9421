#include "core/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "core/errors.hpp"

namespace semcomm {

namespace {

double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

std::vector<double> softmax(std::span<const double> v) {
  const double lse = log_sum_exp(v);
  std::vector<double> p(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) p[i] = std::exp(v[i] - lse);
  return p;
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidParameter, std::string(what) + " must be finite and > 0");
}

Matrix itc_logits(const Matrix& image, const Matrix& text, double tau) {
  if (image.rows() != text.rows() || image.cols() != text.cols())
    throw Error(ErrorCode::InvalidInput, "itc: image and text batches differ in shape");
  if (image.rows() < 2) throw Error(ErrorCode::InvalidInput, "itc: batch size must be >= 2");
  Matrix logits = image.matmul(text.transpose());
  for (auto& v : logits.data()) v /= tau;
  return logits;
}

// Unchecked symmetric InfoNCE (no row-norm validation) so finite
// differences may perturb individual entries.
double itc_unchecked(const Matrix& image, const Matrix& text, double tau) {
  require_positive(tau, "itc: tau");
  const Matrix logits = itc_logits(image, text, tau);
  const Matrix lt = logits.transpose();
  const std::size_t b = logits.rows();
  double rows = 0.0, cols = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    rows += log_sum_exp(logits.row(i)) - logits(i, i);
    cols += log_sum_exp(lt.row(i)) - lt(i, i);
  }
  return 0.5 * (rows + cols) / static_cast<double>(b);
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() == 0 || a.cols() == 0)
    throw Error(ErrorCode::InvalidInput, std::string(op) + ": logits shapes differ or are empty");
}

}  // namespace

void EmbeddingBatch::validate() const {
  if (image.rows() != text.rows() || image.cols() != text.cols())
    throw Error(ErrorCode::InvalidInput, "embedding batch: image and text shapes differ");
  if (image.rows() < 2) throw Error(ErrorCode::InvalidInput, "embedding batch: B must be >= 2");
  for (const Matrix* m : {&image, &text}) {
    for (std::size_t r = 0; r < m->rows(); ++r) {
      if (std::abs(l2_norm(m->row(r)) - 1.0) > 1e-9)
        throw Error(ErrorCode::InvalidInput, "embedding batch: row " + std::to_string(r) + " is not unit norm");
    }
  }
}

void LossWeights::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::InvalidParameter, "loss weights: lambda must be in [0,1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::InvalidParameter, "loss weights: beta must be in [0,1]");
  require_positive(tau, "loss weights: tau");
  require_positive(distill_t, "loss weights: distillation temperature");
}

double itc_loss(const EmbeddingBatch& batch, double tau) {
  require_positive(tau, "itc: tau");
  batch.validate();
  return itc_unchecked(batch.image, batch.text, tau);
}

double itm_loss(std::span<const double> logits, const std::vector<bool>& labels) {
  if (logits.size() != labels.size() || logits.empty())
    throw Error(ErrorCode::InvalidInput, "itm: logits and labels must have equal, nonzero length");
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += softplus(logits[i]) - (labels[i] ? logits[i] : 0.0);
  return s / static_cast<double>(logits.size());
}

double kl_distill_loss(const Matrix& student, const Matrix& teacher, double t) {
  require_positive(t, "kl: temperature");
  check_same_shape(student, teacher, "kl");
  double total = 0.0;
  std::vector<double> s(student.cols()), te(student.cols());
  for (std::size_t b = 0; b < student.rows(); ++b) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      s[j] = student(b, j) / t;
      te[j] = teacher(b, j) / t;
    }
    const double lse_s = log_sum_exp(s), lse_t = log_sum_exp(te);
    double kl = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double log_p = te[j] - lse_t;
      const double log_q = s[j] - lse_s;
      kl += std::exp(log_p) * (log_p - log_q);
    }
    total += kl;
  }
  return t * t * total / static_cast<double>(student.rows());
}

double ce_loss(const Matrix& logits, std::span<const std::size_t> targets) {
  if (logits.rows() != targets.size() || logits.rows() == 0 || logits.cols() == 0)
    throw Error(ErrorCode::InvalidInput, "ce: one target per logits row required");
  double s = 0.0;
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    if (targets[b] >= logits.cols()) {
      throw Error(ErrorCode::InvalidTarget, "ce: target " + std::to_string(targets[b]) + " out of range for V=" +
                                                std::to_string(logits.cols()));
    }
    s += log_sum_exp(logits.row(b)) - logits(b, targets[b]);
  }
  return s / static_cast<double>(logits.rows());
}

double align_loss(const EmbeddingBatch& batch, const ItmInputs& itm, const LossWeights& w) {
  w.validate();
  return w.lambda * itc_loss(batch, w.tau) + (1.0 - w.lambda) * itm_loss(itm.logits, itm.labels);
}

double enhance_loss(const DistillInputs& distill, const CeInputs& ce, const LossWeights& w) {
  w.validate();
  return w.beta * kl_distill_loss(distill.student, distill.teacher, w.distill_t) +
         (1.0 - w.beta) * ce_loss(ce.logits, ce.targets);
}

ItcGradient itc_gradient(const EmbeddingBatch& batch, double tau) {
  require_positive(tau, "itc: tau");
  const Matrix logits = itc_logits(batch.image, batch.text, tau);
  const std::size_t b = logits.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  Matrix d(b, b, 0.0);  // dLoss / dLogits
  for (std::size_t i = 0; i < b; ++i) {
    const auto p = softmax(logits.row(i));
    for (std::size_t j = 0; j < b; ++j) d(i, j) += 0.5 * inv_b * (p[j] - (i == j ? 1.0 : 0.0));
  }
  const Matrix lt = logits.transpose();
  for (std::size_t j = 0; j < b; ++j) {
    const auto p = softmax(lt.row(j));
    for (std::size_t i = 0; i < b; ++i) d(i, j) += 0.5 * inv_b * (p[i] - (i == j ? 1.0 : 0.0));
  }
  ItcGradient g{d.matmul(batch.text), d.transpose().matmul(batch.image)};
  for (auto& v : g.image.data()) v /= tau;
  for (auto& v : g.text.data()) v /= tau;
  return g;
}

std::vector<double> itm_gradient(std::span<const double> logits, const std::vector<bool>& labels) {
  if (logits.size() != labels.size() || logits.empty())
    throw Error(ErrorCode::InvalidInput, "itm: logits and labels must have equal, nonzero length");
  std::vector<double> g(logits.size());
  const double inv = 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) g[i] = (sigmoid(logits[i]) - (labels[i] ? 1.0 : 0.0)) * inv;
  return g;
}

Matrix kl_distill_gradient(const Matrix& student, const Matrix& teacher, double t) {
  require_positive(t, "kl: temperature");
  check_same_shape(student, teacher, "kl");
  Matrix g(student.rows(), student.cols());
  std::vector<double> s(student.cols()), te(student.cols());
  const double f = t / static_cast<double>(student.rows());
  for (std::size_t b = 0; b < student.rows(); ++b) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      s[j] = student(b, j) / t;
      te[j] = teacher(b, j) / t;
    }
    const auto q = softmax(s), p = softmax(te);
    for (std::size_t j = 0; j < s.size(); ++j) g(b, j) = f * (q[j] - p[j]);
  }
  return g;
}

Matrix ce_gradient(const Matrix& logits, std::span<const std::size_t> targets) {
  ce_loss(logits, targets);  // validates shapes and targets
  Matrix g(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    const auto p = softmax(logits.row(b));
    for (std::size_t j = 0; j < p.size(); ++j) g(b, j) = (p[j] - (j == targets[b] ? 1.0 : 0.0)) * inv;
  }
  return g;
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "itc") return LossKind::Itc;
  if (name == "itm") return LossKind::Itm;
  if (name == "kl") return LossKind::Kl;
  if (name == "ce") return LossKind::Ce;
  throw Error(ErrorCode::InvalidParameter, "unknown loss '" + std::string(name) + "' (expected itc, itm, kl or ce)");
}

std::string_view loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::Itc: return "itc";
    case LossKind::Itm: return "itm";
    case LossKind::Kl: return "kl";
    case LossKind::Ce: return "ce";
  }
  return "?";
}

void normalize_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double n = l2_norm(row);
    if (!(n > 0.0)) throw Error(ErrorCode::InvalidInput, "normalize_rows: zero row " + std::to_string(r));
    for (auto& v : row) v /= n;
  }
}

LossProblem random_loss_problem(std::size_t b, std::size_t d, std::size_t v, RngStream& rng) {
  if (b < 2 || d < 1 || v < 2) throw Error(ErrorCode::InvalidParameter, "random_loss_problem: need B >= 2, D >= 1, V >= 2");
  LossProblem p;
  p.batch.image = Matrix(b, d);
  p.batch.text = Matrix(b, d);
  for (auto& x : p.batch.image.data()) x = rng.gaussian();
  for (auto& x : p.batch.text.data()) x = rng.gaussian();
  normalize_rows(p.batch.image);
  normalize_rows(p.batch.text);
  for (std::size_t i = 0; i < b; ++i) {
    p.itm.logits.push_back(2.0 * rng.gaussian());
    p.itm.labels.push_back((rng.next_u64() & 1u) != 0);
  }
  p.distill.student = Matrix(b, v);
  p.distill.teacher = Matrix(b, v);
  for (auto& x : p.distill.student.data()) x = 2.0 * rng.gaussian();
  for (auto& x : p.distill.teacher.data()) x = 2.0 * rng.gaussian();
  p.ce.logits = Matrix(b, v);
  for (auto& x : p.ce.logits.data()) x = 2.0 * rng.gaussian();
  for (std::size_t i = 0; i < b; ++i) p.ce.targets.push_back(rng.next_u64() % v);
  return p;
}

double validate_gradients(LossKind kind, const LossProblem& pr, const LossWeights& w, double eps) {
  w.validate();
  std::vector<double> theta, analytic;
  ScalarFunction f;
  switch (kind) {
    case LossKind::Itc: {
      const auto g = itc_gradient(pr.batch, w.tau);
      const auto im = pr.batch.image.data(), tx = pr.batch.text.data();
      theta.assign(im.begin(), im.end());
      theta.insert(theta.end(), tx.begin(), tx.end());
      analytic.assign(g.image.data().begin(), g.image.data().end());
      analytic.insert(analytic.end(), g.text.data().begin(), g.text.data().end());
      const std::size_t rows = pr.batch.image.rows(), cols = pr.batch.image.cols(), n = im.size();
      f = [rows, cols, n, tau = w.tau](std::span<const double> th) {
        const Matrix a(rows, cols, std::vector<double>(th.begin(), th.begin() + static_cast<std::ptrdiff_t>(n)));
        const Matrix b(rows, cols, std::vector<double>(th.begin() + static_cast<std::ptrdiff_t>(n), th.end()));
        return itc_unchecked(a, b, tau);
      };
      break;
    }
    case LossKind::Itm: {
      theta = pr.itm.logits;
      analytic = itm_gradient(pr.itm.logits, pr.itm.labels);
      f = [&labels = pr.itm.labels](std::span<const double> th) { return itm_loss(th, labels); };
      break;
    }
    case LossKind::Kl: {
      const auto s = pr.distill.student.data();
      theta.assign(s.begin(), s.end());
      const auto g = kl_distill_gradient(pr.distill.student, pr.distill.teacher, w.distill_t);
      analytic.assign(g.data().begin(), g.data().end());
      f = [&teacher = pr.distill.teacher, t = w.distill_t](std::span<const double> th) {
        const Matrix st(teacher.rows(), teacher.cols(), std::vector<double>(th.begin(), th.end()));
        return kl_distill_loss(st, teacher, t);
      };
      break;
    }
    case LossKind::Ce: {
      const auto l = pr.ce.logits.data();
      theta.assign(l.begin(), l.end());
      const auto g = ce_gradient(pr.ce.logits, pr.ce.targets);
      analytic.assign(g.data().begin(), g.data().end());
      f = [&ce = pr.ce](std::span<const double> th) {
        const Matrix lg(ce.logits.rows(), ce.logits.cols(), std::vector<double>(th.begin(), th.end()));
        return ce_loss(lg, ce.targets);
      };
      break;
    }
  }
  const auto fd = finite_diff_grad(f, theta, eps);
  double worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    if (!std::isfinite(analytic[i]))
      throw Error(ErrorCode::NumericFailure, "validate_gradients: non-finite analytic gradient at index " + std::to_string(i));
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) / (std::abs(fd[i]) + 1e-8));
  }
  return worst;
}

double linear_ramp(double start, double end, std::size_t step, std::size_t steps) {
  if (steps == 0 || step >= steps) return end;
  const double u = static_cast<double>(step) / static_cast<double>(steps);
  return start + (end - start) * u;
}

}  // namespace semcomm
