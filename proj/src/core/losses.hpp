#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "core/numerics.hpp"

namespace semcomm {

/// B x D image and text embeddings, rows L2-normalized, row i of each paired.
struct EmbeddingBatch {
  Matrix image;
  Matrix text;

  void validate() const;
};

struct LossWeights {
  double lambda = 0.5;
  double beta = 0.5;
  double tau = 0.07;
  double distill_t = 2.0;

  void validate() const;
};

struct ItmInputs {
  std::vector<double> logits;
  std::vector<bool> labels;
};

struct DistillInputs {
  Matrix student;  // B x V logits
  Matrix teacher;  // B x V logits
};

struct CeInputs {
  Matrix logits;  // B x V
  std::vector<std::size_t> targets;
};

// Symmetric InfoNCE over logits = image * text^T / tau.
double itc_loss(const EmbeddingBatch& batch, double tau);
// Mean binary cross-entropy with logits.
double itm_loss(std::span<const double> logits, const std::vector<bool>& labels);
// T^2 * mean_b KL(softmax(teacher/T) || softmax(student/T)).
double kl_distill_loss(const Matrix& student, const Matrix& teacher, double t);
// Mean -log softmax(logits)[target].
double ce_loss(const Matrix& logits, std::span<const std::size_t> targets);

double align_loss(const EmbeddingBatch& batch, const ItmInputs& itm, const LossWeights& w);
double enhance_loss(const DistillInputs& distill, const CeInputs& ce, const LossWeights& w);

// Analytic gradients. ITC is differentiated with respect to every entry of
// both embedding matrices (as free parameters of the logits), KL with
// respect to the student logits.
struct ItcGradient {
  Matrix image;
  Matrix text;
};
ItcGradient itc_gradient(const EmbeddingBatch& batch, double tau);
std::vector<double> itm_gradient(std::span<const double> logits, const std::vector<bool>& labels);
Matrix kl_distill_gradient(const Matrix& student, const Matrix& teacher, double t);
Matrix ce_gradient(const Matrix& logits, std::span<const std::size_t> targets);

enum class LossKind { Itc, Itm, Kl, Ce };
LossKind parse_loss_kind(std::string_view name);
std::string_view loss_kind_name(LossKind k);

// Random inputs of the given sizes for gradient validation.
struct LossProblem {
  EmbeddingBatch batch;
  ItmInputs itm;
  DistillInputs distill;
  CeInputs ce;
};
LossProblem random_loss_problem(std::size_t b, std::size_t d, std::size_t v, RngStream& rng);

// max_i |analytic_i - fd_i| / (|fd_i| + 1e-8) with central differences of step eps.
double validate_gradients(LossKind kind, const LossProblem& problem, const LossWeights& w, double eps = 1e-5);

// Linear ramp from `start` to `end` over [0, steps]; clamps outside.
double linear_ramp(double start, double end, std::size_t step, std::size_t steps);

// Scales every row to unit L2 norm; zero rows are rejected.
void normalize_rows(Matrix& m);

}  // namespace semcomm
