#include "core/numerics.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "core/errors.hpp"

namespace semcomm {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

RngStream::RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
    : master_seed_(master_seed), stream_id_(stream_id) {
  std::uint64_t sm = hash_combine(master_seed, stream_id);
  for (auto& word : s_) {
    sm += 0x9E3779B97F4A7C15ULL;
    word = mix64(sm);
  }
}

RngStream RngStream::derive(std::uint64_t purpose) const {
  return RngStream(master_seed_, hash_combine(stream_id_, purpose));
}

std::uint64_t RngStream::next_u64() noexcept {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RngStream::uniform() noexcept {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::gaussian() noexcept {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::InvalidInput, "matrix data length " + std::to_string(data_.size()) +
                                             " does not match " + std::to_string(rows) + "x" +
                                             std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::vector<double> Matrix::matvec(std::span<const double> x) const {
  if (x.size() != cols_) throw Error(ErrorCode::InvalidInput, "matvec: vector length mismatch");
  std::vector<double> y(rows_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) y[r] = dot(row(r), x);
  return y;
}

std::vector<double> Matrix::matvec_transposed(std::span<const double> x) const {
  if (x.size() != rows_) throw Error(ErrorCode::InvalidInput, "matvec_transposed: vector length mismatch");
  std::vector<double> y(cols_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double xr = x[r];
    const auto rr = row(r);
    for (std::size_t c = 0; c < cols_; ++c) y[c] += rr[c] * xr;
  }
  return y;
}

Matrix Matrix::matmul(const Matrix& other) const {
  if (cols_ != other.rows_) throw Error(ErrorCode::InvalidInput, "matmul: inner dimension mismatch");
  Matrix out(rows_, other.cols_);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t k = 0; k < cols_; ++k) {
      const double a = (*this)(i, k);
      if (a == 0.0) continue;
      for (std::size_t j = 0; j < other.cols_; ++j) out(i, j) += a * other(k, j);
    }
  }
  return out;
}

double Matrix::frobenius_norm() const { return l2_norm(data_); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double mean_square(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return dot(v, v) / static_cast<double>(v.size());
}

std::vector<double> gaussian_sample(RngStream& rng, std::size_t n, double mean, double std_dev) {
  if (!(std_dev >= 0.0) || !std::isfinite(std_dev)) {
    throw Error(ErrorCode::InvalidParameter, "gaussian_sample: std must be finite and >= 0");
  }
  if (n == 0) throw Error(ErrorCode::InvalidParameter, "gaussian_sample: n must be >= 1");
  std::vector<double> out(n);
  for (auto& v : out) v = mean + std_dev * rng.gaussian();
  return out;
}

std::vector<double> finite_diff_grad(const ScalarFunction& f, std::span<const double> theta, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidParameter, "finite_diff_grad: eps must be > 0");
  std::vector<double> probe(theta.begin(), theta.end());
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error(ErrorCode::NumericFailure,
                  "finite_diff_grad: non-finite function value at index " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

}  // namespace semcomm
