#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace semcomm {

// SplitMix64 finalizer (Stafford mix13). Used for seeding and for every
// derived hash in the project.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Combines two 64-bit values into one stream id.
constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(a ^ mix64(b + 0x9E3779B97F4A7C15ULL));
}

// FNV-1a, 64-bit.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Deterministic random stream keyed by (master_seed, stream_id).
///
/// The 256-bit xoshiro256** state is filled by SplitMix64 starting from
/// hash_combine(master_seed, stream_id), so any stream can be created
/// independently of every other one. Gaussian draws use Box-Muller with a
/// cached second deviate.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_id);

  std::uint64_t master_seed() const noexcept { return master_seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  // A new stream keyed by this stream's master seed and `hash_combine(stream_id, purpose)`.
  RngStream derive(std::uint64_t purpose) const;

  std::uint64_t next_u64() noexcept;
  // Uniform on the open interval (0, 1).
  double uniform() noexcept;
  double gaussian() noexcept;

 private:
  std::uint64_t master_seed_;
  std::uint64_t stream_id_;
  std::uint64_t s_[4];
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Matrix transpose() const;
  std::vector<double> matvec(std::span<const double> x) const;
  // this^T * x without materializing the transpose.
  std::vector<double> matvec_transposed(std::span<const double> x) const;
  Matrix matmul(const Matrix& other) const;
  double frobenius_norm() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
double mean_square(std::span<const double> v);

std::vector<double> gaussian_sample(RngStream& rng, std::size_t n, double mean, double std_dev);

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central differences; throws NumericFailure naming the offending index when
// f is non-finite at a probe point.
std::vector<double> finite_diff_grad(const ScalarFunction& f, std::span<const double> theta, double eps);

}  // namespace semcomm
