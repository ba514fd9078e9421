#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "core/numerics.hpp"

namespace semcomm {

inline constexpr std::size_t kQuantBlockSize = 64;
inline constexpr int kQuantMaxCode = 7;

/// 64 symmetric signed 4-bit codes in [-7, 7] sharing one float32 absmax.
struct QuantizedBlock {
  std::array<std::int8_t, kQuantBlockSize> codes{};
  float absmax = 0.0f;

  bool operator==(const QuantizedBlock&) const = default;
};

// Exactly 64 finite values; codes = round-half-even(w * 7 / absmax).
QuantizedBlock quantize_block(std::span<const double> w);
std::array<double, kQuantBlockSize> dequantize_block(const QuantizedBlock& q);

/// Row-major matrix quantized in consecutive 64-value blocks; the last block
/// is zero-padded.
struct QuantizedTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<QuantizedBlock> blocks;

  Matrix dequantize() const;
  bool operator==(const QuantizedTensor&) const = default;
};

QuantizedTensor quantize_tensor(std::string name, const Matrix& w);

// Checkpoint layout (little-endian):
//   "QNT1" u32 n_tensors
//   per tensor: u32 name_len, name bytes, u32 rows, u32 cols, u32 n_blocks,
//               per block: 32 bytes of packed codes (two's-complement nibbles,
//               element 2i in the low nibble), f32 absmax
std::vector<std::uint8_t> serialize_quantized(std::span<const QuantizedTensor> tensors);
std::vector<QuantizedTensor> deserialize_quantized(std::span<const std::uint8_t> bytes);
void save_quantized(const std::filesystem::path& path, std::span<const QuantizedTensor> tensors);
std::vector<QuantizedTensor> load_quantized(const std::filesystem::path& path);

// '*' matches any run of characters, '?' one character.
bool glob_match(std::string_view pattern, std::string_view name);

struct WeightPartition {
  std::vector<std::string> critical;
  std::vector<std::string> quantizable;
  std::vector<std::string> unmatched_patterns;  // warnings: patterns matching no tensor
};

WeightPartition partition_weights(std::span<const std::string> tensor_names,
                                  std::span<const std::string> critical_patterns);

/// Low-rank adapter: delta W = s * B * A with s = alpha / r.
struct LoraAdapter {
  Matrix a;  // r x k, Gaussian init
  Matrix b;  // d x r, zero init
  double alpha = 16.0;

  std::size_t rank() const noexcept { return a.rows(); }
  double scale() const noexcept { return alpha / static_cast<double>(rank()); }
  std::size_t trainable_parameters() const noexcept { return a.size() + b.size(); }
};

LoraAdapter lora_init(std::size_t d, std::size_t k, std::size_t r, RngStream& rng, double init_std = 0.02,
                      double alpha = 16.0);
// y = dequantize(base) x + s B (A x)
std::vector<double> lora_forward(std::span<const double> x, const QuantizedTensor& base, const LoraAdapter& adapter);
// Same, with the base already dequantized.
std::vector<double> lora_forward(std::span<const double> x, const Matrix& base, const LoraAdapter& adapter);
Matrix lora_merge(const QuantizedTensor& base, const LoraAdapter& adapter);

enum class Precision : std::uint8_t { Fp32, Fp16, Int4 };

Precision parse_precision(std::string_view tag);
std::string_view precision_name(Precision p);
double precision_bytes(Precision p);

struct ModelSpecEntry {
  std::string name;
  double count = 0.0;  // parameters (may be fractional when derived from a ratio)
  Precision precision = Precision::Fp32;
};

// Text lines "name count precision"; '#' starts a comment.
std::vector<ModelSpecEntry> parse_model_spec(std::string_view text);

struct MemoryReport {
  double fp32_params = 0.0;
  double fp16_params = 0.0;
  double int4_params = 0.0;
  double total_params_millions = 0.0;
  double memory_gib = 0.0;
  double int4_scale_overhead_gib = 0.0;  // 4 bytes per 64-value block, reported separately

  std::string memory_gib_2dp() const;
};

MemoryReport account_memory(std::span<const ModelSpecEntry> spec);

// Fraction f of `params` stored as int4 (rest fp32) so the model occupies
// `target_gib`: solves 4 - 3.5 f = target * 2^30 / params.
double solve_int4_fraction(double params, double target_gib);

}  // namespace semcomm
