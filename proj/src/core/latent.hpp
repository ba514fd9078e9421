#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "core/descriptor.hpp"
#include "core/numerics.hpp"
#include "core/prompt.hpp"

namespace semcomm {

enum class TextMode : std::uint8_t { Analog, Digital };

struct CodecConfig {
  std::size_t m = 0;   // key-feature dimension
  std::size_t k1 = 0;  // image-latent dimension
  std::size_t k2 = 0;  // text-latent dimension (analog mode)
  std::uint64_t seed = 0;
  TextMode mode = TextMode::Analog;

  // Length of the analog channel vector.
  std::size_t k() const noexcept { return mode == TextMode::Analog ? k1 + k2 : k1; }
  void validate() const;
};

/// Seeded projection with orthonormal rows (the image encoder) and its
/// transpose (the image decoder).
///
/// The k1 x m matrix is block diagonal: columns are cut into blocks of 64,
/// each block holds a Haar-random orthogonal matrix from which a share of the
/// k1 rows proportional to the block width is kept. Rows from different
/// blocks have disjoint support, so the whole row set stays orthonormal while
/// memory and build time grow linearly in m.
class ProjectionPair {
 public:
  static constexpr std::size_t kBlockSize = 64;

  ProjectionPair() = default;
  static ProjectionPair build(std::size_t m, std::size_t k1, std::uint64_t seed);

  std::size_t m() const noexcept { return m_; }
  std::size_t k1() const noexcept { return k1_; }

  std::vector<double> forward(std::span<const double> x) const;
  std::vector<double> backward(std::span<const double> z) const;

  Matrix forward_matrix() const;
  Matrix backward_matrix() const { return forward_matrix().transpose(); }

  bool operator==(const ProjectionPair&) const = default;

 private:
  struct Block {
    std::size_t col_offset = 0;
    std::size_t row_offset = 0;
    Matrix rows;  // r x width, orthonormal rows
    bool operator==(const Block&) const = default;
  };

  std::size_t m_ = 0;
  std::size_t k1_ = 0;
  std::vector<Block> blocks_;
};

struct LatentVector {
  std::vector<double> values;
  double scale = 1.0;  // factor applied by power normalization; 0 = silent (all-zero payload)

  double power() const noexcept { return mean_square(values); }
};

// Coordinate and sign a vocabulary id hashes to in a k2-dimensional embedding.
std::size_t hash_coordinate(std::uint32_t id, std::size_t k2);
double hash_sign(std::uint32_t id);
// Sum of signed one-hot coordinates, scaled by 1/sqrt(ids.size()).
std::vector<double> hash_embed(std::span<const std::uint32_t> ids, std::size_t k2);

// sqrt(len / ||v||^2); throws DegenerateInput for an all-zero vector.
double normalization_scale(std::span<const double> v);
std::vector<double> power_normalize(std::span<const double> v);

LatentVector encode(std::span<const double> key_features, const PromptString& prompt, const CodecConfig& cfg,
                    const Vocabulary& vocab, const ProjectionPair& proj);

struct DecodedPayload {
  std::vector<double> key_features;  // length m
  TextDescriptor descriptor;
};

// Splits y'' at k1. In digital mode `digital_text` carries the prompt line
// and the text half of the vector is absent.
DecodedPayload split_and_decode(std::span<const double> received, double scale, const CodecConfig& cfg,
                                const Vocabulary& vocab, const ProjectionPair& proj,
                                std::optional<std::string_view> digital_text = std::nullopt);

// Nearest-token decoding of an analog text latent.
TextDescriptor decode_text_latent(std::span<const double> text_part, const Vocabulary& vocab);

// Per-feature noise variance of the decoded key features when the channel
// adds N(0, sigma^2) and the receiver divides by gain * scale: the backward
// projection keeps k1 of m noise dimensions.
double key_feature_noise_variance(double sigma, double gain, double scale, std::size_t k1, std::size_t m);


}  // namespace semcomm
