#include "core/latent.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "core/errors.hpp"

namespace semcomm {

namespace {

// Orthonormal rows via two passes of modified Gram-Schmidt over Gaussian rows.
Matrix random_orthonormal_rows(std::size_t rows, std::size_t cols, RngStream& rng) {
  Matrix q(rows, cols);
  for (auto& v : q.data()) v = rng.gaussian();
  for (std::size_t i = 0; i < rows; ++i) {
    auto ri = q.row(i);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < i; ++j) {
        const auto rj = q.row(j);
        const double d = dot(ri, rj);
        for (std::size_t c = 0; c < cols; ++c) ri[c] -= d * rj[c];
      }
    }
    const double n = l2_norm(ri);
    for (auto& v : ri) v /= n;
  }
  return q;
}

class LatentSlotSource : public SlotSource {
 public:
  LatentSlotSource(std::span<const double> y, const Vocabulary& vocab) : y_(y), vocab_(vocab) {}

  void keyword(std::string_view) override {}

  std::string value(const std::string& slot) override {
    const auto cands = vocab_.slot_candidates(slot);
    if (cands.empty()) throw Error(ErrorCode::InvalidInput, "vocabulary has no tokens for slot " + slot);
    const bool label_count = slot == "labels.n";
    std::optional<std::uint32_t> best;
    double best_score = 0.0;
    for (auto id : cands) {
      const std::string& tok = vocab_.token(id);
      const std::string val = tok.substr(slot.size() + 1);
      if (label_count && val != "0" &&
          vocab_.slot_candidates("labels[" + std::to_string(std::stoul(val) - 1) + "]").empty())
        continue;
      const double score = hash_sign(id) * y_[hash_coordinate(id, y_.size())];
      if (!best || score > best_score) {
        best = id;
        best_score = score;
      }
    }
    return vocab_.token(*best).substr(slot.size() + 1);
  }

 private:
  std::span<const double> y_;
  const Vocabulary& vocab_;
};

}  // namespace

void CodecConfig::validate() const {
  if (m >= 1 && (k1 < 1 || k1 > m)) {
    throw Error(ErrorCode::InvalidConfig, "codec: k1=" + std::to_string(k1) + " must be in [1, m=" + std::to_string(m) + "]");
  }
  if (m == 0 && k1 != 0) throw Error(ErrorCode::InvalidConfig, "codec: k1 must be 0 when m=0");
  if (mode == TextMode::Analog && k2 < 1) throw Error(ErrorCode::InvalidConfig, "codec: analog text needs k2 >= 1");
}

ProjectionPair ProjectionPair::build(std::size_t m, std::size_t k1, std::uint64_t seed) {
  if (k1 > m) {
    throw Error(ErrorCode::InvalidConfig, "build_projection: k1=" + std::to_string(k1) + " exceeds m=" + std::to_string(m));
  }
  ProjectionPair p;
  p.m_ = m;
  p.k1_ = k1;
  std::size_t row_offset = 0;
  for (std::size_t start = 0, j = 0; start < m; start += kBlockSize, ++j) {
    const std::size_t end = std::min(m, start + kBlockSize);
    const std::size_t rows = (k1 * end + m / 2) / m - (k1 * start + m / 2) / m;
    RngStream rng(seed, j);
    Block b;
    b.col_offset = start;
    b.row_offset = row_offset;
    b.rows = random_orthonormal_rows(rows, end - start, rng);
    row_offset += rows;
    p.blocks_.push_back(std::move(b));
  }
  return p;
}

std::vector<double> ProjectionPair::forward(std::span<const double> x) const {
  if (x.size() != m_) throw Error(ErrorCode::InvalidInput, "projection forward: expected length " + std::to_string(m_));
  std::vector<double> z(k1_, 0.0);
  for (const auto& b : blocks_) {
    const auto xs = x.subspan(b.col_offset, b.rows.cols());
    for (std::size_t r = 0; r < b.rows.rows(); ++r) z[b.row_offset + r] = dot(b.rows.row(r), xs);
  }
  return z;
}

std::vector<double> ProjectionPair::backward(std::span<const double> z) const {
  if (z.size() != k1_) throw Error(ErrorCode::InvalidInput, "projection backward: expected length " + std::to_string(k1_));
  std::vector<double> x(m_, 0.0);
  for (const auto& b : blocks_) {
    for (std::size_t r = 0; r < b.rows.rows(); ++r) {
      const double zr = z[b.row_offset + r];
      const auto row = b.rows.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) x[b.col_offset + c] += row[c] * zr;
    }
  }
  return x;
}

Matrix ProjectionPair::forward_matrix() const {
  Matrix f(k1_, m_);
  for (const auto& b : blocks_)
    for (std::size_t r = 0; r < b.rows.rows(); ++r)
      for (std::size_t c = 0; c < b.rows.cols(); ++c) f(b.row_offset + r, b.col_offset + c) = b.rows(r, c);
  return f;
}

std::size_t hash_coordinate(std::uint32_t id, std::size_t k2) {
  return static_cast<std::size_t>((static_cast<std::uint64_t>(id) * 2654435761ULL) % k2);
}

double hash_sign(std::uint32_t id) { return (mix64(id ^ 0x5EED5EED5EED5EEDULL) >> 63) ? -1.0 : 1.0; }

std::vector<double> hash_embed(std::span<const std::uint32_t> ids, std::size_t k2) {
  std::vector<double> e(k2, 0.0);
  if (ids.empty() || k2 == 0) return e;
  const double w = 1.0 / std::sqrt(static_cast<double>(ids.size()));
  for (auto id : ids) e[hash_coordinate(id, k2)] += hash_sign(id) * w;
  return e;
}

double normalization_scale(std::span<const double> v) {
  const double energy = dot(v, v);
  if (v.empty() || energy == 0.0) throw Error(ErrorCode::DegenerateInput, "power_normalize: all-zero vector");
  return std::sqrt(static_cast<double>(v.size()) / energy);
}

std::vector<double> power_normalize(std::span<const double> v) {
  const double s = normalization_scale(v);
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x *= s;
  return out;
}

LatentVector encode(std::span<const double> key_features, const PromptString& prompt, const CodecConfig& cfg,
                    const Vocabulary& vocab, const ProjectionPair& proj) {
  cfg.validate();
  if (key_features.size() != cfg.m) {
    throw Error(ErrorCode::InvalidInput, "encode: key features have length " + std::to_string(key_features.size()) +
                                             ", config m=" + std::to_string(cfg.m));
  }
  if (proj.m() != cfg.m || proj.k1() != cfg.k1) throw Error(ErrorCode::InvalidInput, "encode: projection shape mismatch");

  std::vector<double> v = proj.forward(key_features);
  if (cfg.mode == TextMode::Analog) {
    const auto text = hash_embed(tokenize(prompt, vocab), cfg.k2);
    v.insert(v.end(), text.begin(), text.end());
  } else if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
    return LatentVector{std::move(v), 0.0};
  }
  const double s = normalization_scale(v);
  for (auto& x : v) x *= s;
  return LatentVector{std::move(v), s};
}

TextDescriptor decode_text_latent(std::span<const double> text_part, const Vocabulary& vocab) {
  if (text_part.empty()) throw Error(ErrorCode::InvalidInput, "decode: empty text latent");
  LatentSlotSource src(text_part, vocab);
  return assemble_descriptor(src);
}

DecodedPayload split_and_decode(std::span<const double> received, double scale, const CodecConfig& cfg,
                                const Vocabulary& vocab, const ProjectionPair& proj,
                                std::optional<std::string_view> digital_text) {
  cfg.validate();
  if (received.size() != cfg.k()) {
    throw Error(ErrorCode::InvalidInput, "decode: received length " + std::to_string(received.size()) +
                                             ", expected k=" + std::to_string(cfg.k()));
  }
  DecodedPayload out;
  if (scale > 0.0) {
    std::vector<double> image(received.begin(), received.begin() + static_cast<std::ptrdiff_t>(cfg.k1));
    for (auto& x : image) x /= scale;
    out.key_features = proj.backward(image);
  } else {
    out.key_features.assign(cfg.m, 0.0);
  }
  if (cfg.mode == TextMode::Digital) {
    if (!digital_text) throw Error(ErrorCode::InvalidInput, "decode: digital-text mode needs the prompt payload");
    out.descriptor = parse_prompt(*digital_text).descriptor;
  } else {
    out.descriptor = decode_text_latent(received.subspan(cfg.k1), vocab);
  }
  return out;
}

double key_feature_noise_variance(double sigma, double gain, double scale, std::size_t k1, std::size_t m) {
  if (m == 0 || !(scale > 0.0) || !(gain > 0.0)) return 0.0;
  const double per_latent = (sigma * sigma) / (gain * gain * scale * scale);
  return per_latent * static_cast<double>(k1) / static_cast<double>(m);
}

}  // namespace semcomm
