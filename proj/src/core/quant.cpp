#include "core/quant.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "core/errors.hpp"
#include "core/image_io.hpp"

namespace semcomm {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw Error(ErrorCode::InvalidInput, "quantized checkpoint: truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

QuantizedBlock quantize_block(std::span<const double> w) {
  if (w.size() != kQuantBlockSize) {
    throw Error(ErrorCode::InvalidInput, "quantize_block: expected 64 values, got " + std::to_string(w.size()));
  }
  double amax = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w[i])) throw Error(ErrorCode::InvalidInput, "quantize_block: non-finite value at index " + std::to_string(i));
    amax = std::max(amax, std::abs(w[i]));
  }
  QuantizedBlock q;
  q.absmax = static_cast<float>(amax);
  if (q.absmax == 0.0f) return q;
  const double a = q.absmax;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double c = std::nearbyint(w[i] * kQuantMaxCode / a);  // default rounding mode: half-to-even
    q.codes[i] = static_cast<std::int8_t>(std::clamp(c, -7.0, 7.0));
  }
  return q;
}

std::array<double, kQuantBlockSize> dequantize_block(const QuantizedBlock& q) {
  std::array<double, kQuantBlockSize> w{};
  const double a = q.absmax;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = q.codes[i] * a / kQuantMaxCode;
  return w;
}

Matrix QuantizedTensor::dequantize() const {
  Matrix m(rows, cols);
  auto data = m.data();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto w = dequantize_block(blocks[b]);
    for (std::size_t i = 0; i < kQuantBlockSize && b * kQuantBlockSize + i < data.size(); ++i)
      data[b * kQuantBlockSize + i] = w[i];
  }
  return m;
}

QuantizedTensor quantize_tensor(std::string name, const Matrix& w) {
  QuantizedTensor t;
  t.name = std::move(name);
  t.rows = w.rows();
  t.cols = w.cols();
  const auto data = w.data();
  for (std::size_t start = 0; start < data.size(); start += kQuantBlockSize) {
    std::array<double, kQuantBlockSize> block{};
    const std::size_t n = std::min(kQuantBlockSize, data.size() - start);
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(start), n, block.begin());
    t.blocks.push_back(quantize_block(block));
  }
  return t;
}

std::vector<std::uint8_t> serialize_quantized(std::span<const QuantizedTensor> tensors) {
  std::vector<std::uint8_t> out{'Q', 'N', 'T', '1'};
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.rows > UINT32_MAX || t.cols > UINT32_MAX || t.name.size() > UINT32_MAX)
      throw Error(ErrorCode::TooLarge, "quantized checkpoint: tensor " + t.name + " too large");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rows));
    put_u32(out, static_cast<std::uint32_t>(t.cols));
    put_u32(out, static_cast<std::uint32_t>(t.blocks.size()));
    for (const auto& b : t.blocks) {
      for (std::size_t i = 0; i < kQuantBlockSize; i += 2) {
        const auto lo = static_cast<std::uint8_t>(b.codes[i]) & 0x0F;
        const auto hi = static_cast<std::uint8_t>(b.codes[i + 1]) & 0x0F;
        out.push_back(static_cast<std::uint8_t>(lo | (hi << 4)));
      }
      put_u32(out, std::bit_cast<std::uint32_t>(b.absmax));
    }
  }
  return out;
}

std::vector<QuantizedTensor> deserialize_quantized(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), "QNT1", 4) != 0) throw Error(ErrorCode::InvalidInput, "quantized checkpoint: bad magic");
  const std::uint32_t n = r.u32();
  std::vector<QuantizedTensor> out;
  for (std::uint32_t k = 0; k < n; ++k) {
    QuantizedTensor t;
    const auto name = r.bytes(r.u32());
    t.name.assign(name.begin(), name.end());
    t.rows = r.u32();
    t.cols = r.u32();
    const std::uint32_t nb = r.u32();
    if (nb != (t.rows * t.cols + kQuantBlockSize - 1) / kQuantBlockSize)
      throw Error(ErrorCode::InvalidInput, "quantized checkpoint: block count mismatch in " + t.name);
    r.need(static_cast<std::size_t>(nb) * 36);
    t.blocks.resize(nb);
    for (auto& b : t.blocks) {
      for (std::size_t i = 0; i < kQuantBlockSize; i += 2) {
        const std::uint8_t byte = r.u8();
        // sign-extend each nibble
        b.codes[i] = static_cast<std::int8_t>(static_cast<std::int8_t>(byte << 4) >> 4);
        b.codes[i + 1] = static_cast<std::int8_t>(static_cast<std::int8_t>(byte & 0xF0) >> 4);
        if (b.codes[i] < -7 || b.codes[i + 1] < -7)
          throw Error(ErrorCode::InvalidInput, "quantized checkpoint: code -8 is outside the lattice");
      }
      b.absmax = std::bit_cast<float>(r.u32());
      if (!(b.absmax >= 0.0f) || !std::isfinite(b.absmax))
        throw Error(ErrorCode::InvalidInput, "quantized checkpoint: invalid absmax in " + t.name);
    }
    out.push_back(std::move(t));
  }
  if (!r.done()) throw Error(ErrorCode::InvalidInput, "quantized checkpoint: trailing bytes");
  return out;
}

void save_quantized(const std::filesystem::path& path, std::span<const QuantizedTensor> tensors) {
  write_file_bytes(path, serialize_quantized(tensors));
}

std::vector<QuantizedTensor> load_quantized(const std::filesystem::path& path) {
  return deserialize_quantized(read_file_bytes(path));
}

bool glob_match(std::string_view pattern, std::string_view name) {
  std::size_t p = 0, n = 0, star = std::string_view::npos, mark = 0;
  while (n < name.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = n;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

WeightPartition partition_weights(std::span<const std::string> tensor_names,
                                  std::span<const std::string> critical_patterns) {
  WeightPartition part;
  std::vector<bool> used(critical_patterns.size(), false);
  for (const auto& name : tensor_names) {
    bool critical = false;
    for (std::size_t i = 0; i < critical_patterns.size(); ++i) {
      if (glob_match(critical_patterns[i], name)) {
        critical = true;
        used[i] = true;
      }
    }
    (critical ? part.critical : part.quantizable).push_back(name);
  }
  for (std::size_t i = 0; i < critical_patterns.size(); ++i)
    if (!used[i]) part.unmatched_patterns.push_back(critical_patterns[i]);
  return part;
}

LoraAdapter lora_init(std::size_t d, std::size_t k, std::size_t r, RngStream& rng, double init_std, double alpha) {
  if (r < 1 || r > std::min(d, k)) {
    throw Error(ErrorCode::InvalidRank, "lora_init: rank " + std::to_string(r) + " must be in [1, min(d,k)=" +
                                            std::to_string(std::min(d, k)) + "]");
  }
  LoraAdapter ad;
  ad.a = Matrix(r, k);
  for (auto& v : ad.a.data()) v = init_std * rng.gaussian();
  ad.b = Matrix(d, r, 0.0);
  ad.alpha = alpha;
  return ad;
}

std::vector<double> lora_forward(std::span<const double> x, const Matrix& base, const LoraAdapter& adapter) {
  if (x.size() != base.cols() || adapter.a.cols() != base.cols() || adapter.b.rows() != base.rows() ||
      adapter.b.cols() != adapter.a.rows()) {
    throw Error(ErrorCode::InvalidInput, "lora_forward: shape mismatch");
  }
  auto y = base.matvec(x);
  const auto ax = adapter.a.matvec(x);
  const auto bax = adapter.b.matvec(ax);
  const double s = adapter.scale();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * bax[i];
  return y;
}

std::vector<double> lora_forward(std::span<const double> x, const QuantizedTensor& base, const LoraAdapter& adapter) {
  return lora_forward(x, base.dequantize(), adapter);
}

Matrix lora_merge(const QuantizedTensor& base, const LoraAdapter& adapter) {
  Matrix w = base.dequantize();
  if (adapter.a.cols() != w.cols() || adapter.b.rows() != w.rows() || adapter.b.cols() != adapter.a.rows())
    throw Error(ErrorCode::InvalidInput, "lora_merge: shape mismatch");
  const Matrix delta = adapter.b.matmul(adapter.a);
  const double s = adapter.scale();
  auto wd = w.data();
  const auto dd = delta.data();
  for (std::size_t i = 0; i < wd.size(); ++i) wd[i] += s * dd[i];
  return w;
}

Precision parse_precision(std::string_view tag) {
  if (tag == "fp32") return Precision::Fp32;
  if (tag == "fp16") return Precision::Fp16;
  if (tag == "int4") return Precision::Int4;
  throw Error(ErrorCode::InvalidSpec, "unknown precision tag '" + std::string(tag) + "' (expected fp32, fp16 or int4)");
}

std::string_view precision_name(Precision p) {
  switch (p) {
    case Precision::Fp32: return "fp32";
    case Precision::Fp16: return "fp16";
    case Precision::Int4: return "int4";
  }
  return "?";
}

double precision_bytes(Precision p) {
  switch (p) {
    case Precision::Fp32: return 4.0;
    case Precision::Fp16: return 2.0;
    case Precision::Int4: return 0.5;
  }
  return 0.0;
}

std::vector<ModelSpecEntry> parse_model_spec(std::string_view text) {
  std::vector<ModelSpecEntry> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string line(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    char name[256], count[64], prec[32], extra[2];
    const int got = std::sscanf(line.c_str(), " %255s %63s %31s %1s", name, count, prec, extra);
    if (got <= 0) continue;
    if (got != 3) throw Error(ErrorCode::InvalidSpec, "model spec line " + std::to_string(line_no) + ": expected 'name count precision'");
    ModelSpecEntry e;
    e.name = name;
    char* end = nullptr;
    e.count = std::strtod(count, &end);
    if (*end != '\0' || !std::isfinite(e.count) || e.count < 0)
      throw Error(ErrorCode::InvalidSpec, "model spec line " + std::to_string(line_no) + ": invalid count '" + count + "'");
    e.precision = parse_precision(prec);
    out.push_back(std::move(e));
  }
  return out;
}

std::string MemoryReport::memory_gib_2dp() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", memory_gib);
  return buf;
}

MemoryReport account_memory(std::span<const ModelSpecEntry> spec) {
  constexpr double kGiB = 1073741824.0;
  MemoryReport r;
  double bytes = 0.0;
  for (const auto& e : spec) {
    if (!(e.count >= 0.0)) throw Error(ErrorCode::InvalidSpec, "account_memory: negative count for " + e.name);
    switch (e.precision) {
      case Precision::Fp32: r.fp32_params += e.count; break;
      case Precision::Fp16: r.fp16_params += e.count; break;
      case Precision::Int4: r.int4_params += e.count; break;
    }
    bytes += e.count * precision_bytes(e.precision);
  }
  r.total_params_millions = (r.fp32_params + r.fp16_params + r.int4_params) / 1e6;
  r.memory_gib = bytes / kGiB;
  r.int4_scale_overhead_gib = std::ceil(r.int4_params / static_cast<double>(kQuantBlockSize)) * 4.0 / kGiB;
  return r;
}

double solve_int4_fraction(double params, double target_gib) {
  if (!(params > 0.0)) throw Error(ErrorCode::InvalidParameter, "solve_int4_fraction: params must be > 0");
  const double f = (4.0 - target_gib * 1073741824.0 / params) / 3.5;
  if (!(f >= 0.0 && f <= 1.0)) throw Error(ErrorCode::InvalidParameter, "solve_int4_fraction: target not reachable with int4/fp32 mix");
  return f;
}

}  // namespace semcomm
