#include "core/wire.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>

#include "core/errors.hpp"

namespace semcomm {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'S', 'E', 'M', 'C'};

constexpr std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}
constexpr auto kCrcTable = make_crc_table();

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  using U = std::make_unsigned_t<T>;
  const auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t pos, std::size_t n) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
  return v;
}

std::size_t body_size(const SemanticPacket& p) {
  std::size_t n = kPacketHeaderBytes + 4 * p.latent_count();
  if (p.digital()) n += 4 + p.text.size();
  n += 4 + 2 * p.mask_runs.size();
  return n;
}

[[noreturn]] void truncated(std::uint64_t expected, std::uint64_t actual) {
  throw PacketError(ErrorCode::TruncatedPacket, expected, actual,
                    "decode_packet: truncated packet (expected " + std::to_string(expected) + " bytes, got " +
                        std::to_string(actual) + ")");
}

[[noreturn]] void corrupt(std::uint64_t computed, std::uint64_t stored, const std::string& why) {
  throw PacketError(ErrorCode::CorruptPacket, computed, stored, "decode_packet: " + why);
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (auto byte : data) c = kCrcTable[(c ^ byte) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::vector<std::uint16_t> encode_rle(std::span<const std::uint8_t> bits) {
  std::vector<std::uint16_t> runs;
  bool current = false;
  std::size_t i = 0;
  while (i < bits.size()) {
    std::size_t run = 0;
    while (i < bits.size() && (bits[i] != 0) == current) {
      ++run;
      ++i;
    }
    while (run > 0xFFFF) {
      runs.push_back(0xFFFF);
      runs.push_back(0);
      run -= 0xFFFF;
    }
    runs.push_back(static_cast<std::uint16_t>(run));
    current = !current;
  }
  return runs;
}

std::vector<std::uint8_t> decode_rle(std::span<const std::uint16_t> runs, std::size_t expected_bits) {
  std::vector<std::uint8_t> bits;
  bits.reserve(expected_bits);
  bool current = false;
  for (auto r : runs) {
    if (bits.size() + r > expected_bits)
      throw Error(ErrorCode::InvalidInput, "decode_rle: runs exceed " + std::to_string(expected_bits) + " bits");
    bits.insert(bits.end(), r, current ? 1 : 0);
    current = !current;
  }
  if (bits.size() != expected_bits)
    throw Error(ErrorCode::InvalidInput, "decode_rle: runs cover " + std::to_string(bits.size()) + " of " +
                                             std::to_string(expected_bits) + " bits");
  return bits;
}

std::uint16_t alpha_to_fx(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidParameter, "alpha must be in [0,1]");
  return static_cast<std::uint16_t>(std::nearbyint(alpha * 65535.0));
}

std::size_t overhead_bytes(const SemanticPacket& p) { return body_size(p) + kPacketCrcBytes; }

std::vector<std::uint8_t> encode_packet(const SemanticPacket& p) {
  if (p.latent.size() != p.latent_count()) {
    throw Error(ErrorCode::InvalidInput, "encode_packet: latent has " + std::to_string(p.latent.size()) +
                                             " values, header declares " + std::to_string(p.latent_count()));
  }
  if (!p.digital() && !p.text.empty()) throw Error(ErrorCode::InvalidInput, "encode_packet: text payload requires the digital-text flag");
  std::size_t covered = 0;
  for (auto r : p.mask_runs) covered += r;
  if (covered != std::size_t{p.height} * p.width)
    throw Error(ErrorCode::InvalidInput, "encode_packet: mask runs do not cover H x W");
  if (p.text.size() > 0xFFFFFFFFull || p.mask_runs.size() > 0xFFFFFFFFull || overhead_bytes(p) > 0xFFFFFFFFull)
    throw Error(ErrorCode::TooLarge, "encode_packet: payload exceeds 2^32-1 bytes");

  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  out.reserve(overhead_bytes(p));
  put(out, p.version);
  put(out, p.flags);
  put(out, p.height);
  put(out, p.width);
  put(out, p.alpha_fx);
  put(out, p.k1);
  put(out, p.k2);
  put(out, std::bit_cast<std::uint32_t>(p.norm_scale));
  put(out, p.seed);
  for (float v : p.latent) put(out, std::bit_cast<std::uint32_t>(v));
  if (p.digital()) {
    put(out, static_cast<std::uint32_t>(p.text.size()));
    out.insert(out.end(), p.text.begin(), p.text.end());
  }
  put(out, static_cast<std::uint32_t>(p.mask_runs.size()));
  for (auto r : p.mask_runs) put(out, r);
  put(out, crc32(out));
  return out;
}

SemanticPacket decode_packet(std::span<const std::uint8_t> b) {
  const std::size_t n = b.size();
  if (n < kMagic.size()) truncated(kMagic.size(), n);
  int distance = 0;
  for (std::size_t i = 0; i < kMagic.size(); ++i) distance += std::popcount(static_cast<unsigned>(b[i] ^ kMagic[i]));
  if (distance >= 2) throw PacketError(ErrorCode::NotAPacket, 0, 0, "decode_packet: bad magic (not a SEMC packet)");
  if (n < kPacketHeaderBytes + 4 + kPacketCrcBytes) truncated(kPacketHeaderBytes + 4 + kPacketCrcBytes, n);

  SemanticPacket p;
  p.version = b[4];
  p.flags = b[5];
  p.height = static_cast<std::uint16_t>(get_le(b, 6, 2));
  p.width = static_cast<std::uint16_t>(get_le(b, 8, 2));
  p.alpha_fx = static_cast<std::uint16_t>(get_le(b, 10, 2));
  p.k1 = static_cast<std::uint16_t>(get_le(b, 12, 2));
  p.k2 = static_cast<std::uint16_t>(get_le(b, 14, 2));
  p.norm_scale = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(b, 16, 4)));
  p.seed = get_le(b, 20, 8);

  // Walk the declared lengths (64-bit arithmetic cannot overflow here).
  std::uint64_t pos = kPacketHeaderBytes;
  const std::uint64_t latent_pos = pos;
  pos += 4ull * p.latent_count();
  std::uint64_t text_pos = 0, text_len = 0;
  if (p.digital()) {
    if (pos + 4 + 4 + kPacketCrcBytes > n) truncated(pos + 4 + 4 + kPacketCrcBytes, n);
    text_len = get_le(b, pos, 4);
    text_pos = pos + 4;
    pos = text_pos + text_len;
  }
  if (pos + 4 + kPacketCrcBytes > n) truncated(pos + 4 + kPacketCrcBytes, n);
  const std::uint64_t run_count = get_le(b, pos, 4);
  const std::uint64_t runs_pos = pos + 4;
  const std::uint64_t declared = runs_pos + 2 * run_count + kPacketCrcBytes;
  if (declared > n) truncated(declared, n);

  const auto body = b.first(declared - kPacketCrcBytes);
  const std::uint32_t computed = crc32(body);
  const auto stored = static_cast<std::uint32_t>(get_le(b, declared - kPacketCrcBytes, 4));
  if (computed != stored) corrupt(computed, stored, "CRC mismatch");
  if (declared != n) corrupt(declared, n, "trailing bytes after the checksum");
  if (distance != 0) corrupt(computed, stored, "bad magic under a valid checksum");
  if (p.version != kPacketVersion) corrupt(p.version, kPacketVersion, "unsupported version " + std::to_string(p.version));

  p.latent.resize(p.latent_count());
  for (std::size_t i = 0; i < p.latent.size(); ++i)
    p.latent[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(b, latent_pos + 4 * i, 4)));
  if (p.digital()) p.text.assign(reinterpret_cast<const char*>(b.data() + text_pos), text_len);
  p.mask_runs.resize(run_count);
  std::uint64_t covered = 0;
  for (std::size_t i = 0; i < p.mask_runs.size(); ++i) {
    p.mask_runs[i] = static_cast<std::uint16_t>(get_le(b, runs_pos + 2 * i, 2));
    covered += p.mask_runs[i];
  }
  if (covered != std::uint64_t{p.height} * p.width) corrupt(covered, std::uint64_t{p.height} * p.width, "mask runs do not cover H x W");
  return p;
}

}  // namespace semcomm
