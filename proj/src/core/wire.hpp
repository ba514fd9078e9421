#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace semcomm {

inline constexpr std::uint8_t kPacketVersion = 1;
inline constexpr std::uint8_t kFlagDigitalText = 0x01;
inline constexpr std::size_t kPacketHeaderBytes = 28;  // magic through seed
inline constexpr std::size_t kPacketCrcBytes = 4;

/// On-air unit. Layout (little-endian):
///   "SEMC" | version u8 | flags u8 | H u16 | W u16 | alpha_fx u16 | k1 u16 |
///   k2 u16 | norm_scale f32 | seed u64 | latent f32 x (k1, + k2 unless
///   digital) | [digital: u32 text length, UTF-8 bytes] | u32 run count,
///   u16 runs | CRC-32 of everything before it
struct SemanticPacket {
  std::uint8_t version = kPacketVersion;
  std::uint8_t flags = 0;  // bit 0: digital text; other bits are carried through untouched
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint16_t alpha_fx = 0;  // alpha_effective * 65535, rounded
  std::uint16_t k1 = 0;
  std::uint16_t k2 = 0;
  float norm_scale = 0.0f;
  std::uint64_t seed = 0;
  std::vector<float> latent;
  std::string text;
  std::vector<std::uint16_t> mask_runs;

  bool digital() const noexcept { return (flags & kFlagDigitalText) != 0; }
  std::size_t latent_count() const noexcept { return digital() ? k1 : std::size_t{k1} + k2; }
  double alpha() const noexcept { return alpha_fx / 65535.0; }

  bool operator==(const SemanticPacket&) const = default;
};

// CRC-32 (IEEE 802.3 polynomial, reflected, init and final xor 0xFFFFFFFF).
std::uint32_t crc32(std::span<const std::uint8_t> data);

// Alternating runs starting with `false`; runs longer than 65535 are split
// with zero-length runs of the other value.
std::vector<std::uint16_t> encode_rle(std::span<const std::uint8_t> bits);
std::vector<std::uint8_t> decode_rle(std::span<const std::uint16_t> runs, std::size_t expected_bits);

std::uint16_t alpha_to_fx(double alpha);

std::vector<std::uint8_t> encode_packet(const SemanticPacket& p);
// Errors: fewer than 4 bytes or a declared length beyond the buffer ->
// TruncatedPacket (expected, actual length); magic more than one bit away
// from "SEMC" -> NotAPacket; checksum mismatch -> CorruptPacket (computed,
// stored CRC); inconsistent contents under a valid checksum -> CorruptPacket.
SemanticPacket decode_packet(std::span<const std::uint8_t> bytes);
std::size_t overhead_bytes(const SemanticPacket& p);

}  // namespace semcomm
