#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "core/image.hpp"

namespace semcomm {

// Reads binary PPM (P6, maxval 255) or PNG, chosen by file signature.
ImageBuffer load_image(const std::filesystem::path& path);
// Writes PNG when the extension is .png, binary PPM otherwise.
void save_image(const ImageBuffer& img, const std::filesystem::path& path);

// Reads PBM (P4) or single-channel PNG (nonzero = key) and checks the
// dimensions against `ref`.
SegmentationMask load_mask(const std::filesystem::path& path, const ImageBuffer& ref);
SegmentationMask load_mask(const std::filesystem::path& path);
void save_mask(const SegmentationMask& mask, const std::filesystem::path& path);

// One label per line; blank lines are skipped, trailing CR stripped.
std::vector<std::string> load_lines(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace semcomm
