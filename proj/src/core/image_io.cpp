#include "core/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>

#include "core/errors.hpp"

namespace semcomm {

namespace {

bool has_png_signature(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), sig, 8) == 0;
}

// Netpbm header: magic, then whitespace-separated integers with '#' comments,
// then exactly one whitespace byte before the raster.
class PnmHeader {
 public:
  explicit PnmHeader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t read_uint(const std::string& what) {
    skip_space_and_comments();
    std::size_t v = 0;
    bool any = false;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (1u << 24)) throw Error(ErrorCode::InvalidInput, "pnm: " + what + " too large");
      ++pos_;
      any = true;
    }
    if (!any) throw Error(ErrorCode::InvalidInput, "pnm: expected " + what);
    return v;
  }

  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw Error(ErrorCode::InvalidInput, "pnm: missing whitespace before raster");
    }
    return pos_ + 1;
  }

  void skip(std::size_t n) { pos_ += n; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

ImageBuffer decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw Error(ErrorCode::InvalidInput, "not a binary PPM (P6) or PNG file");
  }
  PnmHeader hdr(bytes);
  hdr.skip(2);
  const std::size_t w = hdr.read_uint("width");
  const std::size_t h = hdr.read_uint("height");
  const std::size_t maxval = hdr.read_uint("maxval");
  if (maxval != 255) throw Error(ErrorCode::InvalidInput, "ppm: only maxval 255 is supported");
  const std::size_t start = hdr.raster_start();
  const std::size_t need = w * h * 3;
  if (w == 0 || h == 0 || bytes.size() < start + need) {
    throw Error(ErrorCode::InvalidInput, "ppm: truncated raster");
  }
  return ImageBuffer(h, w, std::vector<std::uint8_t>(bytes.begin() + start, bytes.begin() + start + need));
}

SegmentationMask decode_pbm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '4') {
    throw Error(ErrorCode::InvalidInput, "not a binary PBM (P4) or PNG mask");
  }
  PnmHeader hdr(bytes);
  hdr.skip(2);
  const std::size_t w = hdr.read_uint("width");
  const std::size_t h = hdr.read_uint("height");
  const std::size_t start = hdr.raster_start();
  const std::size_t stride = (w + 7) / 8;
  if (w == 0 || h == 0 || bytes.size() < start + stride * h) {
    throw Error(ErrorCode::InvalidInput, "pbm: truncated raster");
  }
  std::vector<std::uint8_t> bits(w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      bits[y * w + x] = (bytes[start + y * stride + x / 8] >> (7 - x % 8)) & 1;
  return SegmentationMask(h, w, std::move(bits));
}

struct PngRaster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;
};

PngRaster decode_png(std::span<const std::uint8_t> bytes, png_uint_32 format) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::InvalidInput, std::string("png: ") + image.message);
  }
  image.format = format;
  PngRaster out;
  out.height = image.height;
  out.width = image.width;
  out.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::InvalidInput, std::string("png: ") + image.message);
  }
  return out;
}

void encode_png(const std::filesystem::path& path, std::size_t h, std::size_t w, png_uint_32 format,
                const std::uint8_t* data) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, data, 0, nullptr)) {
    throw Error(ErrorCode::IoError, "png: cannot write " + path.string() + ": " + image.message);
  }
}

bool is_png_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".png";
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

ImageBuffer load_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (has_png_signature(bytes)) {
    auto r = decode_png(bytes, PNG_FORMAT_RGB);
    return ImageBuffer(r.height, r.width, std::move(r.data));
  }
  return decode_ppm(bytes);
}

void save_image(const ImageBuffer& img, const std::filesystem::path& path) {
  if (is_png_path(path)) {
    encode_png(path, img.height(), img.width(), PNG_FORMAT_RGB, img.pixels().data());
    return;
  }
  std::string header = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), img.pixels().begin(), img.pixels().end());
  write_file_bytes(path, bytes);
}

SegmentationMask load_mask(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (has_png_signature(bytes)) {
    auto r = decode_png(bytes, PNG_FORMAT_GRAY);
    return SegmentationMask(r.height, r.width, std::move(r.data));
  }
  return decode_pbm(bytes);
}

SegmentationMask load_mask(const std::filesystem::path& path, const ImageBuffer& ref) {
  auto mask = load_mask(path);
  if (!mask.matches(ref)) {
    throw Error(ErrorCode::InvalidInput, "mask " + path.string() + " is " + std::to_string(mask.height()) + "x" +
                                             std::to_string(mask.width()) + ", image is " +
                                             std::to_string(ref.height()) + "x" + std::to_string(ref.width()));
  }
  return mask;
}

void save_mask(const SegmentationMask& mask, const std::filesystem::path& path) {
  if (is_png_path(path)) {
    std::vector<std::uint8_t> gray(mask.size());
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask[i] ? 255 : 0;
    encode_png(path, mask.height(), mask.width(), PNG_FORMAT_GRAY, gray.data());
    return;
  }
  std::string header = "P4\n" + std::to_string(mask.width()) + " " + std::to_string(mask.height()) + "\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  const std::size_t stride = (mask.width() + 7) / 8;
  const std::size_t start = bytes.size();
  bytes.resize(start + stride * mask.height(), 0);
  for (std::size_t y = 0; y < mask.height(); ++y)
    for (std::size_t x = 0; x < mask.width(); ++x)
      if (mask.at(y, x)) bytes[start + y * stride + x / 8] |= static_cast<std::uint8_t>(0x80 >> (x % 8));
  write_file_bytes(path, bytes);
}

std::vector<std::string> load_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace semcomm
