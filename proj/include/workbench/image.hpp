#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace wb {

/// 8-bit interleaved raster as stored on disk (1 = gray, 3 = RGB).
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;

  Image8() = default;
  Image8(int h, int w, int c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::uint8_t& at(int y, int x, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

/// H x W x C raster of reals in [0,1]; row-major, channels interleaved.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> pixels;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c = 1, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t size() const noexcept { return pixels.size(); }
  double mean() const;
  bool operator==(const ImageTensor&) const = default;
};

struct PngWriteOptions {
  int compression_level = 6;
  std::vector<std::pair<std::string, std::string>> text;  // tEXt chunks
};

/// Decodes 8/16-bit gray, gray+alpha, palette, RGB or RGBA PNG. Alpha is
/// composited onto white. Throws IoError on undecodable input.
Image8 decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Image8& image, const PngWriteOptions& options = {});

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image,
               const PngWriteOptions& options = {});

/// ITU-R BT.601 luma, rounded to nearest.
Image8 to_grayscale(const Image8& image);

/// Area-averaging resample (exact fractional pixel overlap), rounded to nearest.
Image8 resize_area(const Image8& image, int width, int height);
ImageTensor resize_area(const ImageTensor& image, int width, int height);

ImageTensor to_tensor(const Image8& image);
Image8 to_image8(const ImageTensor& image);

/// Decode, grayscale, resize: the canonical classifier input.
ImageTensor load_canonical_gray(const std::filesystem::path& path, int width, int height);

}  // namespace wb
