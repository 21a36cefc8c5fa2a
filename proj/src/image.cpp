#include "workbench/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <numeric>

#include <png.h>

#include "workbench/error.hpp"

namespace wb {

double ImageTensor::mean() const {
  if (pixels.empty()) return 0.0;
  return std::accumulate(pixels.begin(), pixels.end(), 0.0) / static_cast<double>(pixels.size());
}

Image8 decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw IoError(std::string("png decode: ") + img.message);
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out(static_cast<int>(img.height), static_cast<int>(img.width), color ? 3 : 1);
  png_color white{255, 255, 255};
  if (!png_image_finish_read(&img, &white, out.data.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("png decode: " + msg);
  }
  return out;
}

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  buf->insert(buf->end(), data, data + length);
}

void flush_nothing(png_structp) {}

}  // namespace

namespace {

/// libpng longjmps on error; keep objects with destructors out of this frame.
bool encode_core(const Image8* image, int level, png_text* text, int ntext,
                 std::vector<std::uint8_t>* out) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, out, append_bytes, flush_nothing);
  png_set_compression_level(png, level);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image->width),
               static_cast<png_uint_32>(image->height), 8,
               image->channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (ntext > 0) png_set_text(png, info, text, ntext);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(image->width) * image->channels;
  for (int y = 0; y < image->height; ++y)
    png_write_row(png, const_cast<png_bytep>(image->data.data() + y * stride));
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image8& image, const PngWriteOptions& options) {
  if (image.channels != 1 && image.channels != 3)
    throw IoError("png encode: only gray and RGB rasters are supported");
  std::vector<png_text> text(options.text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    text[i].compression = PNG_TEXT_COMPRESSION_NONE;
    text[i].key = const_cast<char*>(options.text[i].first.c_str());
    text[i].text = const_cast<char*>(options.text[i].second.c_str());
    text[i].text_length = options.text[i].second.size();
  }
  std::vector<std::uint8_t> out;
  if (!encode_core(&image, options.compression_level, text.data(), static_cast<int>(text.size()),
                   &out))
    throw IoError("png encode failed");
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Image8 read_png(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  try {
    return decode_png(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Image8& image,
               const PngWriteOptions& options) {
  auto bytes = encode_png(image, options);
  write_file_bytes(path, bytes);
}

Image8 to_grayscale(const Image8& image) {
  if (image.channels == 1) return image;
  Image8 out(image.height, image.width, 1);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      double luma = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) +
                    0.114 * image.at(y, x, 2);
      out.at(y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(luma), 0L, 255L));
    }
  return out;
}

namespace {

struct Tap {
  int index;
  double weight;
};

/// Per output coordinate, the input pixels it overlaps and their weights.
std::vector<std::vector<Tap>> area_taps(int in_size, int out_size) {
  std::vector<std::vector<Tap>> taps(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double lo = o * scale, hi = (o + 1) * scale;
    for (int i = static_cast<int>(std::floor(lo)); i < in_size && i < hi; ++i) {
      double overlap = std::min<double>(hi, i + 1) - std::max<double>(lo, i);
      if (overlap > 1e-12) taps[o].push_back({i, overlap / scale});
    }
  }
  return taps;
}

template <typename Get>
std::vector<double> resample(int in_w, int in_h, int channels, int out_w, int out_h, Get get) {
  auto tx = area_taps(in_w, out_w);
  auto ty = area_taps(in_h, out_h);
  // Horizontal pass then vertical pass.
  std::vector<double> tmp(static_cast<std::size_t>(in_h) * out_w * channels, 0.0);
  for (int y = 0; y < in_h; ++y)
    for (int ox = 0; ox < out_w; ++ox)
      for (int c = 0; c < channels; ++c) {
        double acc = 0;
        for (const auto& t : tx[ox]) acc += t.weight * get(y, t.index, c);
        tmp[(static_cast<std::size_t>(y) * out_w + ox) * channels + c] = acc;
      }
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * channels, 0.0);
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox)
      for (int c = 0; c < channels; ++c) {
        double acc = 0;
        for (const auto& t : ty[oy])
          acc += t.weight * tmp[(static_cast<std::size_t>(t.index) * out_w + ox) * channels + c];
        out[(static_cast<std::size_t>(oy) * out_w + ox) * channels + c] = acc;
      }
  return out;
}

}  // namespace

Image8 resize_area(const Image8& image, int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("resize target must be positive");
  if (width == image.width && height == image.height) return image;
  auto values = resample(image.width, image.height, image.channels, width, height,
                         [&](int y, int x, int c) { return double(image.at(y, x, c)); });
  Image8 out(height, width, image.channels);
  for (std::size_t i = 0; i < values.size(); ++i)
    out.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(values[i]), 0L, 255L));
  return out;
}

ImageTensor resize_area(const ImageTensor& image, int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("resize target must be positive");
  if (width == image.width && height == image.height) return image;
  ImageTensor out(height, width, image.channels);
  out.pixels = resample(image.width, image.height, image.channels, width, height,
                        [&](int y, int x, int c) { return image.at(y, x, c); });
  return out;
}

ImageTensor to_tensor(const Image8& image) {
  ImageTensor t(image.height, image.width, image.channels);
  for (std::size_t i = 0; i < image.data.size(); ++i) t.pixels[i] = image.data[i] / 255.0;
  return t;
}

Image8 to_image8(const ImageTensor& image) {
  Image8 out(image.height, image.width, image.channels);
  for (std::size_t i = 0; i < image.pixels.size(); ++i)
    out.data[i] = static_cast<std::uint8_t>(
        std::clamp(std::lround(image.pixels[i] * 255.0), 0L, 255L));
  return out;
}

ImageTensor load_canonical_gray(const std::filesystem::path& path, int width, int height) {
  return to_tensor(resize_area(to_grayscale(read_png(path)), width, height));
}

}  // namespace wb
