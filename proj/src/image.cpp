#include "taa/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "taa/errors.hpp"

namespace taa {

Image::Image(int height, int width, double fill)
    : height_(height), width_(width) {
  if (height < 0 || width < 0) throw InvalidArgument("negative image size");
  pixels_.assign(static_cast<std::size_t>(height) * width * 3, fill);
}

Image::Image(int height, int width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height < 0 || width < 0) throw InvalidArgument("negative image size");
  if (pixels_.size() != static_cast<std::size_t>(height) * width * 3)
    throw DimensionMismatch("pixel buffer does not match H x W x 3");
}

bool Image::quantized() const {
  return std::all_of(pixels_.begin(), pixels_.end(), [](double v) {
    return v >= 0.0 && v <= 1.0 && std::round(v * 255.0) / 255.0 == v;
  });
}

bool Image::in_unit_range() const {
  return std::all_of(pixels_.begin(), pixels_.end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

double linf_distance(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw DimensionMismatch("linf_distance: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

namespace {

std::uint8_t to_level(double v) {
  v = std::clamp(v, 0.0, 1.0);
  // std::round rounds halfway cases away from zero.
  return static_cast<std::uint8_t>(std::round(v * 255.0));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image quantize(const Image& image) {
  Image out(image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); ++i)
    out.data()[i] = to_level(image.data()[i]) / 255.0;
  return out;
}

void write_png(const Image& image, const std::filesystem::path& path,
               const std::vector<std::pair<std::string, std::string>>& text) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoFailure("cannot open for writing: " + path.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoFailure("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoFailure("png_create_info_struct failed");
  }

  std::vector<std::uint8_t> rows(image.size());
  for (std::size_t i = 0; i < image.size(); ++i)
    rows[i] = to_level(image.data()[i]);
  std::vector<png_bytep> row_ptrs(image.height());
  for (int y = 0; y < image.height(); ++y)
    row_ptrs[y] = rows.data() + static_cast<std::size_t>(y) * image.width() * 3;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoFailure("libpng error while writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  // Fixed compression settings keep the encoded bytes reproducible.
  png_set_compression_level(png, 6);
  std::vector<png_text> chunks(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(text[i].first.c_str());
    chunks[i].text = const_cast<char*>(text[i].second.c_str());
    chunks[i].text_length = text[i].second.size();
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoFailure("cannot open for reading: " + path.string());

  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw IoFailure("not a PNG file: " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoFailure("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoFailure("png_create_info_struct failed");
  }

  std::vector<std::uint8_t> buffer;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoFailure("libpng error while reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  // Normalize any input to 8-bit RGB.
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoFailure("unsupported PNG layout: " + path.string());
  }

  buffer.resize(static_cast<std::size_t>(width) * height * 3);
  row_ptrs.resize(height);
  for (int y = 0; y < height; ++y)
    row_ptrs[y] = buffer.data() + static_cast<std::size_t>(y) * width * 3;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image out(height, width);
  for (std::size_t i = 0; i < buffer.size(); ++i)
    out.data()[i] = buffer[i] / 255.0;
  return out;
}

Image quantize_and_roundtrip(const Image& image,
                             const std::filesystem::path& path) {
  if (!image.in_unit_range())
    throw InvalidArgument("quantize_and_roundtrip expects values in [0, 1]");
  write_png(quantize(image), path);
  return read_png(path);
}

}  // namespace taa
