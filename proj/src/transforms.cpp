#include "taa/transforms.hpp"

#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <string>

#include "taa/errors.hpp"
#include "taa/resample.hpp"

namespace taa {

namespace {

constexpr std::array<const char*, 11> kNames = {
    "hflip",     "vflip",    "wiener", "blur",       "jpeg",    "grayscale",
    "rotate90",  "resize",   "brightness", "contrast", "hue"};

bool is_integer(double v) { return std::isfinite(v) && v == std::floor(v); }

int odd_window(const TransformSpec& spec) {
  if (!is_integer(spec.parameter) || spec.parameter < 1 ||
      static_cast<long>(spec.parameter) % 2 == 0)
    throw UnsupportedParameter(spec.to_string() + ": window must be a positive odd integer");
  return static_cast<int>(spec.parameter);
}

// Reflect-101 border indexing (no edge repetition).
int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

Image hflip(const Image& in) {
  Image out(in.height(), in.width());
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = in.at(y, in.width() - 1 - x, c);
  return out;
}

Image vflip(const Image& in) {
  Image out(in.height(), in.width());
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = in.at(in.height() - 1 - y, x, c);
  return out;
}

// One counter-clockwise quarter turn: out[i][j] = in[j][W - 1 - i].
Image rotate_ccw(const Image& in) {
  const int h = in.height(), w = in.width();
  Image out(w, h);
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < h; ++j)
      for (int c = 0; c < 3; ++c) out.at(i, j, c) = in.at(j, w - 1 - i, c);
  return out;
}

int quarter_turns(const TransformSpec& spec) {
  if (!is_integer(spec.parameter))
    throw UnsupportedParameter(spec.to_string() + ": turns must be an integer");
  return static_cast<int>(((static_cast<long>(spec.parameter) % 4) + 4) % 4);
}

Image box_mean(const Image& in, int k) {
  const int h = in.height(), w = in.width(), r = k / 2;
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            s += in.at(reflect(y + dy, h), reflect(x + dx, w), c);
        out.at(y, x, c) = s / (static_cast<double>(k) * k);
      }
  return out;
}

// Adaptive Wiener filter per channel; the noise power is the mean of the
// local variances.
Image wiener(const Image& in, int k) {
  Image sq(in.height(), in.width());
  for (std::size_t i = 0; i < in.size(); ++i) sq.data()[i] = in.data()[i] * in.data()[i];
  const Image mean = box_mean(in, k);
  const Image mean_sq = box_mean(sq, k);
  const std::size_t pixels = static_cast<std::size_t>(in.height()) * in.width();
  std::array<double, 3> noise{};
  std::vector<double> var(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    var[i] = std::max(0.0, mean_sq.data()[i] - mean.data()[i] * mean.data()[i]);
    noise[i % 3] += var[i];
  }
  for (double& n : noise) n /= static_cast<double>(pixels);
  Image out(in.height(), in.width());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double m = mean.data()[i];
    const double n = noise[i % 3];
    out.data()[i] = var[i] < n ? m : m + (1.0 - n / var[i]) * (in.data()[i] - m);
    out.data()[i] = std::clamp(out.data()[i], 0.0, 1.0);
  }
  return out;
}

// Separable Gaussian; sigma follows the kernel-size rule of common imaging
// libraries when none is given.
Image gaussian_blur(const Image& in, int k) {
  const double sigma = 0.3 * ((k - 1) * 0.5 - 1.0) + 0.8;
  const int r = k / 2;
  std::vector<double> kern(k);
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = i - r;
    kern[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += kern[i];
  }
  for (double& v : kern) v /= total;
  const int h = in.height(), w = in.width();
  Image tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int i = 0; i < k; ++i) s += kern[i] * in.at(y, reflect(x + i - r, w), c);
        tmp.at(y, x, c) = s;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int i = 0; i < k; ++i) s += kern[i] * tmp.at(reflect(y + i - r, h), x, c);
        out.at(y, x, c) = s;
      }
  return out;
}

struct JpegErrorJump {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorJump*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

std::vector<unsigned char> to_bytes(const Image& in) {
  std::vector<unsigned char> bytes(in.size());
  for (std::size_t i = 0; i < in.size(); ++i)
    bytes[i] = static_cast<unsigned char>(
        std::lround(std::clamp(in.data()[i], 0.0, 1.0) * 255.0));
  return bytes;
}

Image jpeg_roundtrip(const Image& in, int quality) {
  std::vector<unsigned char> rgb = to_bytes(in);
  unsigned char* encoded = nullptr;
  unsigned long encoded_size = 0;
  {
    jpeg_compress_struct cinfo;
    JpegErrorJump err;
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
      jpeg_destroy_compress(&cinfo);
      std::free(encoded);
      throw IoFailure("jpeg encode failed");
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &encoded, &encoded_size);
    cinfo.image_width = static_cast<JDIMENSION>(in.width());
    cinfo.image_height = static_cast<JDIMENSION>(in.height());
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
      JSAMPROW row = &rgb[static_cast<std::size_t>(cinfo.next_scanline) * in.width() * 3];
      jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
  }

  Image out(in.height(), in.width());
  jpeg_decompress_struct dinfo;
  JpegErrorJump err;
  dinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&dinfo);
    std::free(encoded);
    throw IoFailure("jpeg decode failed");
  }
  jpeg_create_decompress(&dinfo);
  jpeg_mem_src(&dinfo, encoded, encoded_size);
  jpeg_read_header(&dinfo, TRUE);
  dinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&dinfo);
  std::vector<unsigned char> row(static_cast<std::size_t>(dinfo.output_width) * 3);
  while (dinfo.output_scanline < dinfo.output_height) {
    const int y = static_cast<int>(dinfo.output_scanline);
    JSAMPROW ptr = row.data();
    jpeg_read_scanlines(&dinfo, &ptr, 1);
    for (int x = 0; x < in.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = row[x * 3 + c] / 255.0;
  }
  jpeg_finish_decompress(&dinfo);
  jpeg_destroy_decompress(&dinfo);
  std::free(encoded);
  return out;
}

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

Image grayscale(const Image& in) {
  Image out(in.height(), in.width());
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x) {
      const double r = in.at(y, x, 0), g = in.at(y, x, 1), b = in.at(y, x, 2);
      // Gray pixels map to themselves so the transform is idempotent.
      const double l = (r == g && g == b) ? r : std::clamp(luma(r, g, b), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = l;
    }
  return out;
}

Image resize_roundtrip(const Image& in, int side) {
  const int h = in.height(), w = in.width();
  const std::vector<double> down = resample_separable(
      in.pixels(), h, w, 3, bilinear_matrix(side, h), side, bilinear_matrix(side, w), side);
  std::vector<double> up = resample_separable(down, side, side, 3, bilinear_matrix(h, side),
                                              h, bilinear_matrix(w, side), w);
  for (double& v : up) v = std::clamp(v, 0.0, 1.0);
  return Image(h, w, std::move(up));
}

Image brightness(const Image& in, double factor) {
  Image out = in;
  for (double& v : out.data()) v = std::clamp(v * factor, 0.0, 1.0);
  return out;
}

Image contrast(const Image& in, double factor) {
  double mean = 0.0;
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x)
      mean += luma(in.at(y, x, 0), in.at(y, x, 1), in.at(y, x, 2));
  mean /= static_cast<double>(in.height()) * in.width();
  Image out = in;
  for (double& v : out.data()) v = std::clamp(factor * v + (1.0 - factor) * mean, 0.0, 1.0);
  return out;
}

std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  double h = 0.0;
  if (d > 0.0) {
    if (mx == r)
      h = (g - b) / d;
    else if (mx == g)
      h = 2.0 + (b - r) / d;
    else
      h = 4.0 + (r - g) / d;
    h /= 6.0;
    h -= std::floor(h);
  }
  return {h, mx > 0.0 ? d / mx : 0.0, mx};
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = (h - std::floor(h)) * 6.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Image hue_shift(const Image& in, double shift) {
  Image out(in.height(), in.width());
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x) {
      const auto hsv = rgb_to_hsv(in.at(y, x, 0), in.at(y, x, 1), in.at(y, x, 2));
      const auto rgb = hsv_to_rgb(hsv[0] + shift, hsv[1], hsv[2]);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = std::clamp(rgb[c], 0.0, 1.0);
    }
  return out;
}

}  // namespace

std::string to_string(TransformName name) { return kNames[static_cast<int>(name)]; }

TransformName parse_transform_name(const std::string& text) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (text == kNames[i]) return static_cast<TransformName>(i);
  throw UnsupportedParameter("unknown transform '" + text + "'");
}

TransformSpec TransformSpec::with_default(TransformName name) {
  switch (name) {
    case TransformName::wiener: return {name, 21};
    case TransformName::blur: return {name, 21};
    case TransformName::jpeg: return {name, 50};
    case TransformName::rotate90: return {name, 1};
    case TransformName::resize: return {name, 98};
    case TransformName::brightness: return {name, 2};
    case TransformName::contrast: return {name, 2};
    case TransformName::hue: return {name, 0.5};
    default: return {name, 0};
  }
}

TransformSpec TransformSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  TransformSpec spec = with_default(parse_transform_name(text.substr(0, colon)));
  if (colon != std::string::npos) {
    const std::string value = text.substr(colon + 1);
    std::size_t used = 0;
    try {
      spec.parameter = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != value.size())
      throw UnsupportedParameter("bad transform parameter in '" + text + "'");
  }
  return spec;
}

std::string TransformSpec::to_string() const {
  switch (name) {
    case TransformName::hflip:
    case TransformName::vflip:
    case TransformName::grayscale:
      return taa::to_string(name);
    default: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s:%g", taa::to_string(name).c_str(), parameter);
      return buf;
    }
  }
}

std::vector<TransformSpec> default_transform_suite() {
  std::vector<TransformSpec> suite;
  for (std::size_t i = 0; i < kNames.size(); ++i)
    suite.push_back(TransformSpec::with_default(static_cast<TransformName>(i)));
  return suite;
}

Image apply_transform(const Image& image, const TransformSpec& spec) {
  if (image.empty()) throw UnsupportedParameter("empty image");
  switch (spec.name) {
    case TransformName::hflip: return hflip(image);
    case TransformName::vflip: return vflip(image);
    case TransformName::wiener: return wiener(image, odd_window(spec));
    case TransformName::blur: return gaussian_blur(image, odd_window(spec));
    case TransformName::jpeg: {
      if (!is_integer(spec.parameter) || spec.parameter < 1 || spec.parameter > 100)
        throw UnsupportedParameter(spec.to_string() + ": quality must be an integer in 1..100");
      return jpeg_roundtrip(image, static_cast<int>(spec.parameter));
    }
    case TransformName::grayscale: return grayscale(image);
    case TransformName::rotate90: {
      Image out = image;
      for (int t = quarter_turns(spec); t > 0; --t) out = rotate_ccw(out);
      return out;
    }
    case TransformName::resize: {
      if (!is_integer(spec.parameter) || spec.parameter < 1 || spec.parameter > 1 << 14)
        throw UnsupportedParameter(spec.to_string() + ": size must be a positive integer");
      return resize_roundtrip(image, static_cast<int>(spec.parameter));
    }
    case TransformName::brightness:
      if (!std::isfinite(spec.parameter) || spec.parameter < 0)
        throw UnsupportedParameter(spec.to_string() + ": factor must be non-negative");
      return brightness(image, spec.parameter);
    case TransformName::contrast:
      if (!std::isfinite(spec.parameter) || spec.parameter < 0)
        throw UnsupportedParameter(spec.to_string() + ": factor must be non-negative");
      return contrast(image, spec.parameter);
    case TransformName::hue:
      if (!(spec.parameter >= -0.5 && spec.parameter <= 0.5))
        throw UnsupportedParameter(spec.to_string() + ": hue shift must lie in [-0.5, 0.5]");
      return hue_shift(image, spec.parameter);
  }
  throw UnsupportedParameter("unknown transform");
}

std::vector<int> transform_mask(const std::vector<int>& mask, int& height, int& width,
                                const TransformSpec& spec) {
  if (mask.size() != static_cast<std::size_t>(height) * width)
    throw DimensionMismatch("mask does not match the given shape");
  auto at = [&](const std::vector<int>& m, int w, int y, int x) {
    return m[static_cast<std::size_t>(y) * w + x];
  };
  std::vector<int> out(mask.size());
  switch (spec.name) {
    case TransformName::hflip:
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          out[static_cast<std::size_t>(y) * width + x] = at(mask, width, y, width - 1 - x);
      return out;
    case TransformName::vflip:
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          out[static_cast<std::size_t>(y) * width + x] = at(mask, width, height - 1 - y, x);
      return out;
    case TransformName::rotate90: {
      out = mask;
      for (int t = quarter_turns(spec); t > 0; --t) {
        std::vector<int> next(out.size());
        for (int i = 0; i < width; ++i)
          for (int j = 0; j < height; ++j)
            next[static_cast<std::size_t>(i) * height + j] = at(out, width, j, width - 1 - i);
        out = std::move(next);
        std::swap(height, width);
      }
      return out;
    }
    default:
      return mask;
  }
}

}  // namespace taa
