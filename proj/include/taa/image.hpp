#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace taa {

// RGB image with channel values in [0, 1], stored row-major as H x W x 3.
class Image {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0);
  Image(int height, int width, std::vector<double> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  std::span<double> data() { return pixels_; }
  std::span<const double> data() const { return pixels_; }
  const std::vector<double>& pixels() const { return pixels_; }

  // True iff every value lies on the k/255 grid (and inside [0, 1]).
  bool quantized() const;
  bool in_unit_range() const;

  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

double linf_distance(const Image& a, const Image& b);

// Maps every channel to round(255 v) / 255 with half-away-from-zero rounding.
// Values are clipped to [0, 1] first.
Image quantize(const Image& image);

// 8-bit RGB PNG with optional tEXt key/value chunks.
void write_png(const Image& image, const std::filesystem::path& path,
               const std::vector<std::pair<std::string, std::string>>& text = {});
Image read_png(const std::filesystem::path& path);

// Writes quantize(image) as PNG and returns the reloaded tensor.
Image quantize_and_roundtrip(const Image& image,
                             const std::filesystem::path& path);

}  // namespace taa
