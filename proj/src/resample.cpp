#include "taa/resample.hpp"

#include <algorithm>
#include <cmath>

namespace taa {

namespace {

// Keys cubic convolution kernel with a = -0.75.
double cubic(double x) {
  constexpr double a = -0.75;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

}  // namespace

std::vector<double> bicubic_matrix(int out_size, int in_size) {
  std::vector<double> m(static_cast<std::size_t>(out_size) * in_size, 0.0);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double src = (o + 0.5) * scale - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double t = src - base;
    for (int k = -1; k <= 2; ++k) {
      const int idx = std::clamp(base + k, 0, in_size - 1);
      m[static_cast<std::size_t>(o) * in_size + idx] += cubic(k - t);
    }
  }
  return m;
}

std::vector<double> bilinear_matrix(int out_size, int in_size) {
  std::vector<double> m(static_cast<std::size_t>(out_size) * in_size, 0.0);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double src = std::max(0.0, (o + 0.5) * scale - 0.5);
    const int i0 = std::min(static_cast<int>(std::floor(src)), in_size - 1);
    const int i1 = std::min(i0 + 1, in_size - 1);
    const double t = src - i0;
    m[static_cast<std::size_t>(o) * in_size + i0] += 1.0 - t;
    m[static_cast<std::size_t>(o) * in_size + i1] += t;
  }
  return m;
}

std::vector<double> resample_separable(const std::vector<double>& grid, int h,
                                       int w, int channels,
                                       const std::vector<double>& ry, int out_h,
                                       const std::vector<double>& rx, int out_w) {
  // Columns first: [h x out_w x C].
  std::vector<double> mid(static_cast<std::size_t>(h) * out_w * channels, 0.0);
  for (int r = 0; r < h; ++r)
    for (int x = 0; x < out_w; ++x) {
      double* dst = mid.data() + (static_cast<std::size_t>(r) * out_w + x) * channels;
      for (int c = 0; c < w; ++c) {
        const double wt = rx[static_cast<std::size_t>(x) * w + c];
        if (wt == 0.0) continue;
        const double* src = grid.data() + (static_cast<std::size_t>(r) * w + c) * channels;
        for (int ch = 0; ch < channels; ++ch) dst[ch] += wt * src[ch];
      }
    }
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * channels, 0.0);
  for (int y = 0; y < out_h; ++y)
    for (int r = 0; r < h; ++r) {
      const double wt = ry[static_cast<std::size_t>(y) * h + r];
      if (wt == 0.0) continue;
      const double* src = mid.data() + static_cast<std::size_t>(r) * out_w * channels;
      double* dst = out.data() + static_cast<std::size_t>(y) * out_w * channels;
      for (int i = 0; i < out_w * channels; ++i) dst[i] += wt * src[i];
    }
  return out;
}

std::vector<double> resample_separable_transpose(
    const std::vector<double>& out_grid, int out_h, int out_w, int channels,
    const std::vector<double>& ry, int h, const std::vector<double>& rx, int w) {
  std::vector<double> mid(static_cast<std::size_t>(h) * out_w * channels, 0.0);
  for (int y = 0; y < out_h; ++y)
    for (int r = 0; r < h; ++r) {
      const double wt = ry[static_cast<std::size_t>(y) * h + r];
      if (wt == 0.0) continue;
      const double* src = out_grid.data() + static_cast<std::size_t>(y) * out_w * channels;
      double* dst = mid.data() + static_cast<std::size_t>(r) * out_w * channels;
      for (int i = 0; i < out_w * channels; ++i) dst[i] += wt * src[i];
    }
  std::vector<double> grid(static_cast<std::size_t>(h) * w * channels, 0.0);
  for (int r = 0; r < h; ++r)
    for (int x = 0; x < out_w; ++x) {
      const double* src = mid.data() + (static_cast<std::size_t>(r) * out_w + x) * channels;
      for (int c = 0; c < w; ++c) {
        const double wt = rx[static_cast<std::size_t>(x) * w + c];
        if (wt == 0.0) continue;
        double* dst = grid.data() + (static_cast<std::size_t>(r) * w + c) * channels;
        for (int ch = 0; ch < channels; ++ch) dst[ch] += wt * src[ch];
      }
    }
  return grid;
}

}  // namespace taa
