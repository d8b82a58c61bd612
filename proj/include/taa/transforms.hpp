#pragma once

#include <string>
#include <vector>

#include "taa/image.hpp"

namespace taa {

enum class TransformName {
  hflip,
  vflip,
  wiener,
  blur,
  jpeg,
  grayscale,
  rotate90,
  resize,
  brightness,
  contrast,
  hue
};

std::string to_string(TransformName name);
TransformName parse_transform_name(const std::string& text);

// Deterministic image distortion. `parameter` meaning per transform:
//   wiener, blur: odd window size; jpeg: quality 1..100; rotate90: number of
//   counter-clockwise quarter turns; resize: intermediate square side;
//   brightness, contrast: non-negative factor; hue: shift in [-0.5, 0.5].
// The flips and grayscale ignore it.
struct TransformSpec {
  TransformName name = TransformName::hflip;
  double parameter = 0.0;

  static TransformSpec with_default(TransformName name);
  // "name" or "name:parameter".
  static TransformSpec parse(const std::string& text);
  std::string to_string() const;
};

// Every transform at its default parameter.
std::vector<TransformSpec> default_transform_suite();

// Throws UnsupportedParameter.
Image apply_transform(const Image& image, const TransformSpec& spec);

// Geometric counterpart for H x W label masks (flips and rotations move
// labels; photometric transforms and resize leave them unchanged).
// `height` and `width` are updated to the output shape.
std::vector<int> transform_mask(const std::vector<int>& mask, int& height,
                                int& width, const TransformSpec& spec);

}  // namespace taa
