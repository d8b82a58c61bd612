#pragma once

#include <vector>

namespace taa {

// Dense 1-D interpolation operator [out_size x in_size] (row-major) using
// half-pixel centers and edge clamping.
std::vector<double> bicubic_matrix(int out_size, int in_size);
std::vector<double> bilinear_matrix(int out_size, int in_size);

// Applies row operator Ry [H x h] and column operator Rx [W x w] to a
// channels-last grid [h x w x C]; result is [H x W x C].
std::vector<double> resample_separable(const std::vector<double>& grid, int h,
                                       int w, int channels,
                                       const std::vector<double>& ry, int out_h,
                                       const std::vector<double>& rx, int out_w);

// Transpose of resample_separable.
std::vector<double> resample_separable_transpose(
    const std::vector<double>& out_grid, int out_h, int out_w, int channels,
    const std::vector<double>& ry, int h, const std::vector<double>& rx, int w);

}  // namespace taa
