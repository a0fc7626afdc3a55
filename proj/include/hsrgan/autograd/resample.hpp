#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace hsrgan::ag {

// Separable linear map between spatial grids: out = R_rows * plane * R_cols^T,
// stored sparsely. Covers nearest upsampling, average pooling, bilinear resize
// and global pooling; the adjoint is the transposed map.
struct Resampler {
  using Taps = std::vector<std::vector<std::pair<int64_t, double>>>;

  int64_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  Taps rows;  // out_h entries over input rows
  Taps cols;  // out_w entries over input columns

  Resampler transposed() const;

  static Resampler nearest_upsample(int64_t h, int64_t w, int64_t factor);
  static Resampler average_pool(int64_t h, int64_t w, int64_t factor);
  // Half-pixel-centre bilinear interpolation with edge clamping.
  static Resampler bilinear(int64_t in_h, int64_t in_w, int64_t out_h, int64_t out_w);
  static Resampler global_average(int64_t h, int64_t w);
};

}  // namespace hsrgan::ag
