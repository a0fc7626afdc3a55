#include "hsrgan/autograd/resample.hpp"

#include <algorithm>
#include <cmath>

#include "hsrgan/core/error.hpp"

namespace hsrgan::ag {

namespace {

Resampler::Taps transpose_taps(const Resampler::Taps& taps, int64_t in_size) {
  Resampler::Taps out(static_cast<size_t>(in_size));
  for (size_t o = 0; o < taps.size(); ++o)
    for (const auto& [i, w] : taps[o]) out[static_cast<size_t>(i)].emplace_back(o, w);
  return out;
}

Resampler::Taps bilinear_taps(int64_t in, int64_t out) {
  Resampler::Taps taps(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int64_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    if (i1 == i0 || frac == 0.0) {
      taps[o].emplace_back(i0, 1.0);
    } else {
      taps[o].emplace_back(i0, 1.0 - frac);
      taps[o].emplace_back(i1, frac);
    }
  }
  return taps;
}

}  // namespace

Resampler Resampler::transposed() const {
  Resampler t;
  t.in_h = out_h;
  t.in_w = out_w;
  t.out_h = in_h;
  t.out_w = in_w;
  t.rows = transpose_taps(rows, in_h);
  t.cols = transpose_taps(cols, in_w);
  return t;
}

Resampler Resampler::nearest_upsample(int64_t h, int64_t w, int64_t factor) {
  if (factor < 1) throw RangeError("upsample factor must be >= 1");
  Resampler r;
  r.in_h = h;
  r.in_w = w;
  r.out_h = h * factor;
  r.out_w = w * factor;
  r.rows.resize(static_cast<size_t>(r.out_h));
  r.cols.resize(static_cast<size_t>(r.out_w));
  for (int64_t o = 0; o < r.out_h; ++o) r.rows[o].emplace_back(o / factor, 1.0);
  for (int64_t o = 0; o < r.out_w; ++o) r.cols[o].emplace_back(o / factor, 1.0);
  return r;
}

Resampler Resampler::average_pool(int64_t h, int64_t w, int64_t factor) {
  if (factor < 1 || h % factor || w % factor)
    throw RangeError("average pool factor must divide the spatial size");
  Resampler r;
  r.in_h = h;
  r.in_w = w;
  r.out_h = h / factor;
  r.out_w = w / factor;
  r.rows.resize(static_cast<size_t>(r.out_h));
  r.cols.resize(static_cast<size_t>(r.out_w));
  const double wt = 1.0 / static_cast<double>(factor);
  for (int64_t o = 0; o < r.out_h; ++o)
    for (int64_t f = 0; f < factor; ++f) r.rows[o].emplace_back(o * factor + f, wt);
  for (int64_t o = 0; o < r.out_w; ++o)
    for (int64_t f = 0; f < factor; ++f) r.cols[o].emplace_back(o * factor + f, wt);
  return r;
}

Resampler Resampler::bilinear(int64_t in_h, int64_t in_w, int64_t out_h, int64_t out_w) {
  if (in_h < 1 || in_w < 1 || out_h < 1 || out_w < 1) throw RangeError("empty resample grid");
  Resampler r;
  r.in_h = in_h;
  r.in_w = in_w;
  r.out_h = out_h;
  r.out_w = out_w;
  r.rows = bilinear_taps(in_h, out_h);
  r.cols = bilinear_taps(in_w, out_w);
  return r;
}

Resampler Resampler::global_average(int64_t h, int64_t w) {
  Resampler r;
  r.in_h = h;
  r.in_w = w;
  r.out_h = 1;
  r.out_w = 1;
  r.rows.resize(1);
  r.cols.resize(1);
  for (int64_t i = 0; i < h; ++i) r.rows[0].emplace_back(i, 1.0 / static_cast<double>(h));
  for (int64_t j = 0; j < w; ++j) r.cols[0].emplace_back(j, 1.0 / static_cast<double>(w));
  return r;
}

}  // namespace hsrgan::ag
