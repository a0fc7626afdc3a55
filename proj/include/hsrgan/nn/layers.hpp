#pragma once
// Equalized-learning-rate layers. Weights are stored at unit scale and
// multiplied by lr_mul / sqrt(fan_in) at run time.

#include <string>
#include <vector>

#include "hsrgan/autograd/ops.hpp"
#include "hsrgan/core/rng.hpp"

namespace hsrgan::nn {

template <typename T>
struct NamedParam {
  std::string name;
  ag::Var<T> var;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
Tensor<T> randn(const Shape& shape, Rng& rng, double stddev = 1.0);

template <typename T>
std::vector<ag::Var<T>> vars(const ParamList<T>& params);

// Copies values by name and shape; throws ShapeError on any mismatch.
template <typename T, typename U>
void copy_params(const ParamList<T>& dst, const ParamList<U>& src);

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(int64_t in, int64_t out, Rng& rng, double lr_mul = 1.0, double bias_init = 0.0);

  // [B, in] -> [B, out]
  ag::Var<T> operator()(const ag::Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  int64_t in_features = 0;
  int64_t out_features = 0;
  double lr_mul = 1.0;
  ag::Var<T> weight;  // [out, in]
  ag::Var<T> bias;    // [out]
};

template <typename T>
class Conv {
 public:
  Conv() = default;
  Conv(int64_t in, int64_t out, int64_t kernel, Rng& rng);

  ag::Var<T> operator()(const ag::Var<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kernel = 1;
  ag::Var<T> weight;  // [out, in, k, k]
  ag::Var<T> bias;    // [out]
};

// Style-modulated convolution. With demodulation every output channel is
// rescaled to unit expected magnitude, which is the same as normalizing the
// per-sample modulated weights.
template <typename T>
class ModConv {
 public:
  ModConv() = default;
  ModConv(int64_t in, int64_t out, int64_t kernel, int64_t style_dim, bool demodulate, Rng& rng);

  // x [B, in, H, W], w [B, style_dim] -> [B, out, H, W] (bias added, no activation)
  ag::Var<T> operator()(const ag::Var<T>& x, const ag::Var<T>& w) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kernel = 1;
  bool demodulate = true;
  Dense<T> affine;
  ag::Var<T> weight;
  ag::Var<T> bias;
};

// Per-row mean over the trailing dimension: [B, D] -> [B, 1].
template <typename T>
ag::Var<T> row_mean(const ag::Var<T>& x);

}  // namespace hsrgan::nn
