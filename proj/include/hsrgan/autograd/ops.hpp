#pragma once

#include <memory>
#include <vector>

#include "hsrgan/autograd/resample.hpp"
#include "hsrgan/autograd/var.hpp"

namespace hsrgan::ag {

// Shape of a broadcast between two shapes (right-aligned, numpy rules).
Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> neg(const Var<T>& a);
template <typename T> Var<T> scale(const Var<T>& a, double factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, double value);
template <typename T> Var<T> pow_scalar(const Var<T>& a, double exponent);
template <typename T> Var<T> sigmoid(const Var<T>& a);
// log(1 + exp(a)), computed stably.
template <typename T> Var<T> softplus(const Var<T>& a);
template <typename T> Var<T> leaky_relu(const Var<T>& a, double slope = 0.2, double gain = 1.0);
template <typename T> Var<T> clamp(const Var<T>& a, double lo, double hi);

template <typename T> Var<T> sum_to(const Var<T>& a, const Shape& shape);
template <typename T> Var<T> broadcast_to(const Var<T>& a, const Shape& shape);
template <typename T> Var<T> sum(const Var<T>& a);   // -> shape {}
template <typename T> Var<T> mean(const Var<T>& a);  // -> shape {}
template <typename T> Var<T> reshape(const Var<T>& a, const Shape& shape);
template <typename T> Var<T> detach(const Var<T>& a);

// 2-D matrix product op(a) * op(b).
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false);

// Stride-1 convolution with "same" zero padding; x [B,C,H,W], w [O,C,k,k], k odd.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& w);
// Adjoint of conv2d with respect to its input: g [B,O,H,W] -> [B,C,H,W].
template <typename T> Var<T> conv2d_input_grad(const Var<T>& g, const Var<T>& w);
// Adjoint of conv2d with respect to its weight: -> [O,C,k,k].
template <typename T> Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& g, int64_t k);

template <typename T>
Var<T> resample(const Var<T>& x, std::shared_ptr<const Resampler> map);
template <typename T> Var<T> upsample2x(const Var<T>& x);
template <typename T> Var<T> avg_pool2x(const Var<T>& x);
template <typename T> Var<T> bilinear_resize(const Var<T>& x, int64_t out_h, int64_t out_w);
// [B,C,H,W] -> [B,C]
template <typename T> Var<T> global_avg_pool(const Var<T>& x);

// Channel (dim 1) concatenation and its adjoints.
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> slice_channels(const Var<T>& a, int64_t start, int64_t length);
template <typename T> Var<T> pad_channels(const Var<T>& a, int64_t start, int64_t total);

// Per-sample horizontal flip followed by an integer translation with zero fill.
struct SpatialJitter {
  bool flip = false;
  int dx = 0;
  int dy = 0;
};

template <typename T>
Var<T> spatial_jitter(const Var<T>& x, std::shared_ptr<const std::vector<SpatialJitter>> params,
                      bool adjoint = false);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a) { return neg(a); }

}  // namespace hsrgan::ag
