#include "hsrgan/nn/layers.hpp"

#include <cmath>

#include "hsrgan/core/error.hpp"

namespace hsrgan::nn {

using ag::Var;

template <typename T>
Tensor<T> randn(const Shape& shape, Rng& rng, double stddev) {
  Tensor<T> t(shape);
  for (auto& x : t.data()) x = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
std::vector<Var<T>> vars(const ParamList<T>& params) {
  std::vector<Var<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var);
  return out;
}

template <typename T, typename U>
void copy_params(const ParamList<T>& dst, const ParamList<U>& src) {
  if (dst.size() != src.size())
    throw ShapeError("parameter count mismatch: " + std::to_string(dst.size()) + " vs " +
                     std::to_string(src.size()));
  for (size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].var.shape() != src[i].var.shape())
      throw ShapeError("parameter mismatch at '" + dst[i].name + "' / '" + src[i].name + "'");
    Var<T> d = dst[i].var;
    if constexpr (std::is_same_v<T, U>) {
      d.mutable_value() = src[i].var.value();
    } else {
      d.mutable_value() = src[i].var.value().template cast<T>();
    }
  }
}

template <typename T>
Dense<T>::Dense(int64_t in, int64_t out, Rng& rng, double lr_mul_, double bias_init)
    : in_features(in), out_features(out), lr_mul(lr_mul_) {
  weight = Var<T>::parameter(randn<T>({out, in}, rng, 1.0 / lr_mul));
  bias = Var<T>::parameter(Tensor<T>({out}, static_cast<T>(bias_init / lr_mul)));
}

template <typename T>
Var<T> Dense<T>::operator()(const Var<T>& x) const {
  const double gain = lr_mul / std::sqrt(static_cast<double>(in_features));
  Var<T> y = ag::matmul(x, ag::scale(weight, gain), false, true);
  return y + ag::reshape(ag::scale(bias, lr_mul), Shape{1, out_features});
}

template <typename T>
void Dense<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
Conv<T>::Conv(int64_t in, int64_t out, int64_t k, Rng& rng)
    : in_channels(in), out_channels(out), kernel(k) {
  weight = Var<T>::parameter(randn<T>({out, in, k, k}, rng));
  bias = Var<T>::parameter(Tensor<T>({out}));
}

template <typename T>
Var<T> Conv<T>::operator()(const Var<T>& x) const {
  const double gain = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  return ag::conv2d(x, ag::scale(weight, gain)) + ag::reshape(bias, Shape{1, out_channels, 1, 1});
}

template <typename T>
void Conv<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
ModConv<T>::ModConv(int64_t in, int64_t out, int64_t k, int64_t style_dim, bool demod, Rng& rng)
    : in_channels(in), out_channels(out), kernel(k), demodulate(demod) {
  affine = Dense<T>(style_dim, in, rng, 1.0, 1.0);
  weight = Var<T>::parameter(randn<T>({out, in, k, k}, rng));
  bias = Var<T>::parameter(Tensor<T>({out}));
}

template <typename T>
Var<T> ModConv<T>::operator()(const Var<T>& x, const Var<T>& w) const {
  const int64_t b = w.dim(0);
  const double gain = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  Var<T> s = affine(w);
  Var<T> wt = ag::scale(weight, gain);
  Var<T> y = ag::conv2d(x * ag::reshape(s, Shape{b, in_channels, 1, 1}), wt);
  if (demodulate) {
    Var<T> wsq = ag::reshape(
        ag::sum_to(ag::reshape(wt * wt, Shape{out_channels, in_channels, kernel * kernel}),
                   Shape{out_channels, in_channels, 1}),
        Shape{out_channels, in_channels});
    Var<T> d = ag::pow_scalar(ag::add_scalar(ag::matmul(s * s, wsq, false, true), 1e-8), -0.5);
    y = y * ag::reshape(d, Shape{b, out_channels, 1, 1});
  }
  return y + ag::reshape(bias, Shape{1, out_channels, 1, 1});
}

template <typename T>
void ModConv<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  affine.collect(prefix + ".affine", out);
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
Var<T> row_mean(const Var<T>& x) {
  return ag::scale(ag::sum_to(x, Shape{x.dim(0), 1}), 1.0 / static_cast<double>(x.dim(1)));
}

#define HSRGAN_INSTANTIATE_LAYERS(T)                                     \
  template Tensor<T> randn<T>(const Shape&, Rng&, double);               \
  template std::vector<Var<T>> vars(const ParamList<T>&);                \
  template class Dense<T>;                                               \
  template class Conv<T>;                                                \
  template class ModConv<T>;                                             \
  template Var<T> row_mean(const Var<T>&);

HSRGAN_INSTANTIATE_LAYERS(float)
HSRGAN_INSTANTIATE_LAYERS(double)

template void copy_params(const ParamList<float>&, const ParamList<float>&);
template void copy_params(const ParamList<double>&, const ParamList<double>&);
template void copy_params(const ParamList<double>&, const ParamList<float>&);
template void copy_params(const ParamList<float>&, const ParamList<double>&);

}  // namespace hsrgan::nn
