#include "hsrgan/nn/adam.hpp"

#include <cmath>

#include "hsrgan/core/error.hpp"
#include "hsrgan/kernels/kernels.hpp"

namespace hsrgan::nn {

template <typename T>
Adam<T>::Adam(ParamList<T> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

template <typename T>
void Adam<T>::step(const std::vector<ag::Var<T>>& grads) {
  step(grads, options_.lr);
}

template <typename T>
void Adam<T>::step(const std::vector<ag::Var<T>>& grads, double lr) {
  if (grads.size() != params_.size()) throw ShapeError("Adam::step: gradient count mismatch");
  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  const auto& k = kernels::table<T>();
  for (size_t i = 0; i < params_.size(); ++i) {
    ag::Var<T> p = params_[i].var;
    const Tensor<T>& g = grads[i].value();
    if (g.shape() != p.shape()) throw ShapeError("Adam::step: gradient shape mismatch for " + params_[i].name);
    k.adam(p.mutable_value().ptr(), g.ptr(), m_[i].ptr(), v_[i].ptr(), p.numel(), static_cast<T>(lr),
           static_cast<T>(options_.beta1), static_cast<T>(options_.beta2), static_cast<T>(options_.eps),
           static_cast<T>(bc1), static_cast<T>(bc2));
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace hsrgan::nn
