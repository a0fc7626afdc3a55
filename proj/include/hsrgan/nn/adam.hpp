#pragma once

#include <vector>

#include "hsrgan/nn/layers.hpp"

namespace hsrgan::nn {

struct AdamOptions {
  double lr = 2.5e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(ParamList<T> params, AdamOptions options);

  // grads[i] belongs to params()[i]; updates parameter values in place.
  void step(const std::vector<ag::Var<T>>& grads);
  void step(const std::vector<ag::Var<T>>& grads, double lr);

  const ParamList<T>& params() const { return params_; }
  const AdamOptions& options() const { return options_; }
  int64_t steps() const { return steps_; }
  void set_steps(int64_t steps) { steps_ = steps; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

 private:
  ParamList<T> params_;
  AdamOptions options_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  int64_t steps_ = 0;
};

}  // namespace hsrgan::nn
