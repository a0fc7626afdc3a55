#pragma once

#include <functional>
#include <vector>

#include "hsrgan/autograd/var.hpp"
#include "hsrgan/core/rng.hpp"
#include <json.hpp>

namespace hsrgan::reg {

struct PLRState {
  double a = 0.0;  // running mean of observed path lengths
  double decay = 0.99;
  double weight = 2.0;
  int interval = 4;

  void validate() const;
  nlohmann::json to_json() const;
  static PLRState from_json(const nlohmann::json& j);
};

struct R1Config {
  double gamma = 1.0;
  int interval = 16;

  void validate() const;
  nlohmann::json to_json() const;
  static R1Config from_json(const nlohmann::json& j);
};

// Lazy schedule: a regularizer runs on steps 0, interval, 2*interval, ...
inline bool due(int64_t step, int interval) { return interval > 0 && step % interval == 0; }

template <typename T>
struct PLRResult {
  ag::Var<T> penalty;  // mean (l - a)^2 with the incoming a; zero when skipped
  std::vector<double> lengths;
  double mean_length = 0.0;
  PLRState state;  // updated running mean; unchanged when skipped
  bool skipped = false;
};

template <typename T>
using GeneratorFn = std::function<ag::Var<T>(const ag::Var<T>&)>;

// Path lengths |J_w^T y| with y ~ N(0, 1) / resolution, where resolution is
// the image height. `w` is [B, ...]; the callable maps it to [B, C, H, W].
template <typename T>
PLRResult<T> path_length_penalty(const ag::Var<T>& w, const GeneratorFn<T>& generator, const PLRState& state,
                                 Rng& rng);

// Same with a caller-supplied probe y (image-shaped, already scaled).
template <typename T>
PLRResult<T> path_length_penalty(const ag::Var<T>& w, const GeneratorFn<T>& generator, const PLRState& state,
                                 const Tensor<T>& y);

template <typename T>
struct R1Result {
  ag::Var<T> penalty;  // zero when skipped
  double mean_squared_norm = 0.0;
  bool skipped = false;
};

template <typename T>
using DiscriminatorFn = std::function<ag::Var<T>(const ag::Var<T>&)>;

// (gamma / 2) * mean over the batch of |grad_x D(x)|^2.
template <typename T>
R1Result<T> r1_penalty(const Tensor<T>& real, const DiscriminatorFn<T>& discriminator, double gamma);

}  // namespace hsrgan::reg
