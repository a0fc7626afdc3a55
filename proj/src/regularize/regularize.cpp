#include "hsrgan/regularize/regularize.hpp"

#include <cmath>

#include "hsrgan/autograd/ops.hpp"
#include "hsrgan/core/error.hpp"
#include "hsrgan/core/log.hpp"

namespace hsrgan::reg {

using ag::Var;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* what) {
  if (!j.is_object()) throw SchemaError(std::string(what) + " must be an object");
  for (const auto& [k, _] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw SchemaError(std::string("unknown ") + what + " key '" + k + "'");
  }
}

// Per-sample Euclidean norm of g over every non-batch axis, as a [B, 1] Var.
template <typename T>
Var<T> row_norms_squared(const Var<T>& g) {
  const int64_t b = g.dim(0);
  Var<T> flat = ag::reshape(g * g, {b, g.numel() / b});
  return ag::sum_to(flat, {b, 1});
}

}  // namespace

void PLRState::validate() const {
  if (!(a >= 0.0) || !std::isfinite(a)) throw RangeError("path length mean must be finite and >= 0");
  if (!(decay >= 0.0 && decay <= 1.0)) throw RangeError("path length decay must lie in [0, 1]");
  if (!(weight >= 0.0)) throw RangeError("path length weight must be >= 0");
  if (interval < 1) throw RangeError("path length interval must be >= 1");
}

json PLRState::to_json() const { return {{"a", a}, {"decay", decay}, {"weight", weight}, {"interval", interval}}; }

PLRState PLRState::from_json(const json& j) {
  reject_unknown(j, {"a", "decay", "weight", "interval"}, "plr");
  PLRState s;
  s.a = j.value("a", s.a);
  s.decay = j.value("decay", s.decay);
  s.weight = j.value("weight", s.weight);
  s.interval = j.value("interval", s.interval);
  s.validate();
  return s;
}

void R1Config::validate() const {
  if (!(gamma >= 0.0)) throw RangeError("r1 gamma must be >= 0");
  if (interval < 1) throw RangeError("r1 interval must be >= 1");
}

json R1Config::to_json() const { return {{"gamma", gamma}, {"interval", interval}}; }

R1Config R1Config::from_json(const json& j) {
  reject_unknown(j, {"gamma", "interval"}, "r1");
  R1Config c;
  c.gamma = j.value("gamma", c.gamma);
  c.interval = j.value("interval", c.interval);
  c.validate();
  return c;
}

template <typename T>
PLRResult<T> path_length_penalty(const Var<T>& w, const GeneratorFn<T>& generator, const PLRState& state,
                                 Rng& rng) {
  ag::EnableGradGuard record;
  Var<T> probe_w = w.requires_grad() ? w : Var<T>::parameter(w.value());
  Var<T> image = generator(probe_w);
  if (image.shape().size() != 4) throw ShapeError("generator output must be [B, C, H, W]");
  Tensor<T> y(image.shape());
  const double scale = 1.0 / static_cast<double>(image.dim(2));
  for (auto& v : y.data()) v = static_cast<T>(rng.normal() * scale);
  // Reuse the forward pass already built.
  return path_length_penalty<T>(probe_w, [&](const Var<T>&) { return image; }, state, y);
}

template <typename T>
PLRResult<T> path_length_penalty(const Var<T>& w, const GeneratorFn<T>& generator, const PLRState& state,
                                 const Tensor<T>& y) {
  state.validate();
  ag::EnableGradGuard record;
  Var<T> probe_w = w.requires_grad() ? w : Var<T>::parameter(w.value());
  Var<T> image = generator(probe_w);
  if (image.shape() != y.shape()) throw ShapeError("path length probe shape mismatch");
  Var<T> projected = ag::sum(image * Var<T>::constant(y));
  Var<T> g = ag::grad(projected, {probe_w}, Var<T>(), true)[0];

  PLRResult<T> out;
  out.state = state;
  const int64_t b = w.dim(0);
  Var<T> sq = row_norms_squared(g);
  out.lengths.resize(static_cast<size_t>(b));
  bool finite = true;
  double total = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    const double l = std::sqrt(static_cast<double>(sq.value()[i]));
    out.lengths[static_cast<size_t>(i)] = l;
    finite = finite && std::isfinite(l);
    total += l;
  }
  if (!finite) {
    warn("path length gradient is not finite; regularization step skipped");
    out.skipped = true;
    out.penalty = Var<T>::scalar(T(0));
    return out;
  }
  out.mean_length = total / static_cast<double>(b);
  Var<T> lengths = ag::pow_scalar(sq, 0.5);
  Var<T> deviation = ag::add_scalar(lengths, -state.a);
  out.penalty = ag::mean(deviation * deviation);
  out.state.a = state.decay * state.a + (1.0 - state.decay) * out.mean_length;
  return out;
}

template <typename T>
R1Result<T> r1_penalty(const Tensor<T>& real, const DiscriminatorFn<T>& discriminator, double gamma) {
  if (!(gamma >= 0.0)) throw RangeError("r1 gamma must be >= 0");
  R1Result<T> out;
  if (gamma == 0.0) {
    out.penalty = Var<T>::scalar(T(0));
    return out;
  }
  ag::EnableGradGuard record;
  Var<T> x = Var<T>::parameter(real);
  Var<T> scores = discriminator(x);
  Var<T> g = ag::grad(ag::sum(scores), {x}, Var<T>(), true)[0];
  Var<T> sq = row_norms_squared(g);
  double total = 0.0;
  for (T v : sq.value().data()) total += static_cast<double>(v);
  if (!std::isfinite(total)) {
    warn("r1 gradient is not finite; regularization step skipped");
    out.skipped = true;
    out.penalty = Var<T>::scalar(T(0));
    return out;
  }
  out.mean_squared_norm = total / static_cast<double>(real.dim(0));
  out.penalty = ag::scale(ag::mean(sq), gamma / 2.0);
  return out;
}

#define HSRGAN_INSTANTIATE_REG(T)                                                                          \
  template PLRResult<T> path_length_penalty<T>(const Var<T>&, const GeneratorFn<T>&, const PLRState&, Rng&); \
  template PLRResult<T> path_length_penalty<T>(const Var<T>&, const GeneratorFn<T>&, const PLRState&,       \
                                               const Tensor<T>&);                                          \
  template R1Result<T> r1_penalty<T>(const Tensor<T>&, const DiscriminatorFn<T>&, double);

HSRGAN_INSTANTIATE_REG(float)
HSRGAN_INSTANTIATE_REG(double)

}  // namespace hsrgan::reg
