#include "hsrgan/model/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "hsrgan/core/error.hpp"

namespace hsrgan::model {

using ag::Var;
using nlohmann::json;

void DiscriminatorConfig::validate() const {
  if (resolution < 8 || (resolution & (resolution - 1)) != 0)
    throw ConfigError("discriminator resolution must be a power of two >= 8");
  if (base_channels < 1 || max_channels < 1) throw ConfigError("channel widths must be positive");
  if (mbstd_group < 1) throw ConfigError("mbstd_group must be >= 1");
}

int DiscriminatorConfig::channels_at(int r) const {
  return std::min(max_channels, base_channels * (resolution / r));
}

json DiscriminatorConfig::to_json() const {
  return {{"resolution", resolution},
          {"base_channels", base_channels},
          {"max_channels", max_channels},
          {"mbstd_group", mbstd_group}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const json& j) {
  DiscriminatorConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "resolution") c.resolution = v.get<int>();
    else if (key == "base_channels") c.base_channels = v.get<int>();
    else if (key == "max_channels") c.max_channels = v.get<int>();
    else if (key == "mbstd_group") c.mbstd_group = v.get<int>();
    else throw SchemaError("unknown discriminator key '" + key + "'");
  }
  return c;
}

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int res = config_.resolution;
  from_rgb_ = nn::Conv<T>(3, config_.channels_at(res), 1, rng);
  for (int r = res; r > 4; r /= 2)
    blocks_.push_back({r, nn::Conv<T>(config_.channels_at(r), config_.channels_at(r / 2), 3, rng)});
  const int64_t c4 = config_.channels_at(4);
  final_conv_ = nn::Conv<T>(c4 + 1, c4, 3, rng);
  fc_ = nn::Dense<T>(c4 * 16, c4, rng);
  out_ = nn::Dense<T>(c4, 1, rng);
}

template <typename T>
Var<T> Discriminator<T>::operator()(const Var<T>& images) const {
  const int64_t res = config_.resolution;
  if (images.value().rank() != 4 || images.dim(1) != 3 || images.dim(2) != res || images.dim(3) != res)
    throw ShapeError("discriminator expects [B, 3, " + std::to_string(res) + ", " + std::to_string(res) +
                     "], got " + to_string(images.shape()));
  const double gain = std::numbers::sqrt2;
  Var<T> x = ag::leaky_relu(from_rgb_(images), 0.2, gain);
  for (const auto& b : blocks_) x = ag::avg_pool2x(ag::leaky_relu(b.conv(x), 0.2, gain));
  x = minibatch_stddev(x, config_.mbstd_group);
  x = ag::leaky_relu(final_conv_(x), 0.2, gain);
  x = ag::reshape(x, Shape{x.dim(0), x.dim(1) * 16});
  x = ag::leaky_relu(fc_(x), 0.2, gain);
  return out_(x);
}

template <typename T>
nn::ParamList<T> Discriminator<T>::parameters() const {
  nn::ParamList<T> p;
  from_rgb_.collect("from_rgb", p);
  for (const auto& b : blocks_) b.conv.collect("b" + std::to_string(b.resolution) + ".conv", p);
  final_conv_.collect("b4.conv", p);
  fc_.collect("b4.fc", p);
  out_.collect("out", p);
  return p;
}

template <typename T>
Var<T> minibatch_stddev(const Var<T>& x, int group) {
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t g = std::min<int64_t>(group, b);
  while (b % g != 0) --g;
  const int64_t m = b / g, chw = c * h * w;
  Var<T> xr = ag::reshape(x, Shape{g, m, chw});
  Var<T> mu = ag::scale(ag::sum_to(xr, Shape{1, m, chw}), 1.0 / static_cast<double>(g));
  Var<T> d = xr - mu;
  Var<T> var = ag::scale(ag::sum_to(d * d, Shape{1, m, chw}), 1.0 / static_cast<double>(g));
  Var<T> sd = ag::pow_scalar(ag::add_scalar(var, 1e-8), 0.5);
  Var<T> s = ag::scale(ag::sum_to(sd, Shape{1, m, 1}), 1.0 / static_cast<double>(chw));
  Var<T> tiled = ag::reshape(ag::broadcast_to(s, Shape{g, m, h * w}), Shape{b, 1, h, w});
  return ag::concat_channels(x, tiled);
}

void AugmentConfig::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment probability must lie in [0, 1]");
}

json AugmentConfig::to_json() const {
  return {{"p", p}, {"flip", flip}, {"translate", translate}, {"brightness", brightness}};
}

AugmentConfig AugmentConfig::from_json(const json& j) {
  AugmentConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "p") c.p = v.get<double>();
    else if (key == "flip") c.flip = v.get<bool>();
    else if (key == "translate") c.translate = v.get<bool>();
    else if (key == "brightness") c.brightness = v.get<bool>();
    else throw SchemaError("unknown augment key '" + key + "'");
  }
  return c;
}

AugmentDraw draw_augment(int64_t batch, int resolution, const AugmentConfig& config, Rng& rng) {
  config.validate();
  const int max_shift = resolution / 8;
  AugmentDraw d;
  const auto n = static_cast<size_t>(batch);
  d.flipped.assign(n, false);
  d.translated.assign(n, false);
  d.brightened.assign(n, false);
  d.dx.assign(n, 0);
  d.dy.assign(n, 0);
  d.brightness.assign(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    if (config.flip && rng.bernoulli(config.p)) d.flipped[i] = true;
    if (config.translate && rng.bernoulli(config.p)) {
      d.translated[i] = true;
      d.dx[i] = static_cast<int>(rng.below(2 * max_shift + 1)) - max_shift;
      d.dy[i] = static_cast<int>(rng.below(2 * max_shift + 1)) - max_shift;
    }
    if (config.brightness && rng.bernoulli(config.p)) {
      d.brightened[i] = true;
      d.brightness[i] = rng.uniform(-0.2, 0.2);
    }
  }
  return d;
}

template <typename T>
Var<T> apply_augment(const Var<T>& images, const AugmentDraw& draw) {
  const int64_t b = images.dim(0);
  if (static_cast<int64_t>(draw.flipped.size()) != b) throw ShapeError("augment draw does not match batch size");
  Var<T> x = images;
  const bool any_spatial = std::any_of(draw.flipped.begin(), draw.flipped.end(), [](bool v) { return v; }) ||
                           std::any_of(draw.translated.begin(), draw.translated.end(), [](bool v) { return v; });
  if (any_spatial) {
    auto params = std::make_shared<std::vector<ag::SpatialJitter>>(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) (*params)[i] = {draw.flipped[i], draw.dx[i], draw.dy[i]};
    x = ag::spatial_jitter(x, std::shared_ptr<const std::vector<ag::SpatialJitter>>(params));
  }
  if (std::any_of(draw.brightened.begin(), draw.brightened.end(), [](bool v) { return v; })) {
    Tensor<T> shift({b, 1, 1, 1}), mask({b, 1, 1, 1});
    for (int64_t i = 0; i < b; ++i) {
      shift[i] = static_cast<T>(draw.brightness[i]);
      mask[i] = draw.brightened[i] ? T(1) : T(0);
    }
    Tensor<T> keep = mask;
    for (auto& v : keep.data()) v = T(1) - v;
    Var<T> bright = ag::clamp(x + Var<T>::constant(shift), -1.0, 1.0);
    x = bright * Var<T>::constant(mask) + x * Var<T>::constant(keep);
  }
  return x;
}

template <typename T>
Var<T> augment(const Var<T>& images, const AugmentConfig& config, Rng& rng, AugmentDraw* record) {
  AugmentDraw d = draw_augment(images.dim(0), static_cast<int>(images.dim(2)), config, rng);
  Var<T> out = apply_augment(images, d);
  if (record) *record = std::move(d);
  return out;
}

template class Discriminator<float>;
template class Discriminator<double>;
template Var<float> minibatch_stddev(const Var<float>&, int);
template Var<double> minibatch_stddev(const Var<double>&, int);
template Var<float> apply_augment(const Var<float>&, const AugmentDraw&);
template Var<double> apply_augment(const Var<double>&, const AugmentDraw&);
template Var<float> augment(const Var<float>&, const AugmentConfig&, Rng&, AugmentDraw*);
template Var<double> augment(const Var<double>&, const AugmentConfig&, Rng&, AugmentDraw*);

}  // namespace hsrgan::model
