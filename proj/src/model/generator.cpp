#include "hsrgan/model/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hsrgan/core/error.hpp"

namespace hsrgan::model {

using ag::Var;
using nlohmann::json;

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void GeneratorConfig::validate() const {
  if (resolution < 8 || !is_pow2(resolution)) throw ConfigError("generator resolution must be a power of two >= 8");
  if (z_dim < 1 || w_dim < 1) throw ConfigError("latent dimensions must be positive");
  if (mapping_depth < 0) throw ConfigError("mapping_depth must be >= 0");
  if (mapping_depth == 0 && z_dim != w_dim) throw ConfigError("mapping_depth 0 requires z_dim == w_dim");
  if (base_channels < 1 || max_channels < 1) throw ConfigError("channel widths must be positive");
  if (truncation_samples < 1) throw ConfigError("truncation_samples must be >= 1");
  for (int r : taps())
    if (!is_pow2(r) || r < 8 || r > resolution / 2)
      throw ConfigError("tap resolution " + std::to_string(r) + " must be a power of two in [8, resolution/2]");
}

std::vector<int> GeneratorConfig::taps() const {
  if (!tap_resolutions.empty()) {
    std::vector<int> t = tap_resolutions;
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
  }
  std::vector<int> t;
  for (int r : {8, 16, 32, 64})
    if (r <= resolution / 2) t.push_back(r);
  return t;
}

int GeneratorConfig::block_count() const {
  return static_cast<int>(std::log2(resolution)) - 1;
}

int GeneratorConfig::channels_at(int r) const {
  return std::min(max_channels, base_channels * (resolution / r));
}

json GeneratorConfig::to_json() const {
  return {{"resolution", resolution},       {"z_dim", z_dim},
          {"w_dim", w_dim},                 {"mapping_depth", mapping_depth},
          {"mapping_lr_mul", mapping_lr_mul}, {"base_channels", base_channels},
          {"max_channels", max_channels},   {"tap_resolutions", taps()},
          {"noise", noise},                 {"truncation_samples", truncation_samples}};
}

GeneratorConfig GeneratorConfig::from_json(const json& j) {
  GeneratorConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "resolution") c.resolution = v.get<int>();
    else if (key == "z_dim") c.z_dim = v.get<int>();
    else if (key == "w_dim") c.w_dim = v.get<int>();
    else if (key == "mapping_depth") c.mapping_depth = v.get<int>();
    else if (key == "mapping_lr_mul") c.mapping_lr_mul = v.get<double>();
    else if (key == "base_channels") c.base_channels = v.get<int>();
    else if (key == "max_channels") c.max_channels = v.get<int>();
    else if (key == "tap_resolutions") c.tap_resolutions = v.get<std::vector<int>>();
    else if (key == "noise") c.noise = v.get<bool>();
    else if (key == "truncation_samples") c.truncation_samples = v.get<int64_t>();
    else throw SchemaError("unknown generator key '" + key + "'");
  }
  return c;
}

template <typename T>
Generator<T>::Generator(const GeneratorConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  for (int i = 0; i < config_.mapping_depth; ++i)
    mapping_.emplace_back(i == 0 ? config_.z_dim : config_.w_dim, config_.w_dim, rng, config_.mapping_lr_mul);
  const int64_t c4 = config_.channels_at(4);
  const_input_ = Var<T>::parameter(nn::randn<T>({1, c4, 4, 4}, rng));
  int64_t in = c4;
  for (int r = 4; r <= config_.resolution; r *= 2) {
    const int64_t out = config_.channels_at(r);
    Block b{r, nn::ModConv<T>(in, out, 3, config_.w_dim, true, rng), Var<T>::parameter(Tensor<T>({1})),
            nn::randn<T>({1, 1, r, r}, rng)};
    blocks_.push_back(std::move(b));
    in = out;
  }
  to_rgb_ = nn::ModConv<T>(in, 3, 1, config_.w_dim, false, rng);
}

template <typename T>
Var<T> Generator<T>::map(const Var<T>& z) const {
  if (z.value().rank() != 2 || z.dim(1) != config_.z_dim)
    throw ShapeError("map: expected z of shape [B, " + std::to_string(config_.z_dim) + "], got " +
                     to_string(z.shape()));
  if (!z.value().all_finite()) throw NonFiniteError("map: latent z contains non-finite values");
  if (mapping_.empty()) return z;
  Var<T> x = z * ag::pow_scalar(ag::add_scalar(nn::row_mean(z * z), 1e-8), -0.5);
  for (const auto& fc : mapping_) x = ag::leaky_relu(fc(x), 0.2, std::numbers::sqrt2);
  return x;
}

template <typename T>
ExtendedStyle<T> Generator<T>::broadcast(const Var<T>& w) const {
  return ExtendedStyle<T>(static_cast<size_t>(block_count()), w);
}

template <typename T>
SynthesisOutput<T> Generator<T>::synthesize(const ExtendedStyle<T>& styles, bool want_taps, Rng* noise_rng) const {
  if (static_cast<int>(styles.size()) != block_count())
    throw ShapeError("synthesize: expected " + std::to_string(block_count()) + " block styles, got " +
                     std::to_string(styles.size()));
  const int64_t batch = styles[0].dim(0);
  for (const auto& s : styles) {
    if (s.value().rank() != 2 || s.dim(0) != batch || s.dim(1) != config_.w_dim)
      throw ShapeError("synthesize: style shape " + to_string(s.shape()) + " is invalid");
    if (!s.value().all_finite()) throw NonFiniteError("synthesize: style contains non-finite values");
  }
  const std::vector<int> tap_list = config_.taps();
  SynthesisOutput<T> out;
  Var<T> x = const_input_;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    if (i > 0) x = ag::upsample2x(x);
    x = b.conv(x, styles[i]);
    if (config_.noise) {
      Tensor<T> n = b.fixed_noise;
      if (noise_rng) n = nn::randn<T>({batch, 1, b.resolution, b.resolution}, *noise_rng);
      x = x + Var<T>::constant(std::move(n)) * ag::reshape(b.noise_strength, Shape{1, 1, 1, 1});
    }
    x = ag::leaky_relu(x, 0.2, std::numbers::sqrt2);
    if (want_taps && std::find(tap_list.begin(), tap_list.end(), b.resolution) != tap_list.end())
      out.taps.emplace(b.resolution, x);
  }
  out.image = to_rgb_(x, styles.back());
  return out;
}

template <typename T>
SynthesisOutput<T> Generator<T>::synthesize(const Var<T>& w, bool want_taps, Rng* noise_rng) const {
  return synthesize(broadcast(w), want_taps, noise_rng);
}

template <typename T>
Tensor<T> Generator<T>::compute_w_mean(int64_t count, Rng& rng, int64_t batch) const {
  ag::NoGradGuard no_grad;
  std::vector<double> acc(static_cast<size_t>(config_.w_dim), 0.0);
  for (int64_t done = 0; done < count; done += batch) {
    const int64_t b = std::min(batch, count - done);
    Var<T> w = map(Var<T>::constant(sample_z<T>(b, config_.z_dim, rng)));
    for (int64_t i = 0; i < b; ++i)
      for (int64_t d = 0; d < config_.w_dim; ++d) acc[d] += w.value()[i * config_.w_dim + d];
  }
  Tensor<T> mean({config_.w_dim});
  for (int64_t d = 0; d < config_.w_dim; ++d) mean[d] = static_cast<T>(acc[d] / static_cast<double>(count));
  return mean;
}

template <typename T>
nn::ParamList<T> Generator<T>::mapping_parameters() const {
  nn::ParamList<T> p;
  for (size_t i = 0; i < mapping_.size(); ++i) mapping_[i].collect("mapping.fc" + std::to_string(i), p);
  return p;
}

template <typename T>
nn::ParamList<T> Generator<T>::parameters() const {
  nn::ParamList<T> p = mapping_parameters();
  p.push_back({"synthesis.const", const_input_});
  for (const auto& b : blocks_) {
    const std::string prefix = "synthesis.b" + std::to_string(b.resolution);
    b.conv.collect(prefix + ".conv", p);
    if (config_.noise) p.push_back({prefix + ".noise_strength", b.noise_strength});
  }
  to_rgb_.collect("synthesis.torgb", p);
  return p;
}

template <typename T>
Var<T> truncate(const Var<T>& w, double psi, const Tensor<T>& w_mean) {
  if (!(psi >= 0.0 && psi <= 1.0)) throw RangeError("truncation psi must lie in [0, 1]");
  if (psi == 1.0) return w;
  Var<T> mean = Var<T>::constant(w_mean.reshaped(Shape{1, w_mean.numel()}));
  if (psi == 0.0) return ag::broadcast_to(mean, w.shape());
  return mean + ag::scale(w - mean, psi);
}

template <typename T>
Tensor<T> sample_z(int64_t batch, int dim, Rng& rng) {
  return nn::randn<T>({batch, dim}, rng);
}

template class Generator<float>;
template class Generator<double>;
template Var<float> truncate(const Var<float>&, double, const Tensor<float>&);
template Var<double> truncate(const Var<double>&, double, const Tensor<double>&);
template Tensor<float> sample_z(int64_t, int, Rng&);
template Tensor<double> sample_z(int64_t, int, Rng&);

}  // namespace hsrgan::model
