#pragma once
// Style-based generator: mapping network z -> w and a synthesis network that
// grows a learned 4x4 constant to the output resolution, one modulated 3x3
// convolution per resolution.

#include <map>
#include <vector>

#include <json.hpp>

#include "hsrgan/nn/layers.hpp"

namespace hsrgan::model {

struct GeneratorConfig {
  int resolution = 32;
  int z_dim = 64;
  int w_dim = 64;
  int mapping_depth = 4;
  double mapping_lr_mul = 0.01;
  int base_channels = 32;
  int max_channels = 256;
  std::vector<int> tap_resolutions;  // empty: every r in {8, 16, 32, 64} with r <= resolution / 2
  bool noise = false;
  int64_t truncation_samples = 10000;

  void validate() const;
  std::vector<int> taps() const;
  int block_count() const;  // 4x4 through resolution
  int channels_at(int r) const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

// One style vector batch [B, w_dim] per synthesis block.
template <typename T>
using ExtendedStyle = std::vector<ag::Var<T>>;

template <typename T>
struct SynthesisOutput {
  ag::Var<T> image;                  // [B, 3, R, R], unbounded
  std::map<int, ag::Var<T>> taps;    // resolution -> [B, C_r, r, r]
};

template <typename T>
class Generator {
 public:
  Generator(const GeneratorConfig& config, uint64_t seed);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;

  const GeneratorConfig& config() const { return config_; }
  int block_count() const { return config_.block_count(); }

  // [B, z_dim] -> [B, w_dim]; rejects non-finite input.
  ag::Var<T> map(const ag::Var<T>& z) const;
  ExtendedStyle<T> broadcast(const ag::Var<T>& w) const;

  // noise_rng supplies fresh per-pixel noise when noise injection is on; with
  // nullptr the fixed buffers drawn at construction are used.
  SynthesisOutput<T> synthesize(const ExtendedStyle<T>& styles, bool want_taps = false,
                                Rng* noise_rng = nullptr) const;
  SynthesisOutput<T> synthesize(const ag::Var<T>& w, bool want_taps = false, Rng* noise_rng = nullptr) const;

  // Mean of map() over `count` standard-normal draws.
  Tensor<T> compute_w_mean(int64_t count, Rng& rng, int64_t batch = 256) const;

  nn::ParamList<T> parameters() const;
  nn::ParamList<T> mapping_parameters() const;

 private:
  struct Block {
    int resolution;
    nn::ModConv<T> conv;
    ag::Var<T> noise_strength;
    Tensor<T> fixed_noise;
  };

  GeneratorConfig config_;
  std::vector<nn::Dense<T>> mapping_;
  ag::Var<T> const_input_;
  std::vector<Block> blocks_;
  nn::ModConv<T> to_rgb_;
};

// w_mean + psi * (w - w_mean); psi must lie in [0, 1].
template <typename T>
ag::Var<T> truncate(const ag::Var<T>& w, double psi, const Tensor<T>& w_mean);

// Standard-normal latent batch [batch, dim].
template <typename T>
Tensor<T> sample_z(int64_t batch, int dim, Rng& rng);

}  // namespace hsrgan::model
