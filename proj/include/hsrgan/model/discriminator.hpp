#pragma once

#include <vector>

#include <json.hpp>

#include "hsrgan/nn/layers.hpp"

namespace hsrgan::model {

struct DiscriminatorConfig {
  int resolution = 32;
  int base_channels = 32;
  int max_channels = 256;
  int mbstd_group = 4;

  void validate() const;
  int channels_at(int r) const;
  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& j);
};

template <typename T>
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, uint64_t seed);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;

  const DiscriminatorConfig& config() const { return config_; }

  // [B, 3, R, R] -> logits [B, 1]
  ag::Var<T> operator()(const ag::Var<T>& images) const;
  nn::ParamList<T> parameters() const;

 private:
  struct Block {
    int resolution;
    nn::Conv<T> conv;
  };

  DiscriminatorConfig config_;
  nn::Conv<T> from_rgb_;
  std::vector<Block> blocks_;
  nn::Conv<T> final_conv_;
  nn::Dense<T> fc_;
  nn::Dense<T> out_;
};

// Appends the across-group standard deviation as one extra channel. The group
// size is the largest value <= `group` that divides the batch.
template <typename T>
ag::Var<T> minibatch_stddev(const ag::Var<T>& x, int group);

struct AugmentConfig {
  double p = 0.3;
  bool flip = true;
  bool translate = true;
  bool brightness = true;

  void validate() const;
  nlohmann::json to_json() const;
  static AugmentConfig from_json(const nlohmann::json& j);
};

// Per-sample augmentation parameters for one batch.
struct AugmentDraw {
  std::vector<bool> flipped;
  std::vector<bool> translated;
  std::vector<bool> brightened;
  std::vector<int> dx;
  std::vector<int> dy;
  std::vector<double> brightness;
};

// Each enabled op is applied to each sample independently with probability p.
AugmentDraw draw_augment(int64_t batch, int resolution, const AugmentConfig& config, Rng& rng);

// Differentiable application: flip, integer translation with zero fill, then
// an additive brightness shift clamped to [-1, 1] on the samples it touches.
template <typename T>
ag::Var<T> apply_augment(const ag::Var<T>& images, const AugmentDraw& draw);

template <typename T>
ag::Var<T> augment(const ag::Var<T>& images, const AugmentConfig& config, Rng& rng,
                   AugmentDraw* record = nullptr);

}  // namespace hsrgan::model
