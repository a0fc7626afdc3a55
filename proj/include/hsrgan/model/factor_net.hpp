#pragma once
// Four-stage convolutional regressor from images to the six factors. Serves as
// the frozen feature extractor, the perceptual embedder, and the attribute
// scorer (separately trained instances).

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsrgan/io/tensor_file.hpp"
#include "hsrgan/nn/adam.hpp"
#include "hsrgan/nn/layers.hpp"
#include "hsrgan/synth/synthdata.hpp"

namespace hsrgan::model {

struct FactorNetConfig {
  int resolution = 32;
  std::vector<int> widths = {16, 32, 64, 128};
  int hidden = 128;

  void validate() const;
  int stage_count() const { return static_cast<int>(widths.size()); }
  int stage_resolution(int stage) const;  // 1-based stage index
  nlohmann::json to_json() const;
  static FactorNetConfig from_json(const nlohmann::json& j);
};

template <typename T>
class FactorNet {
 public:
  FactorNet(const FactorNetConfig& config, uint64_t seed);
  FactorNet(const FactorNet&) = delete;
  FactorNet& operator=(const FactorNet&) = delete;
  FactorNet(FactorNet&&) = default;
  FactorNet& operator=(FactorNet&&) = default;

  const FactorNetConfig& config() const { return config_; }

  // Stage outputs [B, widths[i], R/2^(i+1), R/2^(i+1)] for images [B, 3, R, R].
  std::vector<ag::Var<T>> stages(const ag::Var<T>& images) const;
  // [B, 6] factor predictions.
  ag::Var<T> predict(const ag::Var<T>& images) const;
  ag::Var<T> head(const ag::Var<T>& deepest) const;
  // Deepest stage, globally average pooled: [B, widths.back()].
  ag::Var<T> embed(const ag::Var<T>& images) const;

  nn::ParamList<T> parameters() const;
  // Marks every parameter as a constant; later graphs never reach them.
  void freeze();
  bool frozen() const { return frozen_; }

 private:
  FactorNetConfig config_;
  std::vector<nn::Conv<T>> convs_;
  nn::Dense<T> fc_;
  nn::Dense<T> out_;
  bool frozen_ = false;
};

struct RegressorTraining {
  int64_t max_epochs = 40;
  int64_t batch = 32;
  double lr = 2e-3;
  double target_mse = 0.02;
  int64_t validation_count = 1000;
  uint64_t seed = 0;
  bool random_flip = true;  // mirrored images carry pos_x negated
};

struct RegressorReport {
  std::array<double, synth::kFactorCount> validation_mse{};
  int64_t epochs = 0;
  int64_t train_count = 0;
  int64_t validation_count = 0;
  bool converged = false;
  nlohmann::json to_json() const;
};

// Per-factor mean squared error of net predictions on dataset[begin, end).
template <typename T>
std::array<double, synth::kFactorCount> evaluate_regressor(const FactorNet<T>& net, const synth::Dataset& data,
                                                           int64_t begin, int64_t end, int64_t batch = 128);

// Trains on all but the last validation_count samples until every factor's
// validation MSE is below target_mse. Throws ConvergenceError naming the
// achieved errors when the epoch budget runs out; freezes the net on success.
RegressorReport train_regressor(FactorNet<float>& net, const synth::Dataset& data, const RegressorTraining& options,
                                const std::function<void(const std::string&)>& log = {});

// Parameters plus {kind, role, config, manifest} metadata.
io::TensorFile save_factor_net(const FactorNet<float>& net, const std::string& role, const nlohmann::json& manifest);
// Rebuilds and freezes a saved net; `role` must match the stored role.
std::shared_ptr<FactorNet<float>> load_factor_net(const io::TensorFile& file, const std::string& role);

}  // namespace hsrgan::model
