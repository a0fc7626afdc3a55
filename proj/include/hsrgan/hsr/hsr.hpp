#pragma once
// Hierarchical feature alignment: predictor heads map generator taps onto the
// features a frozen extractor computes from the generated image.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsrgan/model/factor_net.hpp"
#include "hsrgan/nn/layers.hpp"

namespace hsrgan::hsr {

enum class ExtractorKind { trained, random_init, external_plugin };
enum class TapGroup { high, mid, low, all };

std::string to_string(ExtractorKind kind);
ExtractorKind parse_extractor_kind(const std::string& s);
std::string to_string(TapGroup group);
TapGroup parse_tap_group(const std::string& s);

// Declared shape of an external extractor.
struct PluginManifest {
  std::vector<int64_t> stage_channels;
  int grid = 0;
  static PluginManifest from_json(const nlohmann::json& j);
};

// Frozen image -> stage-features map. Stage indices are 1-based.
template <typename T>
class Extractor {
 public:
  using PluginFn = std::function<std::vector<ag::Var<T>>(const ag::Var<T>&)>;

  Extractor() = default;
  // Takes ownership of a trained or freshly initialized net and freezes it.
  Extractor(ExtractorKind kind, std::shared_ptr<model::FactorNet<T>> net);
  // Wraps a user function. The declared channels are checked against a probe
  // forward pass at `resolution`; a mismatch throws ConfigError.
  Extractor(PluginFn fn, PluginManifest manifest, int resolution);

  bool configured() const { return kind_.has_value(); }
  ExtractorKind kind() const;
  int stage_count() const { return static_cast<int>(stage_channels_.size()); }
  const std::vector<int64_t>& stage_channels() const { return stage_channels_; }
  int declared_grid() const { return declared_grid_; }

  std::vector<ag::Var<T>> features(const ag::Var<T>& images) const;
  // Stages `stages` resized to grid x grid.
  std::vector<ag::Var<T>> extract(const ag::Var<T>& images, const std::vector<int>& stages, int grid) const;

  const model::FactorNet<T>* net() const { return net_.get(); }

 private:
  std::optional<ExtractorKind> kind_;
  std::shared_ptr<model::FactorNet<T>> net_;
  PluginFn plugin_;
  std::vector<int64_t> stage_channels_;
  int declared_grid_ = 0;
};

struct HSRConfig {
  double lambda = 1.0;
  double warmup_kimg = 25.0;
  bool stop_gradient = true;
  std::vector<TapGroup> groups = {TapGroup::all};  // empty disables every pair
  ExtractorKind extractor = ExtractorKind::trained;
  int predictor_hidden = 256;
  std::vector<int> extractor_stages;  // empty: default spacing ending at the deepest stage
  int grid = 0;                       // 0: 7 at 32x32, scaled with resolution

  void validate() const;
  nlohmann::json to_json() const;
  static HSRConfig from_json(const nlohmann::json& j);
};

// Default extractor stages for n taps out of `stages` (evenly spaced, always
// including the deepest), listed shallow to deep.
std::vector<int> default_extractor_stages(int n, int stages);

// Indices (into taps sorted by ascending resolution) covered by a group.
std::vector<int> group_members(TapGroup group, int tap_count);

int default_grid(int resolution);

template <typename T>
class PredictorHead {
 public:
  PredictorHead() = default;
  PredictorHead(int64_t in, int64_t hidden, int64_t out, Rng& rng);
  ag::Var<T> operator()(const ag::Var<T>& x) const;
  void collect(const std::string& prefix, nn::ParamList<T>& out) const;
  int64_t out_channels() const { return fc2_.out_channels; }

 private:
  nn::Conv<T> fc1_;
  nn::Conv<T> fc2_;
};

// Mean over pairs of the per-element mean squared error.
template <typename T>
ag::Var<T> alignment_loss(const std::vector<ag::Var<T>>& predictions, const std::vector<ag::Var<T>>& targets);

template <typename T>
struct HSRResult {
  ag::Var<T> loss;  // scalar; constant 0 when inactive
  bool active = false;
  std::vector<double> per_pair;
};

template <typename T>
class HSR {
 public:
  struct Pair {
    int tap_resolution;
    int stage;
    bool active;
    int64_t tap_channels;
    int64_t target_channels;
  };

  // tap_channels: generator tap resolution -> channel count.
  HSR(const HSRConfig& config, const std::map<int, int64_t>& tap_channels, const Extractor<T>* extractor,
      int resolution, uint64_t seed);
  HSR(const HSR&) = delete;
  HSR& operator=(const HSR&) = delete;
  HSR(HSR&&) = default;
  HSR& operator=(HSR&&) = default;

  const HSRConfig& config() const { return config_; }
  const std::vector<Pair>& pairs() const { return pairs_; }
  int grid() const { return grid_; }
  bool any_active() const;
  bool warmed_up(int64_t images_seen) const;

  // sever_predictor detaches the taps before the heads (used to check that the
  // target branch carries no generator gradient under stop-gradient).
  HSRResult<T> loss(const std::map<int, ag::Var<T>>& taps, const ag::Var<T>& image, int64_t images_seen,
                    bool sever_predictor = false) const;

  nn::ParamList<T> parameters() const;

 private:
  HSRConfig config_;
  const Extractor<T>* extractor_;
  int grid_;
  std::vector<Pair> pairs_;
  std::vector<PredictorHead<T>> heads_;
};

}  // namespace hsrgan::hsr
