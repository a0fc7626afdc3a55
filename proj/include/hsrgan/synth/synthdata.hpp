#pragma once
// Procedural shapes with six continuous ground-truth factors.
//
// Factor order: size, pos_x, pos_y, hue, elongation, brightness. Every factor
// lives in [-1, 1] and maps affinely (elongation log-affinely) onto geometry.

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hsrgan/core/rng.hpp"
#include "hsrgan/core/tensor.hpp"

namespace hsrgan::synth {

inline constexpr int kFactorCount = 6;
inline constexpr std::array<std::string_view, kFactorCount> kFactorNames = {
    "size", "pos_x", "pos_y", "hue", "elongation", "brightness"};
inline constexpr int kArchiveVersion = 1;

struct FactorVector {
  std::array<double, kFactorCount> values{};

  double& operator[](int i) { return values[static_cast<size_t>(i)]; }
  double operator[](int i) const { return values[static_cast<size_t>(i)]; }
  // Throws RangeError naming the first component outside [-1, 1].
  void validate() const;
  friend bool operator==(const FactorVector&, const FactorVector&) = default;
};

enum class ShapeKind { ellipse, rectangle };

struct DatasetSpec {
  int resolution = 32;
  int64_t sample_count = 10000;
  uint64_t seed = 0;
  ShapeKind shape_kind = ShapeKind::ellipse;
  int supersampling = 4;

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

// Geometry in pixel units derived from factors.
struct Geometry {
  double radius;      // [0.15, 0.40] * W
  double center_x;
  double center_y;
  double semi_x;      // radius * sqrt(axis_ratio)
  double semi_y;      // radius / sqrt(axis_ratio)
  double axis_ratio;  // [0.5, 2]
  double hue;         // radians
  double background;  // gray level [0.1, 0.6]
  std::array<double, 3> foreground;
};

Geometry geometry(const FactorVector& f, int resolution);

// Per-pixel foreground coverage in [0, 1], row-major H x W.
std::vector<double> coverage(const FactorVector& f, const DatasetSpec& spec);

// Image as [H, W, 3] with values in [0, 1].
Tensor<float> render_shape(const FactorVector& f, const DatasetSpec& spec);

// Rounds every value to the nearest k/255 (the archive's storage grid).
Tensor<float> quantize(const Tensor<float>& image);

FactorVector sample_factors(Rng& rng);

struct ShapeSample {
  Tensor<float> image;  // [H, W, 3]
  FactorVector factors;
};

// Samples are drawn from per-index substreams of spec.seed, so any subset can
// be regenerated independently.
ShapeSample make_sample(const DatasetSpec& spec, int64_t index);

class Dataset {
 public:
  Dataset() = default;
  Dataset(DatasetSpec spec, std::vector<FactorVector> factors, std::vector<uint8_t> pixels);

  const DatasetSpec& spec() const { return spec_; }
  int64_t size() const { return static_cast<int64_t>(factors_.size()); }
  int resolution() const { return spec_.resolution; }
  const std::vector<FactorVector>& factors() const { return factors_; }
  const std::vector<uint8_t>& pixels() const { return pixels_; }

  ShapeSample sample(int64_t index) const;
  // [B, 3, H, W] scaled to [-1, 1]; flip[i] mirrors sample i horizontally.
  Tensor<float> batch(std::span<const int64_t> indices, std::span<const bool> flip = {}) const;
  // [B, 6] factor targets.
  Tensor<float> factor_batch(std::span<const int64_t> indices) const;

 private:
  DatasetSpec spec_;
  std::vector<FactorVector> factors_;
  std::vector<uint8_t> pixels_;  // N x H x W x 3
};

// Renders spec.sample_count samples (in parallel, identical to serial).
Dataset build_dataset(const DatasetSpec& spec);

// Writes factors.csv, images/%06d.png and spec.json under `dir`.
void write_archive(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_archive(const std::filesystem::path& dir);

// build_dataset followed by write_archive.
Dataset generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);

// Image tensor helpers between [H, W, 3] in [0, 1] and [1, 3, H, W] in [-1, 1].
Tensor<float> to_network(const Tensor<float>& hwc);
Tensor<float> from_network(const Tensor<float>& chw, int64_t index = 0);

}  // namespace hsrgan::synth
