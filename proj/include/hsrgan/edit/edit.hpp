#pragma once
// Linear attribute directions in W, latent projection of images into W+, and
// the projection-based linearity experiment.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsrgan/io/png.hpp"
#include "hsrgan/metrics/metrics.hpp"
#include "hsrgan/model/factor_net.hpp"
#include "hsrgan/model/generator.hpp"

namespace hsrgan::edit {

using metrics::ImageFn;
using metrics::LatentModel;
using metrics::Matrix;
using metrics::Vector;

struct DirectionOptions {
  int64_t n_samples = 10000;
  double quantile = 0.2;          // top and bottom fraction used as the two classes
  double holdout_fraction = 0.2;  // probe split for sign and accuracy
  double min_accuracy = 0.8;
  uint64_t seed = 0;
  int64_t batch = 64;
};

struct EditDirection {
  int attribute = 0;
  Vector direction;  // unit norm
  double offset = 0.0;
  double accuracy = 0.0;  // held-out separator accuracy
  int64_t n_samples = 0;
  double quantile = 0.0;
  std::vector<std::string> warnings;
  std::string checkpoint_hash;

  nlohmann::json to_json() const;
  static EditDirection from_json(const nlohmann::json& j);
};

// Fits a least-squares separator between the highest and lowest scoring w's
// of one attribute; the sign makes +d raise the score on the probe split.
EditDirection find_direction(const LatentModel& model, const ImageFn& score, int attribute,
                             const DirectionOptions& options);

void save_direction(const std::filesystem::path& path, const EditDirection& direction);
// Throws HashMismatchError when the stored checkpoint hash differs from
// `checkpoint_hash`, unless `allow_mismatch` is set.
EditDirection load_direction(const std::filesystem::path& path, const std::string& checkpoint_hash,
                             bool allow_mismatch = false);

// w + alpha * d for every row of w; d must have unit norm.
Matrix apply_edit(const Matrix& w, const Vector& d, double alpha);

// Root mean square of the per-dimension standard deviation of w, the unit of
// edit strength.
double sigma_w(const LatentModel& model, int64_t samples, uint64_t seed);

struct MonotonicityAudit {
  std::vector<double> alphas;
  int64_t probes = 0;
  int64_t monotone = 0;
  double fraction = 0.0;
};

// Fraction of probes whose score is non-decreasing over alpha in
// {0, 0.5, ..., 3} * sigma.
MonotonicityAudit audit_monotonicity(const LatentModel& model, const ImageFn& score, int attribute,
                                     const Vector& d, double sigma, int64_t probes, uint64_t seed);

struct ProjectionOptions {
  int steps = 400;
  double lr = 0.05;  // cosine decayed to 0
  double embed_weight = 1.0;
  int checkpoint_every = 50;
  double noise_scale = 0.0;  // initial latent noise, ramped down over the first 3/4 of the steps
  uint64_t seed = 0;
};

struct ProjectionResult {
  Matrix w_plus;  // block_count x w_dim
  double pixel_mse = 0.0;
  double embed_distance = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> checkpoint_losses;  // loss at steps 0, k, 2k, ... and at the end
  int steps = 0;
  bool diverged = false;

  nlohmann::json to_json() const;
};

// Optimizes W+ from a broadcast w_mean to reproduce `target` ([1, 3, R, R]).
ProjectionResult project_image(const model::Generator<float>& g, const model::FactorNet<float>& embed_net,
                               const Tensor<float>& target, const Tensor<float>& w_mean,
                               const ProjectionOptions& options, const Matrix* init = nullptr);

// [B, 3, R, R] renders of W+ codes, one per entry.
Tensor<float> render(const model::Generator<float>& g, const std::vector<Matrix>& w_plus);

// (N + 1) codes from a to b at t = k / N, k = 0..N.
std::vector<Matrix> interpolate(const Matrix& a, const Matrix& b, int steps);

struct LinearityEval {
  std::vector<double> t;
  Matrix scores;     // (N + 1) x M
  Matrix deviation;  // (N + 1) x M
  std::vector<double> per_attribute;
  double mean = 0.0;
  ProjectionResult source;
  ProjectionResult edited;
};

// Projects the image, edits the code by alpha * d in every block, re-projects
// the edited render starting from the edited code, and scores the
// interpolation between the two recovered codes.
LinearityEval edit_linearity_eval(const model::Generator<float>& g, const model::FactorNet<float>& embed_net,
                                  const ImageFn& score, const Tensor<float>& target, const Vector& d, double alpha,
                                  int steps, const Tensor<float>& w_mean, const ProjectionOptions& options);

// Rows t, attribute, score, deviation; (N + 1) * M data rows.
void write_linearity_csv(const std::filesystem::path& path, const LinearityEval& eval);

// Frames left to right with t ascending; width (N + 1) * R.
io::Rgb8Image interpolate_grid(const model::Generator<float>& g, const Matrix& a, const Matrix& b, int steps);
// Network image [B, 3, R, R] in [-1, 1] to 8-bit RGB, sample `index`.
io::Rgb8Image to_rgb8(const Tensor<float>& images, int64_t index = 0);

}  // namespace hsrgan::edit
