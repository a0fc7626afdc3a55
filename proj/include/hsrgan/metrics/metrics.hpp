#pragma once
// Latent-space and distribution metrics. Computation is in double precision;
// networks are reached through plain callables so the estimators can be
// checked against closed-form toy models.

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hsrgan/core/rng.hpp"
#include "hsrgan/model/factor_net.hpp"
#include "hsrgan/model/generator.hpp"
#include "hsrgan/synth/synthdata.hpp"

namespace hsrgan::metrics {

using Matrix = Eigen::MatrixXd;  // rows are samples
using Vector = Eigen::VectorXd;

// Latent model seen by the metrics: z -> w and w -> image batch.
struct LatentModel {
  int z_dim = 0;
  int w_dim = 0;
  std::function<Matrix(const Matrix& z)> map;
  std::function<Tensor<double>(const Matrix& w)> synthesize;  // [B, C, H, W]
};

LatentModel latent_model(const model::Generator<float>& g);

// Image batch -> one row per image.
using ImageFn = std::function<Matrix(const Tensor<double>& images)>;

// Pooled deepest-stage features of a frozen factor network, standing in for a
// learned perceptual distance.
ImageFn embedder(std::shared_ptr<const model::FactorNet<float>> net);
// Six factor predictions per image.
ImageFn scorer(std::shared_ptr<const model::FactorNet<float>> net);

nlohmann::json embedder_manifest(const nlohmann::json& net_manifest);

// Embeddings of dataset samples [begin, end).
Matrix embed_dataset(const ImageFn& embed, const synth::Dataset& data, int64_t begin, int64_t end, int64_t batch = 128);
// Embeddings of `count` unconditional samples.
Matrix embed_samples(const ImageFn& embed, const LatentModel& model, int64_t count, uint64_t seed, int64_t batch = 64);

// ---------------------------------------------------------------------------
// Perceptual path length.

enum class PPLSpace { w, z };
std::string to_string(PPLSpace s);
PPLSpace parse_ppl_space(const std::string& s);

struct PPLOptions {
  int64_t n_pairs = 10000;
  double epsilon = 1e-4;
  PPLSpace space = PPLSpace::w;
  uint64_t seed = 0;
  int64_t batch = 64;
};

struct PPLResult {
  double mean = 0.0;
  double standard_error = 0.0;
  std::vector<double> values;  // per pair
  Matrix z0, z1;               // endpoint latents per pair
  std::vector<double> t;
};

// Spherical interpolation per row.
Matrix slerp(const Matrix& a, const Matrix& b, const std::vector<double>& t);
Matrix lerp(const Matrix& a, const Matrix& b, const std::vector<double>& t);

// d(G(x_t), G(x_{t+eps})) / eps^2 with d the squared embedding distance, where
// x is interpolated linearly between w-space endpoints.
std::vector<double> ppl_w_pairs(const LatentModel& model, const ImageFn& embed, const Matrix& w0, const Matrix& w1,
                                const std::vector<double>& t, double epsilon);

PPLResult ppl(const LatentModel& model, const ImageFn& embed, const PPLOptions& options);

struct PercentileReport {
  std::vector<int64_t> ascending;  // pair indices by value, ties by index
  std::vector<int64_t> top;        // lowest 10%
  std::vector<int64_t> bottom;     // highest 10%
  std::vector<double> edges;       // histogram bin edges
  std::vector<int64_t> counts;
};

// Histogram over `bins` equal bins spanning [0, max] unless `edges` is given.
PercentileReport ppl_percentiles(const std::vector<double>& values, int bins = 50, std::vector<double> edges = {});

// ---------------------------------------------------------------------------
// Attribute linearity.

struct ALSOptions {
  int64_t n_pairs = 1000;
  int steps = 10;  // N; t in {0, 1/N, ..., 1}
  double truncation = 1.0;
  uint64_t seed = 0;
  int64_t w_mean_samples = 10000;
};

struct ALSResult {
  double mean = 0.0;                   // over interior t and attributes
  std::vector<double> per_attribute;   // M
  std::vector<double> per_t;           // N + 1, endpoints 0
  std::vector<double> per_pair;        // mean per pair
  int steps = 0;
};

// Each matrix is (N + 1) x M scores along one interpolation path.
ALSResult als_from_scores(const std::vector<Matrix>& scores);
// Deviation d[t][j] of one score matrix.
Matrix als_deviation(const Matrix& scores);

ALSResult als(const LatentModel& model, const ImageFn& score, int attribute_count, const ALSOptions& options,
              std::vector<Matrix>* score_paths = nullptr);

// ---------------------------------------------------------------------------
// Distribution metrics.

struct Moments {
  Vector mean;
  Matrix cov;
};
Moments moments(const Matrix& samples);

double frechet_distance(const Moments& a, const Moments& b);
double frechet_distance(const Matrix& a, const Matrix& b);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};
PrecisionRecall precision_recall(const Matrix& real, const Matrix& fake, int k = 3);

struct DCIOptions {
  double alpha = 1e-3;
  double train_fraction = 0.8;
  int max_iterations = 20000;
  double tolerance = 1e-12;
};

struct DCIResult {
  double disentanglement = 0.0;
  double completeness = 0.0;
  double informativeness = 0.0;
  Matrix importance;  // code dims x factors
  std::vector<double> factor_informativeness;
  int zero_rows = 0;
  int zero_columns = 0;
};

// Lasso fit by accelerated proximal gradient on standardized inputs; returns
// coefficients in standardized units.
Vector lasso(const Matrix& x_std, const Vector& y_centered, double alpha, int max_iterations, double tolerance);

DCIResult dci(const Matrix& codes, const Matrix& factors, const DCIOptions& options = {});
// Disentanglement and completeness of a given importance matrix.
std::pair<double, double> dci_scores(const Matrix& importance, int* zero_rows = nullptr, int* zero_columns = nullptr);

struct RankedImage {
  int64_t index;
  double distance;
};
// Regularized moments (cov + 1e-6 I) and descending squared Mahalanobis order.
std::vector<RankedImage> mahalanobis_rank(const Matrix& embeddings, const Moments& real, int64_t n_worst);
std::vector<double> mahalanobis_distances(const Matrix& embeddings, const Moments& real);

// ---------------------------------------------------------------------------
// Scorer training and reports.

struct ScorerTraining {
  model::FactorNetConfig net;
  model::RegressorTraining training;
  uint64_t init_seed = 11;
};

struct TrainedScorer {
  std::shared_ptr<model::FactorNet<float>> net;
  model::RegressorReport report;
  nlohmann::json manifest() const;
};

TrainedScorer train_attribute_scorer(const synth::Dataset& data, const ScorerTraining& options,
                                     const std::function<void(const std::string&)>& log = {});

struct MetricReport {
  std::string metric;
  nlohmann::json values = nlohmann::json::object();
  nlohmann::json sample_counts = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::string config_hash;
  nlohmann::json manifests = nlohmann::json::object();
  std::vector<std::string> disclosures;

  nlohmann::json to_json() const;
};

// Notes attached to every report about stand-ins for pretrained components.
std::vector<std::string> standard_disclosures();

// Attributes as columns, methods as rows.
void write_als_table(const std::filesystem::path& path, const std::vector<std::string>& methods,
                     const std::vector<std::vector<double>>& per_attribute);
void write_per_t_csv(const std::filesystem::path& path, const ALSResult& result);
void write_histogram_csv(const std::filesystem::path& path, const PercentileReport& report);

// FID-proxy against precomputed real moments plus a short PPL estimate.
nlohmann::json quick_eval(const model::Generator<float>& g, const ImageFn& embed, const Moments& real,
                          int64_t fid_samples, int64_t ppl_pairs, uint64_t seed);

}  // namespace hsrgan::metrics
