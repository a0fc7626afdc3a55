#pragma once
// Single JSON document configuring every command. Unknown keys are rejected
// and every command writes the resolved document next to its outputs.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsrgan/metrics/metrics.hpp"
#include "hsrgan/synth/synthdata.hpp"
#include "hsrgan/train/trainloop.hpp"

namespace hsrgan::cli {

inline constexpr int kSchemaVersion = 1;

struct RegressorSection {
  model::FactorNetConfig net;
  model::RegressorTraining training;
  uint64_t init_seed = 11;
};

struct MetricsSection {
  std::vector<std::string> list = {"ppl", "als", "fid", "pr"};
  int64_t ppl_pairs = 10000;
  double ppl_epsilon = 1e-4;
  std::string ppl_space = "w";
  int histogram_bins = 50;
  int64_t als_pairs = 1000;
  int als_steps = 10;
  double als_truncation = 1.0;
  int64_t fid_samples = 10000;
  int64_t pr_samples = 5000;
  int pr_k = 3;
  int64_t dci_samples = 10000;
  double dci_alpha = 1e-3;
  int64_t mahalanobis_samples = 1000;
  int64_t mahalanobis_worst = 30;
  int64_t gallery_max = 32;
  int64_t quick_fid_samples = 1000;
  int64_t quick_ppl_pairs = 200;
  int64_t batch = 64;
  uint64_t seed = 0;
};

struct EditSection {
  std::string attribute = "size";
  double alpha = 3.0;  // in units of sigma_w
  int64_t direction_samples = 10000;
  double quantile = 0.2;
  int steps = 10;
  int64_t sigma_samples = 10000;
  int64_t audit_probes = 200;
  int64_t samples = 8;
  int projection_steps = 400;
  double projection_lr = 0.05;
  double embed_weight = 1.0;
  bool allow_hash_mismatch = false;
  uint64_t seed = 0;
};

struct InterpolateSection {
  std::string mode = "random";
  int steps = 10;
  int64_t pairs = 8;
  uint64_t seed = 0;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::optional<uint64_t> seed;  // when set, overrides every per-section seed
  std::string data_dir = "data";
  std::string scorer_path = "scorer/scorer.bin";
  std::string extractor_path = "extractor/extractor.bin";
  synth::DatasetSpec dataset;
  RegressorSection scorer;
  RegressorSection extractor;
  train::TrainConfig train;
  MetricsSection metrics;
  EditSection edit;
  InterpolateSection interpolate;

  RunConfig();
  // Applies the global seed and validates every section.
  void resolve();
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

// Attribute name or index to factor index.
int parse_attribute(const std::string& s);

}  // namespace hsrgan::cli
