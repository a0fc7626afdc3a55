#include "run_config.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include "hsrgan/core/error.hpp"
#include "hsrgan/io/tensor_file.hpp"

namespace hsrgan::cli {

using nlohmann::json;

namespace {

using Setters = std::map<std::string, std::function<void(const json&)>>;

void apply(const json& j, const Setters& setters, const std::string& what) {
  if (!j.is_object()) throw SchemaError(what + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw SchemaError("unknown " + what + " key '" + key + "'");
    it->second(value);
  }
}

template <typename T>
std::function<void(const json&)> set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

json regressor_training_json(const model::RegressorTraining& t) {
  return {{"max_epochs", t.max_epochs},   {"batch", t.batch},
          {"lr", t.lr},                   {"target_mse", t.target_mse},
          {"validation_count", t.validation_count}, {"seed", t.seed},
          {"random_flip", t.random_flip}};
}

json regressor_json(const RegressorSection& r) {
  return {{"net", r.net.to_json()}, {"training", regressor_training_json(r.training)}, {"init_seed", r.init_seed}};
}

RegressorSection regressor_from_json(const json& j, RegressorSection r, const std::string& what) {
  apply(j,
        {{"net", [&](const json& v) { r.net = model::FactorNetConfig::from_json(v); }},
         {"training",
          [&](const json& v) {
            auto& t = r.training;
            apply(v,
                  {{"max_epochs", set(t.max_epochs)},
                   {"batch", set(t.batch)},
                   {"lr", set(t.lr)},
                   {"target_mse", set(t.target_mse)},
                   {"validation_count", set(t.validation_count)},
                   {"seed", set(t.seed)},
                   {"random_flip", set(t.random_flip)}},
                  what + ".training");
          }},
         {"init_seed", set(r.init_seed)}},
        what);
  return r;
}

json metrics_json(const MetricsSection& m) {
  return {{"list", m.list},
          {"ppl_pairs", m.ppl_pairs},
          {"ppl_epsilon", m.ppl_epsilon},
          {"ppl_space", m.ppl_space},
          {"histogram_bins", m.histogram_bins},
          {"als_pairs", m.als_pairs},
          {"als_steps", m.als_steps},
          {"als_truncation", m.als_truncation},
          {"fid_samples", m.fid_samples},
          {"pr_samples", m.pr_samples},
          {"pr_k", m.pr_k},
          {"dci_samples", m.dci_samples},
          {"dci_alpha", m.dci_alpha},
          {"mahalanobis_samples", m.mahalanobis_samples},
          {"mahalanobis_worst", m.mahalanobis_worst},
          {"gallery_max", m.gallery_max},
          {"quick_fid_samples", m.quick_fid_samples},
          {"quick_ppl_pairs", m.quick_ppl_pairs},
          {"batch", m.batch},
          {"seed", m.seed}};
}

MetricsSection metrics_from_json(const json& j) {
  MetricsSection m;
  apply(j,
        {{"list", set(m.list)},
         {"ppl_pairs", set(m.ppl_pairs)},
         {"ppl_epsilon", set(m.ppl_epsilon)},
         {"ppl_space", set(m.ppl_space)},
         {"histogram_bins", set(m.histogram_bins)},
         {"als_pairs", set(m.als_pairs)},
         {"als_steps", set(m.als_steps)},
         {"als_truncation", set(m.als_truncation)},
         {"fid_samples", set(m.fid_samples)},
         {"pr_samples", set(m.pr_samples)},
         {"pr_k", set(m.pr_k)},
         {"dci_samples", set(m.dci_samples)},
         {"dci_alpha", set(m.dci_alpha)},
         {"mahalanobis_samples", set(m.mahalanobis_samples)},
         {"mahalanobis_worst", set(m.mahalanobis_worst)},
         {"gallery_max", set(m.gallery_max)},
         {"quick_fid_samples", set(m.quick_fid_samples)},
         {"quick_ppl_pairs", set(m.quick_ppl_pairs)},
         {"batch", set(m.batch)},
         {"seed", set(m.seed)}},
        "metrics");
  return m;
}

json edit_json(const EditSection& e) {
  return {{"attribute", e.attribute},
          {"alpha", e.alpha},
          {"direction_samples", e.direction_samples},
          {"quantile", e.quantile},
          {"steps", e.steps},
          {"sigma_samples", e.sigma_samples},
          {"audit_probes", e.audit_probes},
          {"samples", e.samples},
          {"projection_steps", e.projection_steps},
          {"projection_lr", e.projection_lr},
          {"embed_weight", e.embed_weight},
          {"allow_hash_mismatch", e.allow_hash_mismatch},
          {"seed", e.seed}};
}

EditSection edit_from_json(const json& j) {
  EditSection e;
  apply(j,
        {{"attribute", set(e.attribute)},
         {"alpha", set(e.alpha)},
         {"direction_samples", set(e.direction_samples)},
         {"quantile", set(e.quantile)},
         {"steps", set(e.steps)},
         {"sigma_samples", set(e.sigma_samples)},
         {"audit_probes", set(e.audit_probes)},
         {"samples", set(e.samples)},
         {"projection_steps", set(e.projection_steps)},
         {"projection_lr", set(e.projection_lr)},
         {"embed_weight", set(e.embed_weight)},
         {"allow_hash_mismatch", set(e.allow_hash_mismatch)},
         {"seed", set(e.seed)}},
        "edit");
  return e;
}

json interpolate_json(const InterpolateSection& i) {
  return {{"mode", i.mode}, {"steps", i.steps}, {"pairs", i.pairs}, {"seed", i.seed}};
}

InterpolateSection interpolate_from_json(const json& j) {
  InterpolateSection i;
  apply(j, {{"mode", set(i.mode)}, {"steps", set(i.steps)}, {"pairs", set(i.pairs)}, {"seed", set(i.seed)}},
        "interpolate");
  return i;
}

const std::vector<std::string> kMetricNames = {"ppl", "als", "fid", "pr", "dci", "mahalanobis"};
const std::vector<std::string> kInterpolateModes = {"random", "percentile-top", "percentile-bottom", "projected"};

}  // namespace

RunConfig::RunConfig() {
  extractor.init_seed = 13;
  extractor.training.seed = 1;
}

void RunConfig::resolve() {
  if (schema_version != kSchemaVersion)
    throw SchemaError("unsupported schema_version " + std::to_string(schema_version) + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
  if (seed) {
    const uint64_t s = *seed;
    train.seed = s;
    train.data_seed = s + 1;
    train.noise_seed = s + 2;
    metrics.seed = s;
    edit.seed = s;
    interpolate.seed = s;
  }
  dataset.validate();
  scorer.net.validate();
  extractor.net.validate();
  train.validate();
  if (metrics.list.empty()) throw SchemaError("metrics.list must name at least one metric");
  for (const auto& m : metrics.list)
    if (std::find(kMetricNames.begin(), kMetricNames.end(), m) == kMetricNames.end())
      throw SchemaError("unknown metric '" + m + "'");
  metrics::parse_ppl_space(metrics.ppl_space);
  if (metrics.ppl_pairs < 10) throw SchemaError("metrics.ppl_pairs must be at least 10");
  if (metrics.als_steps < 2) throw SchemaError("metrics.als_steps must be at least 2");
  if (metrics.als_truncation < 0.0 || metrics.als_truncation > 1.0)
    throw SchemaError("metrics.als_truncation must lie in [0, 1]");
  if (metrics.batch < 1) throw SchemaError("metrics.batch must be positive");
  parse_attribute(edit.attribute);
  if (edit.steps < 2) throw SchemaError("edit.steps must be at least 2");
  if (std::find(kInterpolateModes.begin(), kInterpolateModes.end(), interpolate.mode) == kInterpolateModes.end())
    throw SchemaError("unknown interpolation mode '" + interpolate.mode + "'");
  if (interpolate.steps < 1) throw SchemaError("interpolate.steps must be positive");
}

json RunConfig::to_json() const {
  json j = {{"schema_version", schema_version},
            {"data_dir", data_dir},
            {"scorer_path", scorer_path},
            {"extractor_path", extractor_path},
            {"dataset", dataset.to_json()},
            {"scorer", regressor_json(scorer)},
            {"extractor", regressor_json(extractor)},
            {"train", train.to_json()},
            {"metrics", metrics_json(metrics)},
            {"edit", edit_json(edit)},
            {"interpolate", interpolate_json(interpolate)}};
  if (seed) j["seed"] = *seed;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  if (!j.is_object()) throw SchemaError("run config must be a JSON object");
  if (!j.contains("schema_version")) throw SchemaError("run config is missing schema_version");
  try {
    apply(j,
          {{"schema_version", set(c.schema_version)},
           {"seed", [&](const json& v) { c.seed = v.get<uint64_t>(); }},
           {"data_dir", set(c.data_dir)},
           {"scorer_path", set(c.scorer_path)},
           {"extractor_path", set(c.extractor_path)},
           {"dataset", [&](const json& v) { c.dataset = synth::DatasetSpec::from_json(v); }},
           {"scorer", [&](const json& v) { c.scorer = regressor_from_json(v, c.scorer, "scorer"); }},
           {"extractor", [&](const json& v) { c.extractor = regressor_from_json(v, c.extractor, "extractor"); }},
           {"train", [&](const json& v) { c.train = train::TrainConfig::from_json(v); }},
           {"metrics", [&](const json& v) { c.metrics = metrics_from_json(v); }},
           {"edit", [&](const json& v) { c.edit = edit_from_json(v); }},
           {"interpolate", [&](const json& v) { c.interpolate = interpolate_from_json(v); }}},
          "run config");
  } catch (const json::exception& e) {
    throw SchemaError(std::string("run config has a value of the wrong type: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("no config file at " + path.string());
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw SchemaError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

int parse_attribute(const std::string& s) {
  for (int k = 0; k < synth::kFactorCount; ++k)
    if (s == synth::kFactorNames[static_cast<size_t>(k)]) return k;
  if (s.size() == 1 && s[0] >= '0' && s[0] < '0' + synth::kFactorCount) return s[0] - '0';
  throw SchemaError("unknown attribute '" + s + "'");
}

}  // namespace hsrgan::cli
