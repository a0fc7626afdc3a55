#include "hsrgan/hsr/hsr.hpp"

#include <algorithm>
#include <set>

#include "hsrgan/core/error.hpp"

namespace hsrgan::hsr {

using ag::Var;
using nlohmann::json;

std::string to_string(ExtractorKind kind) {
  switch (kind) {
    case ExtractorKind::trained: return "trained";
    case ExtractorKind::random_init: return "random-init";
    case ExtractorKind::external_plugin: return "external-plugin";
  }
  return "unknown";
}

ExtractorKind parse_extractor_kind(const std::string& s) {
  if (s == "trained") return ExtractorKind::trained;
  if (s == "random-init") return ExtractorKind::random_init;
  if (s == "external-plugin") return ExtractorKind::external_plugin;
  throw SchemaError("extractor kind must be trained, random-init or external-plugin; got '" + s + "'");
}

std::string to_string(TapGroup group) {
  switch (group) {
    case TapGroup::high: return "high";
    case TapGroup::mid: return "mid";
    case TapGroup::low: return "low";
    case TapGroup::all: return "all";
  }
  return "unknown";
}

TapGroup parse_tap_group(const std::string& s) {
  if (s == "high") return TapGroup::high;
  if (s == "mid") return TapGroup::mid;
  if (s == "low") return TapGroup::low;
  if (s == "all") return TapGroup::all;
  throw SchemaError("tap group must be high, mid, low or all; got '" + s + "'");
}

PluginManifest PluginManifest::from_json(const json& j) {
  PluginManifest m;
  try {
    m.stage_channels = j.at("stage_channels").get<std::vector<int64_t>>();
    m.grid = j.value("grid", 0);
  } catch (const json::exception& e) {
    throw SchemaError("invalid extractor plugin manifest: " + std::string(e.what()));
  }
  return m;
}

template <typename T>
Extractor<T>::Extractor(ExtractorKind kind, std::shared_ptr<model::FactorNet<T>> net)
    : kind_(kind), net_(std::move(net)) {
  if (kind == ExtractorKind::external_plugin) throw ConfigError("plugin extractors need a feature function");
  if (!net_) throw ConfigError("extractor network is null");
  net_->freeze();
  for (int w : net_->config().widths) stage_channels_.push_back(w);
}

template <typename T>
Extractor<T>::Extractor(PluginFn fn, PluginManifest manifest, int resolution)
    : kind_(ExtractorKind::external_plugin), plugin_(std::move(fn)), stage_channels_(manifest.stage_channels),
      declared_grid_(manifest.grid) {
  if (!plugin_) throw ConfigError("plugin extractor function is empty");
  ag::NoGradGuard no_grad;
  auto probe = plugin_(Var<T>::constant(Tensor<T>({1, 3, resolution, resolution})));
  if (probe.size() != stage_channels_.size())
    throw ConfigError("plugin extractor returned " + std::to_string(probe.size()) + " stages but its manifest declares " +
                      std::to_string(stage_channels_.size()));
  for (size_t i = 0; i < probe.size(); ++i)
    if (probe[i].value().rank() != 4 || probe[i].dim(1) != stage_channels_[i])
      throw ConfigError("plugin extractor stage " + std::to_string(i + 1) + " has shape " +
                        hsrgan::to_string(probe[i].shape()) + " but the manifest declares " +
                        std::to_string(stage_channels_[i]) + " channels");
}

template <typename T>
ExtractorKind Extractor<T>::kind() const {
  if (!kind_) throw ConfigError("feature extractor is not configured");
  return *kind_;
}

template <typename T>
std::vector<Var<T>> Extractor<T>::features(const Var<T>& images) const {
  if (!kind_) throw ConfigError("feature extractor is not configured");
  if (plugin_) return plugin_(images);
  return net_->stages(images);
}

template <typename T>
std::vector<Var<T>> Extractor<T>::extract(const Var<T>& images, const std::vector<int>& stages, int grid) const {
  auto all = features(images);
  std::vector<Var<T>> out;
  for (int s : stages) {
    if (s < 1 || s > static_cast<int>(all.size())) throw ConfigError("extractor stage " + std::to_string(s) + " does not exist");
    out.push_back(ag::bilinear_resize(all[static_cast<size_t>(s - 1)], grid, grid));
  }
  return out;
}

void HSRConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("hsr lambda must be >= 0");
  if (!(warmup_kimg >= 0.0)) throw ConfigError("hsr warmup_kimg must be >= 0");
  if (predictor_hidden < 1) throw ConfigError("predictor_hidden must be >= 1");
  if (grid < 0) throw ConfigError("hsr grid must be >= 0");
}

json HSRConfig::to_json() const {
  std::vector<std::string> g;
  for (auto x : groups) g.push_back(to_string(x));
  return {{"lambda", lambda},
          {"warmup_kimg", warmup_kimg},
          {"stop_gradient", stop_gradient},
          {"groups", g},
          {"extractor", to_string(extractor)},
          {"predictor_hidden", predictor_hidden},
          {"extractor_stages", extractor_stages},
          {"grid", grid}};
}

HSRConfig HSRConfig::from_json(const json& j) {
  HSRConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "lambda") c.lambda = v.get<double>();
    else if (key == "warmup_kimg") c.warmup_kimg = v.get<double>();
    else if (key == "stop_gradient") c.stop_gradient = v.get<bool>();
    else if (key == "groups") {
      c.groups.clear();
      for (const auto& g : v) c.groups.push_back(parse_tap_group(g.get<std::string>()));
    } else if (key == "extractor") c.extractor = parse_extractor_kind(v.get<std::string>());
    else if (key == "predictor_hidden") c.predictor_hidden = v.get<int>();
    else if (key == "extractor_stages") c.extractor_stages = v.get<std::vector<int>>();
    else if (key == "grid") c.grid = v.get<int>();
    else throw SchemaError("unknown hsr key '" + key + "'");
  }
  return c;
}

std::vector<int> default_extractor_stages(int n, int stages) {
  if (n < 1) return {};
  if (n > stages) throw ConfigError("more generator taps than extractor stages");
  const int step = std::max(1, stages / n);
  std::vector<int> out;
  for (int i = n - 1; i >= 0; --i) out.push_back(stages - i * step);
  return out;
}

std::vector<int> group_members(TapGroup group, int n) {
  std::vector<int> out;
  if (n <= 0) return out;
  const int w = std::max(1, n - 2);
  int start = 0, len = n;
  switch (group) {
    case TapGroup::all: break;
    case TapGroup::high: len = w; break;
    case TapGroup::low: start = n - w; len = w; break;
    case TapGroup::mid: start = (n - w) / 2; len = w; break;
  }
  for (int i = start; i < start + len; ++i) out.push_back(i);
  return out;
}

int default_grid(int resolution) { return std::max(1, 7 * resolution / 32); }

template <typename T>
PredictorHead<T>::PredictorHead(int64_t in, int64_t hidden, int64_t out, Rng& rng)
    : fc1_(in, hidden, 1, rng), fc2_(hidden, out, 1, rng) {}

template <typename T>
Var<T> PredictorHead<T>::operator()(const Var<T>& x) const {
  return fc2_(ag::leaky_relu(fc1_(x), 0.2));
}

template <typename T>
void PredictorHead<T>::collect(const std::string& prefix, nn::ParamList<T>& out) const {
  fc1_.collect(prefix + ".fc1", out);
  fc2_.collect(prefix + ".fc2", out);
}

template <typename T>
Var<T> alignment_loss(const std::vector<Var<T>>& predictions, const std::vector<Var<T>>& targets) {
  if (predictions.size() != targets.size()) throw ShapeError("alignment_loss: prediction/target count mismatch");
  if (predictions.empty()) return Var<T>::scalar(T(0));
  Var<T> total;
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].shape() != targets[i].shape())
      throw ShapeError("alignment_loss: prediction " + hsrgan::to_string(predictions[i].shape()) + " vs target " +
                       hsrgan::to_string(targets[i].shape()));
    Var<T> d = predictions[i] - targets[i];
    Var<T> term = ag::mean(d * d);
    total = total.defined() ? total + term : term;
  }
  return ag::scale(total, 1.0 / static_cast<double>(predictions.size()));
}

template <typename T>
HSR<T>::HSR(const HSRConfig& config, const std::map<int, int64_t>& tap_channels, const Extractor<T>* extractor,
            int resolution, uint64_t seed)
    : config_(config), extractor_(extractor) {
  config_.validate();
  grid_ = config_.grid > 0 ? config_.grid : default_grid(resolution);
  const int n = static_cast<int>(tap_channels.size());
  std::set<int> active;
  for (TapGroup g : config_.groups)
    for (int i : group_members(g, n)) active.insert(i);
  if (active.empty()) return;

  if (!extractor_ || !extractor_->configured()) throw ConfigError("hsr needs a configured feature extractor");
  if (extractor_->declared_grid() > 0 && config_.grid == 0) grid_ = extractor_->declared_grid();
  std::vector<int> stages = config_.extractor_stages.empty()
                                ? default_extractor_stages(n, extractor_->stage_count())
                                : config_.extractor_stages;
  if (static_cast<int>(stages.size()) != n)
    throw ConfigError("hsr needs one extractor stage per generator tap (" + std::to_string(n) + "), got " +
                      std::to_string(stages.size()));
  std::sort(stages.begin(), stages.end(), std::greater<>());
  for (int s : stages)
    if (s < 1 || s > extractor_->stage_count()) throw ConfigError("extractor stage " + std::to_string(s) + " out of range");

  Rng rng(seed);
  int i = 0;
  for (const auto& [res, channels] : tap_channels) {
    const int stage = stages[static_cast<size_t>(i)];
    const int64_t target = extractor_->stage_channels()[static_cast<size_t>(stage - 1)];
    pairs_.push_back({res, stage, active.count(i) > 0, channels, target});
    heads_.emplace_back(channels, config_.predictor_hidden, target, rng);
    ++i;
  }

  // Build-time shape check against an actual extractor pass.
  ag::NoGradGuard no_grad;
  std::vector<int> wanted;
  for (const auto& p : pairs_) wanted.push_back(p.stage);
  auto probe = extractor_->extract(Var<T>::constant(Tensor<T>({1, 3, resolution, resolution})), wanted, grid_);
  for (size_t k = 0; k < pairs_.size(); ++k)
    if (probe[k].dim(1) != heads_[k].out_channels())
      throw ConfigError("predictor head for tap " + std::to_string(pairs_[k].tap_resolution) + " emits " +
                        std::to_string(heads_[k].out_channels()) + " channels but extractor stage " +
                        std::to_string(pairs_[k].stage) + " yields " + std::to_string(probe[k].dim(1)));
}

template <typename T>
bool HSR<T>::any_active() const {
  return std::any_of(pairs_.begin(), pairs_.end(), [](const Pair& p) { return p.active; });
}

template <typename T>
bool HSR<T>::warmed_up(int64_t images_seen) const {
  return static_cast<double>(images_seen) >= config_.warmup_kimg * 1000.0;
}

template <typename T>
HSRResult<T> HSR<T>::loss(const std::map<int, Var<T>>& taps, const Var<T>& image, int64_t images_seen,
                          bool sever_predictor) const {
  HSRResult<T> result;
  result.loss = Var<T>::scalar(T(0));
  if (!any_active() || !warmed_up(images_seen)) return result;
  std::vector<int> stages;
  for (const auto& p : pairs_)
    if (p.active) stages.push_back(p.stage);
  const Var<T> source = config_.stop_gradient ? ag::detach(image) : image;
  std::vector<Var<T>> targets = extractor_->extract(source, stages, grid_);
  std::vector<Var<T>> preds;
  for (size_t k = 0; k < pairs_.size(); ++k) {
    if (!pairs_[k].active) continue;
    auto it = taps.find(pairs_[k].tap_resolution);
    if (it == taps.end()) throw ConfigError("generator tap " + std::to_string(pairs_[k].tap_resolution) + " missing");
    Var<T> tap = sever_predictor ? ag::detach(it->second) : it->second;
    preds.push_back(heads_[k](ag::bilinear_resize(tap, grid_, grid_)));
  }
  for (size_t k = 0; k < preds.size(); ++k) {
    const Tensor<T>& a = preds[k].value();
    const Tensor<T>& b = targets[k].value();
    double m = 0;
    for (int64_t e = 0; e < a.numel(); ++e) m += (double(a[e]) - double(b[e])) * (double(a[e]) - double(b[e]));
    result.per_pair.push_back(m / static_cast<double>(a.numel()));
  }
  result.loss = alignment_loss(preds, targets);
  result.active = true;
  return result;
}

template <typename T>
nn::ParamList<T> HSR<T>::parameters() const {
  nn::ParamList<T> p;
  for (size_t k = 0; k < heads_.size(); ++k)
    heads_[k].collect("hsr.head" + std::to_string(pairs_[k].tap_resolution), p);
  return p;
}

template class Extractor<float>;
template class Extractor<double>;
template class PredictorHead<float>;
template class PredictorHead<double>;
template class HSR<float>;
template class HSR<double>;
template Var<float> alignment_loss(const std::vector<Var<float>>&, const std::vector<Var<float>>&);
template Var<double> alignment_loss(const std::vector<Var<double>>&, const std::vector<Var<double>>&);

}  // namespace hsrgan::hsr
