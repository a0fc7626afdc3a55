#include "hsrgan/model/factor_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hsrgan/core/error.hpp"

namespace hsrgan::model {

using ag::Var;
using nlohmann::json;

void FactorNetConfig::validate() const {
  if (widths.empty()) throw ConfigError("factor net needs at least one stage");
  if (resolution >> widths.size() < 1) throw ConfigError("too many stages for the input resolution");
  for (int w : widths)
    if (w < 1) throw ConfigError("stage widths must be positive");
  if (hidden < 1) throw ConfigError("hidden width must be positive");
}

int FactorNetConfig::stage_resolution(int stage) const { return resolution >> stage; }

json FactorNetConfig::to_json() const {
  return {{"resolution", resolution}, {"widths", widths}, {"hidden", hidden}};
}

FactorNetConfig FactorNetConfig::from_json(const json& j) {
  FactorNetConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "resolution") c.resolution = v.get<int>();
    else if (key == "widths") c.widths = v.get<std::vector<int>>();
    else if (key == "hidden") c.hidden = v.get<int>();
    else throw SchemaError("unknown factor-net key '" + key + "'");
  }
  return c;
}

template <typename T>
FactorNet<T>::FactorNet(const FactorNetConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  int64_t in = 3;
  for (int w : config_.widths) {
    convs_.emplace_back(in, w, 3, rng);
    in = w;
  }
  const int64_t r = config_.stage_resolution(config_.stage_count());
  fc_ = nn::Dense<T>(in * r * r, config_.hidden, rng);
  out_ = nn::Dense<T>(config_.hidden, synth::kFactorCount, rng);
}

template <typename T>
std::vector<Var<T>> FactorNet<T>::stages(const Var<T>& images) const {
  if (images.value().rank() != 4 || images.dim(1) != 3)
    throw ShapeError("factor net expects [B, 3, H, W], got " + to_string(images.shape()));
  Var<T> x = images;
  if (x.dim(2) != config_.resolution || x.dim(3) != config_.resolution)
    x = ag::bilinear_resize(x, config_.resolution, config_.resolution);
  std::vector<Var<T>> out;
  for (const auto& conv : convs_) {
    x = ag::avg_pool2x(ag::leaky_relu(conv(x), 0.2));
    out.push_back(x);
  }
  return out;
}

template <typename T>
Var<T> FactorNet<T>::head(const Var<T>& deepest) const {
  Var<T> flat = ag::reshape(deepest, Shape{deepest.dim(0), deepest.numel() / deepest.dim(0)});
  return out_(ag::leaky_relu(fc_(flat), 0.2));
}

template <typename T>
Var<T> FactorNet<T>::predict(const Var<T>& images) const {
  return head(stages(images).back());
}

template <typename T>
Var<T> FactorNet<T>::embed(const Var<T>& images) const {
  return ag::global_avg_pool(stages(images).back());
}

template <typename T>
nn::ParamList<T> FactorNet<T>::parameters() const {
  nn::ParamList<T> p;
  for (size_t i = 0; i < convs_.size(); ++i) convs_[i].collect("stage" + std::to_string(i + 1) + ".conv", p);
  fc_.collect("head.fc", p);
  out_.collect("head.out", p);
  return p;
}

template <typename T>
void FactorNet<T>::freeze() {
  for (auto& p : parameters()) p.var.node()->requires_grad = false;
  frozen_ = true;
}

template <typename T>
std::array<double, synth::kFactorCount> evaluate_regressor(const FactorNet<T>& net, const synth::Dataset& data,
                                                           int64_t begin, int64_t end, int64_t batch) {
  ag::NoGradGuard no_grad;
  std::array<double, synth::kFactorCount> mse{};
  if (end <= begin) return mse;
  std::vector<int64_t> idx;
  for (int64_t start = begin; start < end; start += batch) {
    idx.clear();
    for (int64_t i = start; i < std::min(end, start + batch); ++i) idx.push_back(i);
    Tensor<float> images = data.batch(idx);
    Tensor<float> target = data.factor_batch(idx);
    Var<T> pred = net.predict(Var<T>::constant(images.template cast<T>()));
    for (size_t i = 0; i < idx.size(); ++i)
      for (int k = 0; k < synth::kFactorCount; ++k) {
        const double d = double(pred.value()[static_cast<int64_t>(i) * synth::kFactorCount + k]) -
                         target[static_cast<int64_t>(i) * synth::kFactorCount + k];
        mse[k] += d * d;
      }
  }
  for (auto& m : mse) m /= static_cast<double>(end - begin);
  return mse;
}

json RegressorReport::to_json() const {
  json mse = json::object();
  for (int k = 0; k < synth::kFactorCount; ++k) mse[std::string(synth::kFactorNames[k])] = validation_mse[k];
  return {{"validation_mse", mse},
          {"epochs", epochs},
          {"train_count", train_count},
          {"validation_count", validation_count},
          {"converged", converged}};
}

RegressorReport train_regressor(FactorNet<float>& net, const synth::Dataset& data, const RegressorTraining& options,
                                const std::function<void(const std::string&)>& log) {
  if (net.frozen()) throw ConfigError("cannot train a frozen network");
  const int64_t n = data.size();
  const int64_t val = std::min(options.validation_count, n / 5);
  const int64_t train = n - val;
  if (train < options.batch || val < 1)
    throw ConfigError("dataset too small to train a regressor (" + std::to_string(n) + " samples)");

  nn::Adam<float> opt(net.parameters(), nn::AdamOptions{options.lr, 0.9, 0.999, 1e-8});
  auto params = nn::vars(net.parameters());
  Rng rng(options.seed);
  std::vector<int64_t> order(static_cast<size_t>(train));
  std::iota(order.begin(), order.end(), 0);

  RegressorReport report;
  report.train_count = train;
  report.validation_count = val;
  for (int64_t epoch = 0; epoch < options.max_epochs; ++epoch) {
    for (int64_t i = train - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    // Cosine decay over the epoch budget.
    const double lr = options.lr * 0.5 * (1.0 + std::cos(M_PI * double(epoch) / double(options.max_epochs)));
    for (int64_t start = 0; start + options.batch <= train; start += options.batch) {
      std::span<const int64_t> idx(order.data() + start, static_cast<size_t>(options.batch));
      std::unique_ptr<bool[]> flip(new bool[static_cast<size_t>(options.batch)]);
      for (int64_t b = 0; b < options.batch; ++b) flip[b] = options.random_flip && rng.bernoulli(0.5);
      Tensor<float> images = data.batch(idx, std::span<const bool>(flip.get(), static_cast<size_t>(options.batch)));
      Tensor<float> target = data.factor_batch(idx);
      for (int64_t b = 0; b < options.batch; ++b)
        if (flip[b]) target[b * synth::kFactorCount + 1] = -target[b * synth::kFactorCount + 1];
      Var<float> pred = net.predict(Var<float>::constant(std::move(images)));
      Var<float> diff = pred - Var<float>::constant(std::move(target));
      Var<float> loss = ag::mean(diff * diff);
      opt.step(ag::grad(loss, params), lr);
    }
    report.epochs = epoch + 1;
    report.validation_mse = evaluate_regressor(net, data, train, n);
    if (log) {
      std::ostringstream os;
      os << "epoch " << epoch + 1 << " validation mse";
      for (double m : report.validation_mse) os << ' ' << m;
      log(os.str());
    }
    const double worst = *std::max_element(report.validation_mse.begin(), report.validation_mse.end());
    if (worst < options.target_mse) {
      report.converged = true;
      net.freeze();
      return report;
    }
  }
  std::ostringstream os;
  os << "regressor did not reach validation MSE < " << options.target_mse << " within " << options.max_epochs
     << " epochs; achieved";
  for (int k = 0; k < synth::kFactorCount; ++k) os << ' ' << synth::kFactorNames[k] << '=' << report.validation_mse[k];
  throw ConvergenceError(os.str());
}

template class FactorNet<float>;
template class FactorNet<double>;
template std::array<double, synth::kFactorCount> evaluate_regressor(const FactorNet<float>&, const synth::Dataset&,
                                                                    int64_t, int64_t, int64_t);
template std::array<double, synth::kFactorCount> evaluate_regressor(const FactorNet<double>&, const synth::Dataset&,
                                                                    int64_t, int64_t, int64_t);

}  // namespace hsrgan::model
