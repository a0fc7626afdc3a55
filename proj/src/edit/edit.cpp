#include "hsrgan/edit/edit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "hsrgan/autograd/ops.hpp"
#include "hsrgan/core/error.hpp"
#include "hsrgan/core/log.hpp"
#include "hsrgan/io/tensor_file.hpp"
#include "hsrgan/nn/adam.hpp"
#include "hsrgan/synth/synthdata.hpp"

namespace hsrgan::edit {

using ag::Var;
using nlohmann::json;

namespace {

Matrix normal_matrix(int64_t rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int64_t i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// Maps z in batches and scores the renders; returns w and the full score matrix.
std::pair<Matrix, Matrix> sample_scored(const LatentModel& model, const ImageFn& score, int64_t n, Rng& rng,
                                        int64_t batch) {
  Matrix w(n, model.w_dim), s;
  for (int64_t start = 0; start < n; start += batch) {
    const int64_t b = std::min(batch, n - start);
    Matrix wb = model.map(normal_matrix(b, model.z_dim, rng));
    Matrix sb = score(model.synthesize(wb));
    if (s.size() == 0) s.resize(n, sb.cols());
    w.middleRows(start, b) = wb;
    s.middleRows(start, b) = sb;
  }
  return {w, s};
}

// Indices of the lowest and highest `k` scores, ties broken by index.
std::pair<std::vector<int64_t>, std::vector<int64_t>> extremes(const Vector& s, int64_t k) {
  std::vector<int64_t> order(static_cast<size_t>(s.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) { return s(a) < s(b); });
  std::vector<int64_t> low(order.begin(), order.begin() + k), high(order.end() - k, order.end());
  return {low, high};
}

void require_unit(const Vector& d) {
  if (d.size() == 0 || std::abs(d.norm() - 1.0) > 1e-8) throw RangeError("edit direction must have unit norm");
}

Tensor<float> row_tensor(const Eigen::RowVectorXd& r) {
  Tensor<float> t({1, static_cast<int64_t>(r.size())});
  for (Eigen::Index j = 0; j < r.size(); ++j) t[j] = static_cast<float>(r(j));
  return t;
}

struct Losses {
  double pixel_mse;
  double embed_distance;
  double total;
};

}  // namespace

// ---------------------------------------------------------------------------

json EditDirection::to_json() const {
  json j = {{"attribute", attribute},
            {"direction", std::vector<double>(direction.data(), direction.data() + direction.size())},
            {"offset", offset},
            {"accuracy", accuracy},
            {"n_samples", n_samples},
            {"quantile", quantile},
            {"warnings", warnings},
            {"checkpoint_hash", checkpoint_hash}};
  if (attribute >= 0 && attribute < synth::kFactorCount)
    j["attribute_name"] = std::string(synth::kFactorNames[static_cast<size_t>(attribute)]);
  return j;
}

EditDirection EditDirection::from_json(const json& j) {
  static const std::vector<std::string> known = {"attribute", "attribute_name", "direction", "offset",
                                                 "accuracy",  "n_samples",      "quantile",  "warnings",
                                                 "checkpoint_hash"};
  if (!j.is_object()) throw SchemaError("edit direction must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw SchemaError("unknown edit direction key '" + key + "'");
  EditDirection d;
  try {
    d.attribute = j.at("attribute").get<int>();
    const auto v = j.at("direction").get<std::vector<double>>();
    d.direction = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    d.offset = j.value("offset", 0.0);
    d.accuracy = j.value("accuracy", 0.0);
    d.n_samples = j.value("n_samples", int64_t{0});
    d.quantile = j.value("quantile", 0.0);
    d.warnings = j.value("warnings", std::vector<std::string>{});
    d.checkpoint_hash = j.value("checkpoint_hash", std::string{});
  } catch (const json::exception& e) {
    throw SchemaError(std::string("invalid edit direction: ") + e.what());
  }
  require_unit(d.direction);
  return d;
}

EditDirection find_direction(const LatentModel& model, const ImageFn& score, int attribute,
                             const DirectionOptions& options) {
  if (options.n_samples < 1000) throw RangeError("find_direction needs at least 1000 samples");
  if (!(options.quantile > 0.0 && options.quantile <= 0.5)) throw RangeError("quantile must lie in (0, 0.5]");
  if (!(options.holdout_fraction > 0.0 && options.holdout_fraction < 1.0))
    throw RangeError("holdout_fraction must lie in (0, 1)");
  Rng rng(options.seed);
  auto [w, s] = sample_scored(model, score, options.n_samples, rng, options.batch);
  if (attribute < 0 || attribute >= s.cols())
    throw ConfigError("attribute " + std::to_string(attribute) + " is outside the scorer's " +
                      std::to_string(s.cols()) + " outputs");

  const int64_t n_probe = static_cast<int64_t>(std::llround(options.n_samples * options.holdout_fraction));
  const int64_t n_fit = options.n_samples - n_probe;
  const Vector s_fit = s.col(attribute).head(n_fit), s_probe = s.col(attribute).tail(n_probe);
  const Matrix w_fit = w.topRows(n_fit), w_probe = w.bottomRows(n_probe);

  const int64_t k = static_cast<int64_t>(std::floor(options.quantile * n_fit));
  if (k < 1) throw RangeError("quantile selects no samples");
  auto [low, high] = extremes(s_fit, k);
  const Eigen::Index dim = w.cols();
  Matrix x(2 * k, dim + 1);
  Vector y(2 * k);
  for (int64_t i = 0; i < k; ++i) {
    x.row(i) << w_fit.row(high[i]), 1.0;
    y(i) = 1.0;
    x.row(k + i) << w_fit.row(low[i]), 1.0;
    y(k + i) = -1.0;
  }
  const Vector beta = x.colPivHouseholderQr().solve(y);
  const double norm = beta.head(dim).norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw RangeError("degenerate attribute separator");

  EditDirection out;
  out.attribute = attribute;
  out.direction = beta.head(dim) / norm;
  out.offset = beta(dim) / norm;
  out.n_samples = options.n_samples;
  out.quantile = options.quantile;

  // Sign from the probe split: +d must raise the score.
  const Vector proj = w_probe * out.direction;
  const double cov = ((proj.array() - proj.mean()) * (s_probe.array() - s_probe.mean())).sum();
  if (cov < 0.0) {
    out.direction = -out.direction;
    out.offset = -out.offset;
  }
  const int64_t kp = std::max<int64_t>(1, static_cast<int64_t>(std::floor(options.quantile * n_probe)));
  auto [plow, phigh] = extremes(s_probe, kp);
  int64_t correct = 0;
  for (int64_t i : phigh) correct += w_probe.row(i).dot(out.direction) + out.offset > 0.0;
  for (int64_t i : plow) correct += w_probe.row(i).dot(out.direction) + out.offset <= 0.0;
  out.accuracy = static_cast<double>(correct) / static_cast<double>(2 * kp);
  if (out.accuracy < options.min_accuracy) {
    const std::string msg = "separator accuracy " + std::to_string(out.accuracy) + " for attribute " +
                            std::to_string(attribute) + " is below " + std::to_string(options.min_accuracy);
    out.warnings.push_back(msg);
    warn(msg);
  }
  return out;
}

void save_direction(const std::filesystem::path& path, const EditDirection& direction) {
  io::write_atomically(path, direction.to_json().dump(2) + "\n");
}

EditDirection load_direction(const std::filesystem::path& path, const std::string& checkpoint_hash,
                             bool allow_mismatch) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("no edit direction at " + path.string());
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw SchemaError("edit direction is not valid JSON: " + std::string(e.what()));
  }
  EditDirection d = EditDirection::from_json(j);
  if (!allow_mismatch && d.checkpoint_hash != checkpoint_hash)
    throw HashMismatchError("edit direction was fitted on checkpoint " + d.checkpoint_hash + ", not " +
                            checkpoint_hash);
  return d;
}

Matrix apply_edit(const Matrix& w, const Vector& d, double alpha) {
  require_unit(d);
  if (w.cols() != d.size()) throw ShapeError("edit direction dimension does not match w");
  return w.rowwise() + alpha * d.transpose();
}

double sigma_w(const LatentModel& model, int64_t samples, uint64_t seed) {
  if (samples < 2) throw RangeError("sigma_w needs at least 2 samples");
  Rng rng(seed);
  Matrix w(samples, model.w_dim);
  for (int64_t s = 0; s < samples; s += 256) {
    const int64_t b = std::min<int64_t>(256, samples - s);
    w.middleRows(s, b) = model.map(normal_matrix(b, model.z_dim, rng));
  }
  const Matrix centered = w.rowwise() - w.colwise().mean();
  const double mean_var = centered.array().square().sum() / static_cast<double>((samples - 1) * w.cols());
  return std::sqrt(mean_var);
}

MonotonicityAudit audit_monotonicity(const LatentModel& model, const ImageFn& score, int attribute,
                                     const Vector& d, double sigma, int64_t probes, uint64_t seed) {
  MonotonicityAudit audit;
  for (int k = 0; k <= 6; ++k) audit.alphas.push_back(0.5 * k * sigma);
  Rng rng(seed);
  const Matrix w = model.map(normal_matrix(probes, model.z_dim, rng));
  Matrix s(probes, static_cast<Eigen::Index>(audit.alphas.size()));
  for (size_t a = 0; a < audit.alphas.size(); ++a) {
    const Matrix scores = score(model.synthesize(apply_edit(w, d, audit.alphas[a])));
    if (attribute < 0 || attribute >= scores.cols()) throw ConfigError("attribute outside the scorer's outputs");
    s.col(static_cast<Eigen::Index>(a)) = scores.col(attribute);
  }
  audit.probes = probes;
  for (int64_t i = 0; i < probes; ++i) {
    bool monotone = true;
    for (Eigen::Index a = 1; a < s.cols(); ++a) monotone = monotone && s(i, a) >= s(i, a - 1);
    audit.monotone += monotone;
  }
  audit.fraction = probes ? static_cast<double>(audit.monotone) / static_cast<double>(probes) : 0.0;
  return audit;
}

// ---------------------------------------------------------------------------

json ProjectionResult::to_json() const {
  return {{"pixel_mse", pixel_mse},           {"embed_distance", embed_distance}, {"initial_loss", initial_loss},
          {"final_loss", final_loss},         {"steps", steps},                   {"diverged", diverged},
          {"checkpoint_losses", checkpoint_losses}};
}

ProjectionResult project_image(const model::Generator<float>& g, const model::FactorNet<float>& embed_net,
                               const Tensor<float>& target, const Tensor<float>& w_mean,
                               const ProjectionOptions& options, const Matrix* init) {
  const auto& gc = g.config();
  if (target.shape() != Shape{1, 3, gc.resolution, gc.resolution})
    throw ShapeError("projection target must be [1, 3, " + std::to_string(gc.resolution) + ", " +
                     std::to_string(gc.resolution) + "], got " + to_string(target.shape()));
  if (!embed_net.frozen()) throw ConfigError("the projection embedder must be frozen");
  if (options.steps < 0) throw RangeError("projection steps must be non-negative");
  if (options.checkpoint_every < 1) throw RangeError("checkpoint_every must be positive");
  const int blocks = g.block_count();
  Matrix start(blocks, gc.w_dim);
  if (init) {
    if (init->rows() != blocks || init->cols() != gc.w_dim) throw ShapeError("projection init has the wrong shape");
    start = *init;
  } else {
    if (w_mean.numel() != gc.w_dim) throw ShapeError("w_mean has the wrong size");
    for (int b = 0; b < blocks; ++b)
      for (int j = 0; j < gc.w_dim; ++j) start(b, j) = w_mean[j];
  }

  std::vector<Var<float>> ws;
  nn::ParamList<float> params;
  for (int b = 0; b < blocks; ++b) {
    ws.push_back(Var<float>::parameter(row_tensor(start.row(b))));
    params.push_back({"w" + std::to_string(b), ws.back()});
  }
  nn::Adam<float> opt(params, {options.lr, 0.9, 0.999, 1e-8});

  const Var<float> target_var = Var<float>::constant(target);
  Var<float> target_embed;
  {
    ag::NoGradGuard off;
    target_embed = Var<float>::constant(embed_net.embed(target_var).value());
  }
  auto loss_of = [&](const model::ExtendedStyle<float>& styles) {
    Var<float> image = g.synthesize(styles).image;
    Var<float> diff = image - target_var;
    Var<float> mse = ag::mean(diff * diff);
    Var<float> de = embed_net.embed(image) - target_embed;
    Var<float> dist = ag::sum(de * de);
    return std::make_tuple(mse + ag::scale(dist, options.embed_weight), mse, dist);
  };
  auto evaluate = [&]() {
    ag::NoGradGuard off;
    auto [total, mse, dist] = loss_of(ws);
    return Losses{mse.item(), dist.item(), total.item()};
  };

  ProjectionResult result;
  const Losses initial = evaluate();
  result.initial_loss = initial.total;
  result.checkpoint_losses.push_back(initial.total);
  Rng noise_rng(options.seed);
  for (int step = 0; step < options.steps; ++step) {
    model::ExtendedStyle<float> styles = ws;
    const double ramp = std::max(0.0, 1.0 - step / (0.75 * options.steps));
    const double strength = options.noise_scale * ramp * ramp;
    if (strength > 0.0)
      for (auto& s : styles) s = s + Var<float>::constant(nn::randn<float>(s.value().shape(), noise_rng, strength));
    auto [total, mse, dist] = loss_of(styles);
    const auto grads = ag::grad(total, ws);
    const double lr = options.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / options.steps));
    opt.step(grads, lr);
    if ((step + 1) % options.checkpoint_every == 0 && step + 1 < options.steps)
      result.checkpoint_losses.push_back(evaluate().total);
  }
  const Losses final_losses = options.steps > 0 ? evaluate() : initial;
  if (options.steps > 0) result.checkpoint_losses.push_back(final_losses.total);

  result.w_plus.resize(blocks, gc.w_dim);
  for (int b = 0; b < blocks; ++b)
    for (int j = 0; j < gc.w_dim; ++j) result.w_plus(b, j) = ws[static_cast<size_t>(b)].value()[j];
  result.pixel_mse = final_losses.pixel_mse;
  result.embed_distance = final_losses.embed_distance;
  result.final_loss = final_losses.total;
  result.steps = options.steps;
  result.diverged = !std::isfinite(final_losses.total) || final_losses.total > initial.total;
  return result;
}

Tensor<float> render(const model::Generator<float>& g, const std::vector<Matrix>& w_plus) {
  const int blocks = g.block_count(), dim = g.config().w_dim;
  const int64_t n = static_cast<int64_t>(w_plus.size());
  if (n == 0) throw RangeError("nothing to render");
  model::ExtendedStyle<float> styles;
  for (int b = 0; b < blocks; ++b) {
    Tensor<float> t({n, dim});
    for (int64_t i = 0; i < n; ++i) {
      const Matrix& m = w_plus[static_cast<size_t>(i)];
      if (m.rows() != blocks || m.cols() != dim) throw ShapeError("W+ code has the wrong shape");
      for (int j = 0; j < dim; ++j) t[i * dim + j] = static_cast<float>(m(b, j));
    }
    styles.push_back(Var<float>::constant(std::move(t)));
  }
  ag::NoGradGuard off;
  return g.synthesize(styles).image.value();
}

std::vector<Matrix> interpolate(const Matrix& a, const Matrix& b, int steps) {
  if (steps < 1) throw RangeError("interpolation needs at least one step");
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("interpolation endpoints differ in shape");
  std::vector<Matrix> out;
  // Each frame is measured from the nearer endpoint, so equal endpoints give
  // exact copies and swapping the endpoints mirrors the frames exactly.
  for (int k = 0; k <= steps; ++k) {
    if (2 * k == steps)
      out.push_back(0.5 * (a + b));
    else if (2 * k < steps)
      out.push_back(a + (static_cast<double>(k) / steps) * (b - a));
    else
      out.push_back(b + (static_cast<double>(steps - k) / steps) * (a - b));
  }
  return out;
}

LinearityEval edit_linearity_eval(const model::Generator<float>& g, const model::FactorNet<float>& embed_net,
                                  const ImageFn& score, const Tensor<float>& target, const Vector& d, double alpha,
                                  int steps, const Tensor<float>& w_mean, const ProjectionOptions& options) {
  if (steps < 2) throw RangeError("linearity evaluation needs at least 2 interpolation steps");
  LinearityEval eval;
  eval.source = project_image(g, embed_net, target, w_mean, options);
  if (eval.source.diverged)
    throw ConvergenceError("source projection diverged: " + eval.source.to_json().dump());
  const Matrix edited_code = apply_edit(eval.source.w_plus, d, alpha);
  const Tensor<float> edited_image = render(g, {edited_code});
  eval.edited = project_image(g, embed_net, edited_image, w_mean, options, &edited_code);
  if (eval.edited.diverged)
    throw ConvergenceError("edited projection diverged: " + eval.edited.to_json().dump());

  const auto codes = interpolate(eval.source.w_plus, eval.edited.w_plus, steps);
  eval.scores = score(render(g, codes).cast<double>());
  eval.deviation = metrics::als_deviation(eval.scores);
  for (int k = 0; k <= steps; ++k) eval.t.push_back(static_cast<double>(k) / steps);
  const Eigen::Index m = eval.scores.cols();
  double total = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    const double col = eval.deviation.col(j).sum();
    eval.per_attribute.push_back(col / steps);
    total += col;
  }
  eval.mean = total / (static_cast<double>(steps) * static_cast<double>(m));
  return eval;
}

void write_linearity_csv(const std::filesystem::path& path, const LinearityEval& eval) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "t,attribute,score,deviation\n";
  for (Eigen::Index k = 0; k < eval.scores.rows(); ++k)
    for (Eigen::Index j = 0; j < eval.scores.cols(); ++j) {
      const std::string name = eval.scores.cols() == synth::kFactorCount
                                   ? std::string(synth::kFactorNames[static_cast<size_t>(j)])
                                   : std::to_string(j);
      out << eval.t[static_cast<size_t>(k)] << ',' << name << ',' << eval.scores(k, j) << ','
          << eval.deviation(k, j) << '\n';
    }
}

io::Rgb8Image to_rgb8(const Tensor<float>& images, int64_t index) {
  const int64_t h = images.dim(2), w = images.dim(3);
  io::Rgb8Image img{w, h, std::vector<uint8_t>(static_cast<size_t>(w * h * 3))};
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double v = std::clamp((images[((index * 3 + c) * h + y) * w + x] + 1.0) / 2.0, 0.0, 1.0);
        img.pixels[static_cast<size_t>((y * w + x) * 3 + c)] = static_cast<uint8_t>(std::lround(255.0 * v));
      }
  return img;
}

io::Rgb8Image interpolate_grid(const model::Generator<float>& g, const Matrix& a, const Matrix& b, int steps) {
  const Tensor<float> frames = render(g, interpolate(a, b, steps));
  const int64_t r = frames.dim(2), n = frames.dim(0);
  io::Rgb8Image grid{n * r, r, std::vector<uint8_t>(static_cast<size_t>(n * r * r * 3))};
  for (int64_t k = 0; k < n; ++k) {
    const io::Rgb8Image frame = to_rgb8(frames, k);
    for (int64_t y = 0; y < r; ++y)
      std::copy_n(frame.pixels.begin() + y * r * 3, r * 3, grid.pixels.begin() + (y * n * r + k * r) * 3);
  }
  return grid;
}

}  // namespace hsrgan::edit
