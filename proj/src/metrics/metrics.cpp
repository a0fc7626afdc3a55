#include "hsrgan/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <fstream>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "hsrgan/autograd/ops.hpp"
#include "hsrgan/core/error.hpp"
#include "hsrgan/core/log.hpp"
#include "hsrgan/io/tensor_file.hpp"

namespace hsrgan::metrics {

using ag::Var;
using nlohmann::json;

namespace {

Tensor<float> to_tensor(const Matrix& m) {
  Tensor<float> t({m.rows(), m.cols()});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[i * m.cols() + j] = static_cast<float>(m(i, j));
  return t;
}

template <typename T>
Matrix to_matrix(const Tensor<T>& t) {
  const int64_t rows = t.dim(0);
  const int64_t cols = t.numel() / std::max<int64_t>(rows, 1);
  Matrix m(rows, cols);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) m(i, j) = static_cast<double>(t[i * cols + j]);
  return m;
}

Matrix normal_matrix(int64_t rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int64_t i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// Stacks two image batches along the batch axis.
Tensor<double> stack(const Tensor<double>& a, const Tensor<double>& b) {
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<double> data(a.storage());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Tensor<double>(s, std::move(data));
}

void require_rows(const Matrix& m, Eigen::Index n, const char* what) {
  if (m.rows() < n) throw RangeError(std::string(what) + " needs at least " + std::to_string(n) + " samples");
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  return out;
}

double entropy(const Eigen::VectorXd& p, double base) {
  if (base <= 1.0) return 0.0;
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) h -= p(i) * std::log(p(i));
  return h / std::log(base);
}

}  // namespace

LatentModel latent_model(const model::Generator<float>& g) {
  LatentModel m;
  m.z_dim = g.config().z_dim;
  m.w_dim = g.config().w_dim;
  m.map = [&g](const Matrix& z) {
    ag::NoGradGuard off;
    return to_matrix(g.map(Var<float>::constant(to_tensor(z))).value());
  };
  m.synthesize = [&g](const Matrix& w) {
    ag::NoGradGuard off;
    return g.synthesize(Var<float>::constant(to_tensor(w))).image.value().cast<double>();
  };
  return m;
}

ImageFn embedder(std::shared_ptr<const model::FactorNet<float>> net) {
  if (!net->frozen()) throw ConfigError("the embedder network must be frozen");
  return [net](const Tensor<double>& images) {
    ag::NoGradGuard off;
    return to_matrix(net->embed(Var<float>::constant(images.cast<float>())).value());
  };
}

ImageFn scorer(std::shared_ptr<const model::FactorNet<float>> net) {
  if (!net->frozen()) throw ConfigError("the attribute scorer must be frozen");
  return [net](const Tensor<double>& images) {
    ag::NoGradGuard off;
    return to_matrix(net->predict(Var<float>::constant(images.cast<float>())).value());
  };
}

json embedder_manifest(const json& net_manifest) {
  return {{"embedder", "pooled deepest stage of the trained factor network"},
          {"substitutes_for", "LPIPS / Inception features"},
          {"network", net_manifest}};
}

Matrix embed_dataset(const ImageFn& embed, const synth::Dataset& data, int64_t begin, int64_t end, int64_t batch) {
  if (begin < 0 || end > data.size() || begin > end) throw RangeError("dataset range out of bounds");
  Matrix out;
  for (int64_t s = begin; s < end; s += batch) {
    std::vector<int64_t> idx;
    for (int64_t i = s; i < std::min(end, s + batch); ++i) idx.push_back(i);
    Matrix e = embed(data.batch(idx).cast<double>());
    if (out.size() == 0) out.resize(end - begin, e.cols());
    out.middleRows(s - begin, e.rows()) = e;
  }
  return out;
}

Matrix embed_samples(const ImageFn& embed, const LatentModel& model, int64_t count, uint64_t seed, int64_t batch) {
  Rng rng(seed);
  Matrix out;
  for (int64_t s = 0; s < count; s += batch) {
    const int64_t b = std::min(batch, count - s);
    Matrix e = embed(model.synthesize(model.map(normal_matrix(b, model.z_dim, rng))));
    if (out.size() == 0) out.resize(count, e.cols());
    out.middleRows(s, b) = e;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(PPLSpace s) { return s == PPLSpace::w ? "w" : "z"; }

PPLSpace parse_ppl_space(const std::string& s) {
  if (s == "w") return PPLSpace::w;
  if (s == "z") return PPLSpace::z;
  throw SchemaError("unknown PPL space '" + s + "'");
}

Matrix lerp(const Matrix& a, const Matrix& b, const std::vector<double>& t) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) out.row(i) = (1.0 - t[i]) * a.row(i) + t[i] * b.row(i);
  return out;
}

Matrix slerp(const Matrix& a, const Matrix& b, const std::vector<double>& t) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Eigen::RowVectorXd ua = a.row(i).normalized(), ub = b.row(i).normalized();
    const double d = std::clamp(ua.dot(ub), -1.0, 1.0);
    const double omega = std::acos(d);
    Eigen::RowVectorXd dir;
    if (omega < 1e-12) {
      dir = ua;
    } else {
      const double so = std::sin(omega);
      dir = (std::sin((1.0 - t[i]) * omega) / so) * ua + (std::sin(t[i] * omega) / so) * ub;
    }
    // Interpolate the radius linearly, as for Gaussian latents.
    const double r = (1.0 - t[i]) * a.row(i).norm() + t[i] * b.row(i).norm();
    out.row(i) = r * dir.normalized();
  }
  return out;
}

namespace {

std::vector<double> pair_distances(const ImageFn& embed, const Tensor<double>& a, const Tensor<double>& b,
                                   double epsilon) {
  Matrix e = embed(stack(a, b));
  const Eigen::Index n = a.dim(0);
  std::vector<double> d(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d[i] = (e.row(i) - e.row(n + i)).squaredNorm() / (epsilon * epsilon);
  return d;
}

}  // namespace

std::vector<double> ppl_w_pairs(const LatentModel& model, const ImageFn& embed, const Matrix& w0, const Matrix& w1,
                                const std::vector<double>& t, double epsilon) {
  if (!(epsilon > 0.0)) throw RangeError("PPL epsilon must be > 0");
  std::vector<double> t2(t);
  for (auto& x : t2) x += epsilon;
  return pair_distances(embed, model.synthesize(lerp(w0, w1, t)), model.synthesize(lerp(w0, w1, t2)), epsilon);
}

PPLResult ppl(const LatentModel& model, const ImageFn& embed, const PPLOptions& options) {
  if (!(options.epsilon > 0.0)) throw RangeError("PPL epsilon must be > 0");
  if (options.n_pairs < 1) throw RangeError("PPL needs at least one pair");
  Rng rng(options.seed);
  PPLResult r;
  r.z0 = normal_matrix(options.n_pairs, model.z_dim, rng);
  r.z1 = normal_matrix(options.n_pairs, model.z_dim, rng);
  r.t.resize(static_cast<size_t>(options.n_pairs));
  for (auto& x : r.t) x = rng.uniform();
  r.values.reserve(r.t.size());
  for (int64_t s = 0; s < options.n_pairs; s += options.batch) {
    const int64_t b = std::min(options.batch, options.n_pairs - s);
    Matrix z0 = r.z0.middleRows(s, b), z1 = r.z1.middleRows(s, b);
    std::vector<double> t(r.t.begin() + s, r.t.begin() + s + b);
    std::vector<double> d;
    if (options.space == PPLSpace::w) {
      d = ppl_w_pairs(model, embed, model.map(z0), model.map(z1), t, options.epsilon);
    } else {
      std::vector<double> t2(t);
      for (auto& x : t2) x += options.epsilon;
      d = pair_distances(embed, model.synthesize(model.map(slerp(z0, z1, t))),
                         model.synthesize(model.map(slerp(z0, z1, t2))), options.epsilon);
    }
    r.values.insert(r.values.end(), d.begin(), d.end());
  }
  const double n = static_cast<double>(r.values.size());
  r.mean = std::accumulate(r.values.begin(), r.values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : r.values) var += (v - r.mean) * (v - r.mean);
  r.standard_error = n > 1 ? std::sqrt(var / (n - 1) / n) : 0.0;
  return r;
}

PercentileReport ppl_percentiles(const std::vector<double>& values, int bins, std::vector<double> edges) {
  const auto n = static_cast<int64_t>(values.size());
  if (n < 10) throw RangeError("percentile galleries need at least 10 pairs");
  PercentileReport r;
  r.ascending.resize(static_cast<size_t>(n));
  std::iota(r.ascending.begin(), r.ascending.end(), 0);
  std::stable_sort(r.ascending.begin(), r.ascending.end(),
                   [&](int64_t a, int64_t b) { return values[a] < values[b]; });
  const int64_t k = n / 10;
  r.top.assign(r.ascending.begin(), r.ascending.begin() + k);
  r.bottom.assign(r.ascending.rbegin(), r.ascending.rbegin() + k);
  if (edges.empty()) {
    if (bins < 1) throw RangeError("histogram needs at least one bin");
    double hi = *std::max_element(values.begin(), values.end());
    if (!(hi > 0.0)) hi = 1.0;
    for (int i = 0; i <= bins; ++i) edges.push_back(hi * i / bins);
  }
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()))
    throw RangeError("histogram edges must be ascending with at least two entries");
  r.edges = edges;
  r.counts.assign(edges.size() - 1, 0);
  for (double v : values) {
    // Values outside the edges land in the nearest end bin.
    auto it = std::upper_bound(edges.begin(), edges.end(), v);
    int64_t bin = static_cast<int64_t>(it - edges.begin()) - 1;
    bin = std::clamp<int64_t>(bin, 0, static_cast<int64_t>(r.counts.size()) - 1);
    ++r.counts[static_cast<size_t>(bin)];
  }
  return r;
}

// ---------------------------------------------------------------------------

Matrix als_deviation(const Matrix& s) {
  const auto n = static_cast<int>(s.rows()) - 1;
  if (n < 2) throw RangeError("attribute linearity needs at least 2 interpolation steps");
  Matrix d = Matrix::Zero(s.rows(), s.cols());
  // Each row is measured from the nearer endpoint: reversing the path maps row
  // k onto row n - k exactly, and paths with equal endpoints stay exact.
  for (int k = 1; k < n; ++k)
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      double dev;
      if (2 * k == n)
        dev = s(k, j) - 0.5 * (s(0, j) + s(n, j));
      else if (2 * k < n)
        dev = s(k, j) - s(0, j) - (static_cast<double>(k) / n) * (s(n, j) - s(0, j));
      else
        dev = s(k, j) - s(n, j) - (static_cast<double>(n - k) / n) * (s(0, j) - s(n, j));
      d(k, j) = dev * dev;
    }
  return d;
}

ALSResult als_from_scores(const std::vector<Matrix>& scores) {
  if (scores.empty()) throw RangeError("attribute linearity needs at least one path");
  const Eigen::Index rows = scores[0].rows(), m = scores[0].cols();
  for (const auto& s : scores) {
    if (s.rows() != rows || s.cols() != m) throw ShapeError("score paths differ in shape");
    if (!s.allFinite()) throw NonFiniteError("non-finite attribute score");
  }
  const int n = static_cast<int>(rows) - 1;
  ALSResult r;
  r.steps = n;
  r.per_attribute.assign(static_cast<size_t>(m), 0.0);
  r.per_t.assign(static_cast<size_t>(rows), 0.0);
  const double pairs = static_cast<double>(scores.size());
  Matrix total = Matrix::Zero(rows, m);
  for (const auto& s : scores) {
    Matrix d = als_deviation(s);
    total += d;
    // Sum t and n - t first so reversed paths give identical totals.
    double sum = 0.0;
    for (int k = 1; 2 * k < n; ++k) sum += (d.row(k).sum() + d.row(n - k).sum());
    if (n % 2 == 0) sum += d.row(n / 2).sum();
    r.per_pair.push_back(sum / (static_cast<double>(n) * m));
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    double sum = 0.0;
    for (int k = 1; 2 * k < n; ++k) sum += total(k, j) + total(n - k, j);
    if (n % 2 == 0) sum += total(n / 2, j);
    r.per_attribute[j] = sum / (static_cast<double>(n) * pairs);
  }
  for (int k = 1; k < n; ++k) r.per_t[k] = total.row(k).sum() / (static_cast<double>(m) * pairs);
  double sum = 0.0;
  for (double v : r.per_pair) sum += v;
  r.mean = sum / pairs;
  return r;
}

ALSResult als(const LatentModel& model, const ImageFn& score, int attribute_count, const ALSOptions& options,
              std::vector<Matrix>* score_paths) {
  if (options.steps < 2) throw RangeError("attribute linearity needs N >= 2");
  if (options.n_pairs < 1) throw RangeError("attribute linearity needs at least one pair");
  if (!(options.truncation >= 0.0 && options.truncation <= 1.0)) throw RangeError("truncation must lie in [0, 1]");
  Rng rng(options.seed);
  Eigen::RowVectorXd w_mean;
  if (options.truncation < 1.0) {
    Rng mean_rng(splitmix64(options.seed));
    w_mean = Eigen::RowVectorXd::Zero(model.w_dim);
    for (int64_t s = 0; s < options.w_mean_samples; s += 256) {
      const int64_t b = std::min<int64_t>(256, options.w_mean_samples - s);
      w_mean += model.map(normal_matrix(b, model.z_dim, mean_rng)).colwise().sum();
    }
    w_mean /= static_cast<double>(options.w_mean_samples);
  }
  const int n = options.steps;
  std::vector<Matrix> paths;
  for (int64_t p = 0; p < options.n_pairs; ++p) {
    Matrix z(2, model.z_dim);
    z.row(0) = normal_matrix(1, model.z_dim, rng);
    z.row(1) = normal_matrix(1, model.z_dim, rng);
    Matrix w = model.map(z);
    if (options.truncation < 1.0)
      for (int r = 0; r < 2; ++r) w.row(r) = w_mean + options.truncation * (w.row(r) - w_mean);
    Matrix w0 = w.row(0).replicate(n + 1, 1), w1 = w.row(1).replicate(n + 1, 1);
    std::vector<double> t(static_cast<size_t>(n + 1));
    for (int k = 0; k <= n; ++k) t[k] = static_cast<double>(k) / n;
    Matrix s = score(model.synthesize(lerp(w0, w1, t)));
    if (s.cols() != attribute_count)
      throw ConfigError("scorer emits " + std::to_string(s.cols()) + " attributes, expected " +
                        std::to_string(attribute_count));
    paths.push_back(std::move(s));
  }
  ALSResult r = als_from_scores(paths);
  if (score_paths) *score_paths = std::move(paths);
  return r;
}

// ---------------------------------------------------------------------------

Moments moments(const Matrix& x) {
  require_rows(x, 2, "moments");
  Moments m;
  m.mean = x.colwise().mean().transpose();
  Matrix c = x.rowwise() - m.mean.transpose();
  m.cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  return m;
}

double frechet_distance(const Moments& a, const Moments& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows()) throw ShapeError("embedding dimensions differ");
  if (!a.cov.allFinite() || !b.cov.allFinite() || !a.mean.allFinite() || !b.mean.allFinite())
    throw NonFiniteError("covariance is not finite");
  auto psd_sqrt = [](const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es((m + m.transpose()) / 2.0);
    Vector ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      if (ev(i) < -1e-6) throw RangeError("matrix is not positive semi-definite (eigenvalue " + std::to_string(ev(i)) + ")");
      ev(i) = std::sqrt(std::max(ev(i), 0.0));
    }
    return Matrix(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  };
  Matrix ra = psd_sqrt(a.cov);
  Matrix inner = ra * b.cov * ra;
  Eigen::SelfAdjointEigenSolver<Matrix> es((inner + inner.transpose()) / 2.0, Eigen::EigenvaluesOnly);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()(i);
    if (ev < -1e-6) throw RangeError("covariance product is not positive semi-definite");
    tr_sqrt += std::sqrt(std::max(ev, 0.0));
  }
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

double frechet_distance(const Matrix& a, const Matrix& b) {
  require_rows(a, 2, "frechet distance");
  require_rows(b, 2, "frechet distance");
  return frechet_distance(moments(a), moments(b));
}

namespace {

// Squared distance from each row of `from` to its k-th nearest other row.
std::vector<double> knn_radii(const Matrix& x, int k) {
  const Eigen::Index n = x.rows();
  std::vector<double> radii(static_cast<size_t>(n));
  std::vector<double> d(static_cast<size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd all = (x.rowwise() - x.row(i)).rowwise().squaredNorm();
    size_t m = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) d[m++] = all(j);
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    radii[i] = d[static_cast<size_t>(k - 1)];
  }
  return radii;
}

double coverage_fraction(const Matrix& manifold, const std::vector<double>& radii, const Matrix& probes) {
  int64_t inside = 0;
  for (Eigen::Index i = 0; i < probes.rows(); ++i) {
    Eigen::VectorXd d = (manifold.rowwise() - probes.row(i)).rowwise().squaredNorm();
    for (Eigen::Index j = 0; j < manifold.rows(); ++j)
      if (d(j) <= radii[j]) {
        ++inside;
        break;
      }
  }
  return static_cast<double>(inside) / static_cast<double>(probes.rows());
}

}  // namespace

PrecisionRecall precision_recall(const Matrix& real, const Matrix& fake, int k) {
  if (k < 1) throw RangeError("k must be >= 1");
  require_rows(real, k + 1, "precision/recall");
  require_rows(fake, k + 1, "precision/recall");
  if (real.cols() != fake.cols()) throw ShapeError("embedding dimensions differ");
  PrecisionRecall pr;
  pr.precision = coverage_fraction(real, knn_radii(real, k), fake);
  pr.recall = coverage_fraction(fake, knn_radii(fake, k), real);
  return pr;
}

Vector lasso(const Matrix& x, const Vector& y, double alpha, int max_iterations, double tolerance) {
  const double n = static_cast<double>(x.rows());
  const Matrix gram = x.transpose() * x / n;
  const Vector xty = x.transpose() * y / n;
  Vector beta = Vector::Zero(x.cols());
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  const double lipschitz = es.eigenvalues().size() ? es.eigenvalues().maxCoeff() : 0.0;
  if (!(lipschitz > 0.0)) return beta;
  const double step = 1.0 / lipschitz;
  auto shrink = [&](const Vector& v) {
    Vector out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double a = std::abs(v(i)) - step * alpha;
      out(i) = a > 0.0 ? std::copysign(a, v(i)) : 0.0;
    }
    return out;
  };
  Vector z = beta;
  double momentum = 1.0;
  for (int it = 0; it < max_iterations; ++it) {
    Vector next = shrink(z - step * (gram * z - xty));
    const double m_next = (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum)) / 2.0;
    z = next + ((momentum - 1.0) / m_next) * (next - beta);
    const double change = (next - beta).lpNorm<Eigen::Infinity>();
    beta = std::move(next);
    momentum = m_next;
    if (change < tolerance * std::max(1.0, beta.lpNorm<Eigen::Infinity>())) break;
  }
  return beta;
}

std::pair<double, double> dci_scores(const Matrix& r, int* zero_rows, int* zero_columns) {
  const double total = r.sum();
  int zr = 0, zc = 0;
  double d = 0.0, c = 0.0;
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    const double mass = r.row(i).sum();
    if (mass <= 0.0) {
      ++zr;
      continue;
    }
    d += (mass / total) * (1.0 - entropy(r.row(i).transpose() / mass, static_cast<double>(r.cols())));
  }
  for (Eigen::Index j = 0; j < r.cols(); ++j) {
    const double mass = r.col(j).sum();
    if (mass <= 0.0) {
      ++zc;
      continue;
    }
    c += (mass / total) * (1.0 - entropy(r.col(j) / mass, static_cast<double>(r.rows())));
  }
  if (zero_rows) *zero_rows = zr;
  if (zero_columns) *zero_columns = zc;
  if (!(total > 0.0)) return {0.0, 0.0};
  return {d, c};
}

DCIResult dci(const Matrix& codes, const Matrix& factors, const DCIOptions& options) {
  if (codes.rows() != factors.rows()) throw ShapeError("codes and factors differ in sample count");
  const auto n_train = static_cast<Eigen::Index>(std::floor(options.train_fraction * codes.rows()));
  if (n_train < 2 || codes.rows() - n_train < 2) throw RangeError("DCI needs at least 2 train and 2 test samples");
  const Matrix xtr = codes.topRows(n_train), xte = codes.bottomRows(codes.rows() - n_train);
  const Eigen::RowVectorXd mu = xtr.colwise().mean();
  Eigen::RowVectorXd sd = ((xtr.rowwise() - mu).array().square().colwise().sum() / double(n_train)).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) sd(j) = sd(j) > 0.0 ? sd(j) : 0.0;
  auto standardize = [&](const Matrix& x) {
    Matrix s = x.rowwise() - mu;
    for (Eigen::Index j = 0; j < s.cols(); ++j) s.col(j) = sd(j) > 0.0 ? Eigen::VectorXd(s.col(j) / sd(j)) : Eigen::VectorXd::Zero(s.rows());
    return s;
  };
  const Matrix str = standardize(xtr), ste = standardize(xte);

  DCIResult r;
  r.importance = Matrix::Zero(codes.cols(), factors.cols());
  double info = 0.0;
  for (Eigen::Index j = 0; j < factors.cols(); ++j) {
    const Vector ytr = factors.col(j).head(n_train), yte = factors.col(j).tail(codes.rows() - n_train);
    const double ymean = ytr.mean();
    Vector beta = lasso(str, ytr.array() - ymean, options.alpha, options.max_iterations, options.tolerance);
    r.importance.col(j) = beta.cwiseAbs();
    const Vector pred = (ste * beta).array() + ymean;
    const double mse = (pred - yte).squaredNorm() / double(yte.size());
    const double var = (yte.array() - yte.mean()).square().mean();
    const double fi = var > 0.0 ? 1.0 - mse / var : 0.0;
    r.factor_informativeness.push_back(fi);
    info += fi;
  }
  r.informativeness = info / static_cast<double>(factors.cols());
  std::tie(r.disentanglement, r.completeness) = dci_scores(r.importance, &r.zero_rows, &r.zero_columns);
  if (r.zero_rows || r.zero_columns)
    warn("DCI importance has " + std::to_string(r.zero_rows) + " all-zero code rows and " +
         std::to_string(r.zero_columns) + " all-zero factor columns; their entropy terms are 0");
  return r;
}

std::vector<double> mahalanobis_distances(const Matrix& e, const Moments& real) {
  if (e.cols() != real.mean.size()) throw ShapeError("embedding dimensions differ");
  const Matrix cov = real.cov + 1e-6 * Matrix::Identity(real.cov.rows(), real.cov.cols());
  Eigen::LDLT<Matrix> ldlt(cov);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0))
    throw RangeError("real covariance is singular after regularization");
  std::vector<double> out(static_cast<size_t>(e.rows()));
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    const Vector d = e.row(i).transpose() - real.mean;
    out[i] = d.dot(ldlt.solve(d));
  }
  return out;
}

std::vector<RankedImage> mahalanobis_rank(const Matrix& e, const Moments& real, int64_t n_worst) {
  auto d = mahalanobis_distances(e, real);
  std::vector<RankedImage> ranked;
  for (size_t i = 0; i < d.size(); ++i) ranked.push_back({static_cast<int64_t>(i), d[i]});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedImage& a, const RankedImage& b) { return a.distance > b.distance; });
  ranked.resize(static_cast<size_t>(std::clamp<int64_t>(n_worst, 0, static_cast<int64_t>(ranked.size()))));
  return ranked;
}

// ---------------------------------------------------------------------------

json TrainedScorer::manifest() const {
  json m = report.to_json();
  m["role"] = "attribute-scorer";
  m["attributes"] = std::vector<std::string>(synth::kFactorNames.begin(), synth::kFactorNames.end());
  m["config"] = net->config().to_json();
  return m;
}

TrainedScorer train_attribute_scorer(const synth::Dataset& data, const ScorerTraining& options,
                                     const std::function<void(const std::string&)>& log) {
  TrainedScorer s;
  s.net = std::make_shared<model::FactorNet<float>>(options.net, options.init_seed);
  s.report = model::train_regressor(*s.net, data, options.training, log);
  return s;
}

json MetricReport::to_json() const {
  return {{"metric", metric},           {"values", values},       {"sample_counts", sample_counts},
          {"seeds", seeds},             {"config_hash", config_hash}, {"manifests", manifests},
          {"disclosures", disclosures}};
}

std::vector<std::string> standard_disclosures() {
  return {
      "perceptual distance: squared L2 between pooled deepest-stage features of a locally trained factor "
      "network, not LPIPS",
      "FID-proxy: Frechet distance in the same embedding, not Inception features",
      "discriminator augmentation uses a fixed probability, not an adaptive controller",
      "attribute scores are regressions onto synthetic ground-truth factors",
  };
}

void write_als_table(const std::filesystem::path& path, const std::vector<std::string>& methods,
                     const std::vector<std::vector<double>>& per_attribute) {
  if (methods.size() != per_attribute.size()) throw ShapeError("one attribute row per method is required");
  auto out = open_csv(path);
  out << "method";
  for (const auto& n : synth::kFactorNames) out << ',' << n;
  out << ",mean\n";
  for (size_t i = 0; i < methods.size(); ++i) {
    if (per_attribute[i].size() != synth::kFactorCount) throw ShapeError("expected one value per attribute");
    out << methods[i];
    double sum = 0.0;
    for (double v : per_attribute[i]) {
      out << ',' << v;
      sum += v;
    }
    out << ',' << sum / synth::kFactorCount << '\n';
  }
}

void write_per_t_csv(const std::filesystem::path& path, const ALSResult& result) {
  auto out = open_csv(path);
  out << "t,mean_deviation\n";
  for (size_t k = 0; k < result.per_t.size(); ++k)
    out << static_cast<double>(k) / result.steps << ',' << result.per_t[k] << '\n';
}

void write_histogram_csv(const std::filesystem::path& path, const PercentileReport& report) {
  auto out = open_csv(path);
  out << "bin_left,bin_right,count\n";
  for (size_t i = 0; i < report.counts.size(); ++i)
    out << report.edges[i] << ',' << report.edges[i + 1] << ',' << report.counts[i] << '\n';
}

json quick_eval(const model::Generator<float>& g, const ImageFn& embed, const Moments& real, int64_t fid_samples,
                int64_t ppl_pairs, uint64_t seed) {
  LatentModel m = latent_model(g);
  const double fid = frechet_distance(real, moments(embed_samples(embed, m, fid_samples, seed)));
  PPLOptions o;
  o.n_pairs = ppl_pairs;
  o.seed = splitmix64(seed);
  const double p = ppl(m, embed, o).mean;
  return {{"fid_proxy", fid}, {"ppl_quick", p}};
}

}  // namespace hsrgan::metrics
