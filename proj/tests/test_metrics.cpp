#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "hsrgan/core/error.hpp"
#include "hsrgan/core/log.hpp"
#include "hsrgan/metrics/metrics.hpp"

using namespace hsrgan;
using namespace hsrgan::metrics;
namespace fs = std::filesystem;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

Tensor<double> as_images(const Matrix& w) {
  Tensor<double> t({w.rows(), 1, 1, w.cols()});
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) t[i * w.cols() + j] = w(i, j);
  return t;
}

Matrix flatten(const Tensor<double>& images) {
  const int64_t b = images.dim(0), d = images.numel() / b;
  Matrix m(b, d);
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < d; ++j) m(i, j) = images[i * d + j];
  return m;
}

LatentModel identity_model(int dim) {
  LatentModel m;
  m.z_dim = m.w_dim = dim;
  m.map = [](const Matrix& z) { return z; };
  m.synthesize = [](const Matrix& w) { return as_images(w); };
  return m;
}

// Smooth nonlinear toy: w = tanh(A z), image = sin(B w).
LatentModel toy_model() {
  LatentModel m;
  m.z_dim = 4;
  m.w_dim = 3;
  Matrix a = random_matrix(3, 4, 1, 0.5), b = random_matrix(5, 3, 2);
  m.map = [a](const Matrix& z) { return Matrix((z * a.transpose()).array().tanh()); };
  m.synthesize = [b](const Matrix& w) { return as_images(Matrix((w * b.transpose()).array().sin())); };
  return m;
}

// Eq. 5 evaluated literally in extended precision.
long double brute_force_als(const std::vector<Matrix>& paths) {
  long double total = 0;
  for (const auto& s : paths) {
    const int n = static_cast<int>(s.rows()) - 1;
    const int m = static_cast<int>(s.cols());
    long double sum = 0;
    for (int k = 0; k <= n; ++k) {
      const long double t = static_cast<long double>(k) / n;
      for (int j = 0; j < m; ++j) {
        const long double dev = (long double)s(k, j) - s(0, j) - t * ((long double)s(n, j) - s(0, j));
        sum += dev * dev;
      }
    }
    total += sum / (static_cast<long double>(n) * m);
  }
  return total / paths.size();
}

double entropy_oracle(const std::vector<double>& p, double base) {
  double h = 0;
  for (double x : p)
    if (x > 0) h -= x * std::log(x) / std::log(base);
  return h;
}

}  // namespace

TEST_CASE("ALS reference values") {
  Matrix s(3, 1);
  s << 0.0, 0.8, 1.0;
  Matrix d = als_deviation(s);
  CHECK(d(1, 0) == doctest::Approx(0.09).epsilon(1e-14));
  ALSResult r = als_from_scores({s});
  CHECK(r.mean == doctest::Approx(0.09 / 2).epsilon(1e-14));
  CHECK(r.per_t[0] == 0.0);
  CHECK(r.per_t[2] == 0.0);

  Matrix lin(11, 6);
  for (int k = 0; k <= 10; ++k)
    for (int j = 0; j < 6; ++j) lin(k, j) = 0.3 * j - 1.0 + (0.25 * j + 0.5) * k / 10.0;
  CHECK(als_from_scores({lin}).mean < 1e-28);
  CHECK(als_from_scores({Matrix::Constant(11, 6, 0.37)}).mean == 0.0);
  CHECK_THROWS_AS(als_deviation(Matrix::Zero(2, 3)), RangeError);
  CHECK_THROWS_AS(als_from_scores({Matrix::Zero(4, 3), Matrix::Zero(5, 3)}), ShapeError);
}

TEST_CASE("ALS matches a brute-force evaluation, endpoints are exact and swaps are symmetric") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const int n = 2 + static_cast<int>(seed % 9);
    std::vector<Matrix> paths = {random_matrix(n + 1, 6, seed), random_matrix(n + 1, 6, seed + 1000)};
    ALSResult r = als_from_scores(paths);
    CHECK(std::abs(r.mean - static_cast<double>(brute_force_als(paths))) < 1e-9);
    for (const auto& p : paths) {
      Matrix d = als_deviation(p);
      CHECK(d.row(0).isZero(0.0));
      CHECK(d.row(n).isZero(0.0));
    }
    std::vector<Matrix> reversed;
    for (const auto& p : paths) reversed.push_back(p.colwise().reverse());
    ALSResult rr = als_from_scores(reversed);
    CHECK(rr.mean == r.mean);
    CHECK(rr.per_attribute == r.per_attribute);
    CHECK(rr.per_pair == r.per_pair);
  }
}

TEST_CASE("ALS over a latent model") {
  LatentModel m = identity_model(3);
  ImageFn linear = [](const Tensor<double>& img) { return Matrix(flatten(img) * 2.0); };
  ALSOptions o;
  o.n_pairs = 5;
  ALSResult r = als(m, linear, 3, o);
  CHECK(r.mean < 1e-28);
  CHECK(r.per_t.size() == 11);
  CHECK_THROWS_AS(als(m, linear, 6, o), ConfigError);

  LatentModel toy = toy_model();
  ImageFn id = [](const Tensor<double>& img) { return flatten(img); };
  std::vector<Matrix> paths;
  ALSResult a = als(toy, id, 5, o, &paths);
  CHECK(paths.size() == 5);
  CHECK(a.mean > 0.0);
  CHECK(std::abs(a.mean - static_cast<double>(brute_force_als(paths))) < 1e-9);
  ALSResult b = als(toy, id, 5, o);
  CHECK(a.mean == b.mean);
  o.truncation = 0.5;
  o.w_mean_samples = 100;
  CHECK(als(toy, id, 5, o).mean < a.mean);
}

TEST_CASE("PPL closed forms") {
  LatentModel constant = identity_model(2);
  constant.synthesize = [](const Matrix& w) { return Tensor<double>({w.rows(), 1, 1, 2}, 0.5); };
  ImageFn id = [](const Tensor<double>& img) { return flatten(img); };
  PPLOptions o;
  o.n_pairs = 50;
  CHECK(ppl(constant, id, o).mean == 0.0);

  LatentModel ident = identity_model(2);
  Matrix w0(4, 2), w1(4, 2);
  w0 << 0.1, -0.3, 1.0, 2.0, -0.5, 0.5, 3.0, 1.0;
  w1 << 0.7, 0.2, -1.0, 2.5, 0.5, -0.5, 3.0, 1.5;
  for (double t : {0.0, 0.25, 0.5, 0.9}) {
    auto v = ppl_w_pairs(ident, id, w0, w1, std::vector<double>(4, t), 1e-4);
    for (int i = 0; i < 4; ++i) CHECK(v[i] == doctest::Approx((w1.row(i) - w0.row(i)).squaredNorm()).epsilon(1e-9));
  }
  o.epsilon = 0.0;
  CHECK_THROWS_AS(ppl(ident, id, o), RangeError);
}

TEST_CASE("PPL estimator is reproducible and converges") {
  LatentModel toy = toy_model();
  ImageFn id = [](const Tensor<double>& img) { return flatten(img); };
  PPLOptions o;
  o.n_pairs = 300;
  PPLResult a = ppl(toy, id, o), b = ppl(toy, id, o);
  CHECK(a.values == b.values);

  std::vector<double> shuffled = a.values;
  std::reverse(shuffled.begin(), shuffled.end());
  double mean = 0;
  for (double v : shuffled) mean += v;
  CHECK(mean / shuffled.size() == doctest::Approx(a.mean).epsilon(1e-12));

  for (uint64_t rep = 0; rep < 5; ++rep) {
    PPLOptions small = o, large = o;
    small.seed = 10 + rep;
    large.seed = 100 + rep;
    large.n_pairs = 2 * small.n_pairs;
    PPLResult s = ppl(toy, id, small), l = ppl(toy, id, large);
    const double se = std::sqrt(s.standard_error * s.standard_error + l.standard_error * l.standard_error);
    CHECK(std::abs(s.mean - l.mean) < 3 * se);
  }

  PPLOptions z = o;
  z.space = PPLSpace::z;
  z.n_pairs = 50;
  PPLResult zr = ppl(toy, id, z);
  CHECK(std::isfinite(zr.mean));
  CHECK(zr.mean > 0.0);
}

TEST_CASE("slerp endpoints") {
  Matrix a = random_matrix(3, 5, 7), b = random_matrix(3, 5, 8);
  Matrix s0 = slerp(a, b, {0.0, 0.0, 0.0}), s1 = slerp(a, b, {1.0, 1.0, 1.0});
  CHECK((s0 - a).norm() < 1e-12);
  CHECK((s1 - b).norm() < 1e-12);
}

TEST_CASE("PPL percentiles and histogram") {
  std::vector<double> v = {5, 1, 9, 3, 7, 2, 8, 4, 6, 0};
  auto r = ppl_percentiles(v, 4);
  REQUIRE(r.top.size() == 1);
  REQUIRE(r.bottom.size() == 1);
  CHECK(r.top[0] == 9);
  CHECK(r.bottom[0] == 2);
  int64_t total = 0;
  for (auto c : r.counts) total += c;
  CHECK(total == 10);
  CHECK(r.edges.size() == 5);

  std::vector<double> ties(20, 1.5);
  auto t = ppl_percentiles(ties);
  CHECK(t.top == std::vector<int64_t>{0, 1});
  CHECK(t.bottom == std::vector<int64_t>{19, 18});
  CHECK(t.ascending.front() == 0);

  auto fixed = ppl_percentiles(v, 0, {0.0, 2.0, 4.0});
  CHECK(fixed.counts[0] + fixed.counts[1] == 10);
  CHECK_THROWS_AS(ppl_percentiles(std::vector<double>(9, 1.0)), RangeError);
}

TEST_CASE("Frechet distance closed forms") {
  Matrix x = random_matrix(200, 6, 3);
  CHECK(frechet_distance(x, x) < 1e-8);

  Moments a{Vector::Constant(1, 0.0), Matrix::Identity(1, 1)};
  Moments b{Vector::Constant(1, 1.0), Matrix::Identity(1, 1)};
  CHECK(frechet_distance(a, b) == 1.0);

  Moments bad = a;
  bad.cov(0, 0) = std::nan("");
  CHECK_THROWS_AS(frechet_distance(bad, b), NonFiniteError);
  CHECK_THROWS_AS(frechet_distance(Matrix::Zero(1, 3), x.leftCols(3)), RangeError);
}

TEST_CASE("Frechet distance matches an eigendecomposition oracle") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Matrix la = random_matrix(8, 8, seed), lb = random_matrix(8, 8, seed + 50);
    Moments a{random_matrix(8, 1, seed + 100), la * la.transpose()};
    Moments b{random_matrix(8, 1, seed + 200), lb * lb.transpose()};
    // Oracle: trace of the principal square root of the non-symmetric product.
    Eigen::EigenSolver<Matrix> es(a.cov * b.cov);
    std::complex<double> tr = 0;
    for (Eigen::Index i = 0; i < 8; ++i) tr += std::sqrt(es.eigenvalues()(i));
    const double oracle = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr.real();
    const double d = frechet_distance(a, b);
    CHECK(std::abs(d - oracle) < 1e-6 * std::max(1.0, std::abs(oracle)));
    CHECK(std::abs(d - frechet_distance(b, a)) < 1e-8 * std::max(1.0, d));
    CHECK(d >= 0.0);
  }
}

TEST_CASE("precision and recall") {
  Matrix real = random_matrix(60, 4, 5);
  PrecisionRecall same = precision_recall(real, real, 3);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);

  Matrix far = random_matrix(60, 4, 6).array() + 1000.0;
  PrecisionRecall apart = precision_recall(real, far, 3);
  CHECK(apart.precision == 0.0);
  CHECK(apart.recall == 0.0);

  // Half the fake points sit on real points, half far away.
  Matrix grid(25, 2);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) grid.row(i * 5 + j) << i, j;
  Matrix fake(10, 2);
  for (int i = 0; i < 5; ++i) fake.row(i) = grid.row(i * 5 + i);
  for (int i = 5; i < 10; ++i) fake.row(i) << 100.0 + i, -100.0;
  PrecisionRecall half = precision_recall(grid, fake, 3);
  // Oracle membership by explicit k-NN radii.
  int inside = 0;
  for (int f = 0; f < 10; ++f) {
    bool in = false;
    for (int r = 0; r < 25 && !in; ++r) {
      std::vector<double> d;
      for (int o = 0; o < 25; ++o)
        if (o != r) d.push_back((grid.row(o) - grid.row(r)).squaredNorm());
      std::sort(d.begin(), d.end());
      in = (fake.row(f) - grid.row(r)).squaredNorm() <= d[2];
    }
    inside += in;
  }
  CHECK(half.precision == inside / 10.0);
  CHECK(half.precision == 0.5);
  CHECK(half.recall >= 0.0);
  CHECK(half.recall <= 1.0);

  Matrix dup = Matrix::Zero(8, 2);
  PrecisionRecall degenerate = precision_recall(dup, dup, 3);
  CHECK(degenerate.precision == 1.0);
  CHECK_THROWS_AS(precision_recall(real.topRows(3), real, 3), RangeError);
}

TEST_CASE("DCI on a permuted factor code") {
  Rng rng(9);
  Matrix f(2000, 6);
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    for (int j = 0; j < 6; ++j) f(i, j) = rng.uniform(-1, 1);
  const int perm[6] = {3, 0, 5, 1, 4, 2};
  Matrix w(2000, 6);
  for (int j = 0; j < 6; ++j) w.col(perm[j]) = f.col(j);
  DCIResult r = dci(w, f);
  CHECK(r.disentanglement == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.completeness == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.informativeness >= 0.99);
}

TEST_CASE("DCI with every code dimension equal to one factor") {
  LogSink previous = set_warning_sink([](const std::string&) {});
  Rng rng(10);
  Matrix f(1000, 3);
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    for (int j = 0; j < 3; ++j) f(i, j) = rng.uniform(-1, 1);
  Matrix w(1000, 4);
  for (int d = 0; d < 4; ++d) w.col(d) = f.col(0);
  DCIResult r = dci(w, f);
  set_warning_sink(previous);
  // Importance of factor 0 is spread evenly over identical code dimensions.
  const double c0_mass = r.importance.col(0).sum();
  std::vector<double> p0;
  for (int d = 0; d < 4; ++d) p0.push_back(r.importance(d, 0) / c0_mass);
  CHECK(1.0 - entropy_oracle(p0, 4) < 1e-6);
  // Completeness and disentanglement agree with a direct entropy computation.
  const double total = r.importance.sum();
  double c = 0, dis = 0;
  for (int j = 0; j < 3; ++j) {
    const double mass = r.importance.col(j).sum();
    if (mass <= 0) continue;
    std::vector<double> p;
    for (int d = 0; d < 4; ++d) p.push_back(r.importance(d, j) / mass);
    c += mass / total * (1 - entropy_oracle(p, 4));
  }
  for (int d = 0; d < 4; ++d) {
    const double mass = r.importance.row(d).sum();
    std::vector<double> p;
    for (int j = 0; j < 3; ++j) p.push_back(r.importance(d, j) / mass);
    dis += mass / total * (1 - entropy_oracle(p, 3));
  }
  CHECK(r.completeness == doctest::Approx(c).epsilon(1e-12));
  CHECK(r.disentanglement == doctest::Approx(dis).epsilon(1e-12));
  CHECK(r.completeness < 0.05);
}

TEST_CASE("DCI zero importance rows") {
  Matrix r = Matrix::Zero(3, 2);
  r(0, 0) = 1.0;
  int zr = 0, zc = 0;
  auto [d, c] = dci_scores(r, &zr, &zc);
  CHECK(zr == 2);
  CHECK(zc == 1);
  CHECK(d == 1.0);
  CHECK(c == 1.0);
  CHECK(dci_scores(Matrix::Zero(2, 2)).first == 0.0);
}

TEST_CASE("lasso solution satisfies the optimality conditions") {
  Matrix x = random_matrix(500, 5, 11);
  x = x.rowwise() - x.colwise().mean();
  Vector beta(5);
  beta << 1.0, 0.0, -0.5, 0.0, 0.0;
  Vector y = x * beta + 0.1 * random_matrix(500, 1, 12);
  y = y.array() - y.mean();
  const double alpha = 0.05;
  Vector fit = lasso(x, y, alpha, 20000, 1e-14);
  // Subgradient of (1/2n)|y - X b|^2 + alpha |b|_1 must contain zero.
  Vector g = x.transpose() * (x * fit - y) / 500.0;
  for (int i = 0; i < 5; ++i) {
    if (fit(i) != 0.0)
      CHECK(std::abs(g(i) + alpha * (fit(i) > 0 ? 1.0 : -1.0)) < 1e-8);
    else
      CHECK(std::abs(g(i)) <= alpha + 1e-8);
  }
  CHECK(fit(0) > 0.9);
  CHECK(fit(2) < -0.4);
}

TEST_CASE("Mahalanobis ranking") {
  Matrix real = random_matrix(300, 3, 12);
  Moments m = moments(real);
  Matrix e = random_matrix(20, 3, 13, 2.0);
  e.row(7) = m.mean.transpose();
  auto d = mahalanobis_distances(e, m);
  CHECK(d[7] == doctest::Approx(0.0).epsilon(1e-12));
  auto ranked = mahalanobis_rank(e, m, 20);
  CHECK(ranked.back().index == 7);
  for (size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].distance >= ranked[i].distance);
  CHECK(mahalanobis_rank(e, m, 5).size() == 5);

  // Oracle: explicit inverse of the regularized covariance.
  const Matrix inv = (m.cov + 1e-6 * Matrix::Identity(3, 3)).fullPivLu().inverse();
  for (int i = 0; i < 20; ++i) {
    Vector x = e.row(i).transpose() - m.mean;
    CHECK(std::abs(d[i] - x.dot(inv * x)) < 1e-8 * std::max(1.0, d[i]));
  }

  Moments iso{Vector::Zero(3), Matrix::Identity(3, 3)};
  auto by_m = mahalanobis_rank(e, iso, 20);
  std::vector<int64_t> by_e(20);
  for (int i = 0; i < 20; ++i) by_e[i] = i;
  std::stable_sort(by_e.begin(), by_e.end(),
                   [&](int64_t a, int64_t b) { return e.row(a).squaredNorm() > e.row(b).squaredNorm(); });
  for (int i = 0; i < 20; ++i) CHECK(by_m[i].index == by_e[i]);

  Moments singular{Vector::Zero(3), -Matrix::Identity(3, 3)};
  CHECK_THROWS_AS(mahalanobis_distances(e, singular), RangeError);
}

TEST_CASE("metrics over a generator are bit-reproducible") {
  model::GeneratorConfig gc;
  gc.resolution = 16;
  gc.z_dim = gc.w_dim = 8;
  gc.mapping_depth = 2;
  gc.base_channels = 4;
  gc.max_channels = 8;
  model::Generator<float> g(gc, 1);
  model::FactorNetConfig fc;
  fc.resolution = 16;
  fc.widths = {4, 6, 8, 8};
  fc.hidden = 8;
  auto net = std::make_shared<model::FactorNet<float>>(fc, 2);
  CHECK_THROWS_AS(embedder(net), ConfigError);
  net->freeze();
  ImageFn embed = embedder(net);
  LatentModel lm = latent_model(g);
  PPLOptions o;
  o.n_pairs = 20;
  PPLResult a = ppl(lm, embed, o), b = ppl(lm, embed, o);
  CHECK(a.values == b.values);
  CHECK(a.mean > 0.0);
  Matrix e1 = embed_samples(embed, lm, 10, 3), e2 = embed_samples(embed, lm, 10, 3);
  CHECK(e1 == e2);
  CHECK(e1.cols() == 8);

  nlohmann::json q = quick_eval(g, embed, moments(embed_samples(embed, lm, 20, 4)), 20, 10, 5);
  CHECK(std::isfinite(q["fid_proxy"].get<double>()));
  CHECK(std::isfinite(q["ppl_quick"].get<double>()));
}

TEST_CASE("report and CSV layouts") {
  MetricReport r;
  r.metric = "ppl";
  r.values = {{"mean", 1.0}};
  r.disclosures = standard_disclosures();
  auto j = r.to_json();
  for (const char* key : {"metric", "values", "sample_counts", "seeds", "config_hash", "manifests", "disclosures"})
    CHECK(j.contains(key));
  CHECK(!j["disclosures"].empty());

  fs::path dir = fs::temp_directory_path() / "hsrgan_metric_csv";
  fs::create_directories(dir);
  write_als_table(dir / "als.csv", {"baseline", "hsr"}, {std::vector<double>(6, 1.0), std::vector<double>(6, 0.5)});
  std::ifstream in(dir / "als.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "method,size,pos_x,pos_y,hue,elongation,brightness,mean");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 2);

  ALSResult a = als_from_scores({random_matrix(11, 6, 1)});
  write_per_t_csv(dir / "t.csv", a);
  std::ifstream t(dir / "t.csv");
  int lines = 0;
  for (std::string line; std::getline(t, line);) ++lines;
  CHECK(lines == 12);
  write_histogram_csv(dir / "h.csv", ppl_percentiles(std::vector<double>(10, 1.0), 3));
}
