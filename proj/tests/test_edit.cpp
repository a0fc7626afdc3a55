#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hsrgan/core/error.hpp"
#include "hsrgan/core/log.hpp"
#include "hsrgan/edit/edit.hpp"

using namespace hsrgan;
using namespace hsrgan::edit;
namespace fs = std::filesystem;

namespace {

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

// w = z A with a fixed mixing matrix; images are w itself.
LatentModel linear_model(int dim, bool mix) {
  Matrix a = Matrix::Identity(dim, dim);
  if (mix) {
    Rng rng(4);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) a(i, j) += 0.4 * rng.normal();
  }
  LatentModel m;
  m.z_dim = m.w_dim = dim;
  m.map = [a](const Matrix& z) { return Matrix(z * a); };
  m.synthesize = [](const Matrix& w) { return as_images(w); };
  return m;
}

Vector probe_vector() {
  Vector v(8);
  v << 0.5, -1.0, 0.25, 2.0, 0.0, -0.75, 1.5, 0.1;
  return v;
}

// Six scores: attribute 2 is v . w, the rest are zero.
ImageFn linear_scorer(const Vector& v, double c = 1.0) {
  return [v, c](const Tensor<double>& img) {
    Matrix w = flatten(img);
    Matrix s = Matrix::Zero(w.rows(), 6);
    s.col(2) = c * (w * v);
    return s;
  };
}

double angle_degrees(const Vector& a, const Vector& b) {
  return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0)) * 180.0 / M_PI;
}

model::GeneratorConfig tiny_generator() {
  model::GeneratorConfig gc;
  gc.resolution = 16;
  gc.z_dim = gc.w_dim = 8;
  gc.mapping_depth = 2;
  gc.base_channels = 4;
  gc.max_channels = 8;
  return gc;
}

std::shared_ptr<model::FactorNet<float>> tiny_embedder() {
  model::FactorNetConfig fc;
  fc.resolution = 16;
  fc.widths = {4, 6, 8, 8};
  fc.hidden = 8;
  auto net = std::make_shared<model::FactorNet<float>>(fc, 2);
  net->freeze();
  return net;
}

Tensor<float> w_mean_of(const model::Generator<float>& g) {
  Rng rng(3);
  return g.compute_w_mean(2000, rng);
}

Matrix broadcast_code(const model::Generator<float>& g, uint64_t seed) {
  Rng rng(seed);
  Matrix z(1, g.config().z_dim);
  for (int j = 0; j < z.cols(); ++j) z(0, j) = rng.normal();
  Matrix w = metrics::latent_model(g).map(z);
  return w.replicate(g.block_count(), 1);
}

}  // namespace

TEST_CASE("find_direction recovers a linear probe") {
  const Vector v = probe_vector();
  DirectionOptions o;
  o.n_samples = 4000;
  for (bool mix : {false, true}) {
    EditDirection d = find_direction(linear_model(8, mix), linear_scorer(v), 2, o);
    CHECK(angle_degrees(d.direction, v) < 5.0);
    CHECK(std::abs(d.direction.norm() - 1.0) < 1e-8);
    CHECK(d.accuracy >= 0.99);
    CHECK(d.warnings.empty());
  }
  EditDirection neg = find_direction(linear_model(8, false), linear_scorer(-v), 2, o);
  CHECK(angle_degrees(neg.direction, -v) < 5.0);
}

TEST_CASE("find_direction is deterministic and invariant to positive score scaling") {
  const Vector v = probe_vector();
  DirectionOptions o;
  o.n_samples = 2000;
  o.seed = 9;
  LatentModel m = linear_model(8, true);
  EditDirection a = find_direction(m, linear_scorer(v), 2, o);
  EditDirection b = find_direction(m, linear_scorer(v), 2, o);
  EditDirection c = find_direction(m, linear_scorer(v, 3.7), 2, o);
  CHECK(a.direction == b.direction);
  CHECK(a.direction == c.direction);
  CHECK(a.offset == c.offset);
}

TEST_CASE("find_direction warns on an unrelated scorer") {
  int warnings = 0;
  LogSink previous = set_warning_sink([&](const std::string&) { ++warnings; });
  auto noise = std::make_shared<Rng>(77);
  ImageFn random_scores = [noise](const Tensor<double>& img) {
    Matrix s(img.dim(0), 6);
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (int j = 0; j < 6; ++j) s(i, j) = noise->normal();
    return s;
  };
  DirectionOptions o;
  o.n_samples = 1000;
  EditDirection d = find_direction(linear_model(8, false), random_scores, 0, o);
  set_warning_sink(previous);
  CHECK(d.accuracy < 0.8);
  CHECK(d.warnings.size() == 1);
  CHECK(warnings == 1);
  CHECK(std::abs(d.direction.norm() - 1.0) < 1e-8);

  o.n_samples = 999;
  CHECK_THROWS_AS(find_direction(linear_model(8, false), random_scores, 0, o), RangeError);
  o.n_samples = 1000;
  CHECK_THROWS_AS(find_direction(linear_model(8, false), linear_scorer(probe_vector()), 6, o), ConfigError);
}

TEST_CASE("apply_edit is exact affine") {
  Rng rng(5);
  Matrix w(4, 8);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  const Vector d = probe_vector().normalized();
  CHECK(apply_edit(w, d, 0.0) == w);
  CHECK((apply_edit(apply_edit(w, d, 1.3), d, -1.3) - w).cwiseAbs().maxCoeff() < 1e-12);
  for (double a : {-2.0, 0.3, 1.7})
    for (double b : {-0.6, 0.0, 2.4})
      CHECK((apply_edit(w, d, a + b) - apply_edit(apply_edit(w, d, a), d, b)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(apply_edit(w, probe_vector(), 1.0), RangeError);
  CHECK_THROWS_AS(apply_edit(w.leftCols(4), d, 1.0), ShapeError);
}

TEST_CASE("edit strength unit and monotonicity audit") {
  CHECK(sigma_w(linear_model(8, false), 10000, 1) == doctest::Approx(1.0).epsilon(0.03));
  const Vector v = probe_vector();
  MonotonicityAudit a = audit_monotonicity(linear_model(8, false), linear_scorer(v), 2, v.normalized(), 1.0, 200, 3);
  CHECK(a.alphas.size() == 7);
  CHECK(a.alphas.back() == 3.0);
  CHECK(a.fraction == 1.0);
  MonotonicityAudit r = audit_monotonicity(linear_model(8, false), linear_scorer(v), 2, -v.normalized(), 1.0, 200, 3);
  CHECK(r.monotone == 0);
}

TEST_CASE("direction files carry the checkpoint hash") {
  EditDirection d;
  d.attribute = 3;
  d.direction = probe_vector().normalized();
  d.accuracy = 0.93;
  d.checkpoint_hash = "00000000deadbeef";
  fs::path p = fs::temp_directory_path() / "hsrgan_direction.json";
  save_direction(p, d);
  EditDirection back = load_direction(p, "00000000deadbeef");
  CHECK(back.direction == d.direction);
  CHECK(back.attribute == 3);
  CHECK(back.to_json()["attribute_name"] == "hue");
  CHECK_THROWS_AS(load_direction(p, "0000000000000000"), HashMismatchError);
  CHECK(load_direction(p, "0000000000000000", true).accuracy == 0.93);

  auto j = d.to_json();
  j["extra"] = 1;
  CHECK_THROWS_AS(EditDirection::from_json(j), SchemaError);
  j = d.to_json();
  j["direction"] = std::vector<double>{1.0, 1.0};
  CHECK_THROWS_AS(EditDirection::from_json(j), RangeError);
  CHECK_THROWS_AS(load_direction(fs::temp_directory_path() / "hsrgan_no_such.json", ""), MissingArtifactError);
}

TEST_CASE("projection contract") {
  model::Generator<float> g(tiny_generator(), 1);
  auto net = tiny_embedder();
  const Tensor<float> w_mean = w_mean_of(g);
  const Matrix w_star = broadcast_code(g, 21);
  const Tensor<float> target = render(g, {w_star});

  ProjectionOptions none;
  none.steps = 0;
  ProjectionResult r0 = project_image(g, *net, target, w_mean, none);
  CHECK(r0.checkpoint_losses.size() == 1);
  CHECK(r0.final_loss == r0.initial_loss);
  CHECK(r0.w_plus.rows() == g.block_count());
  for (int b = 0; b < g.block_count(); ++b)
    for (int j = 0; j < 8; ++j) CHECK(r0.w_plus(b, j) == static_cast<double>(w_mean[j]));

  ProjectionOptions o;
  o.steps = 400;
  ProjectionResult a = project_image(g, *net, target, w_mean, o);
  ProjectionResult b = project_image(g, *net, target, w_mean, o);
  CHECK(a.w_plus == b.w_plus);
  CHECK(a.checkpoint_losses.size() == 9);
  CHECK(std::isfinite(a.pixel_mse));
  CHECK(std::isfinite(a.embed_distance));
  CHECK(a.diverged == (a.final_loss > a.initial_loss));
  int violations = 0;
  for (size_t i = 1; i < a.checkpoint_losses.size(); ++i)
    violations += a.checkpoint_losses[i] > a.checkpoint_losses[i - 1];
  CHECK(violations <= 2);
  CHECK(a.pixel_mse < 1e-3);
  CHECK(a.embed_distance < 1e-2);

  ProjectionOptions noisy = o;
  noisy.steps = 20;
  noisy.noise_scale = 0.1;
  CHECK(project_image(g, *net, target, w_mean, noisy).w_plus == project_image(g, *net, target, w_mean, noisy).w_plus);

  CHECK_THROWS_AS(project_image(g, *net, Tensor<float>({1, 3, 8, 8}), w_mean, o), ShapeError);
  model::FactorNetConfig fc = net->config();
  model::FactorNet<float> live(fc, 3);
  CHECK_THROWS_AS(project_image(g, live, target, w_mean, o), ConfigError);
}

TEST_CASE("linearity evaluation") {
  model::Generator<float> g(tiny_generator(), 1);
  auto net = tiny_embedder();
  const Tensor<float> w_mean = w_mean_of(g);
  const Tensor<float> target = render(g, {broadcast_code(g, 22)});
  ImageFn pixels = [](const Tensor<double>& img) {
    Matrix s(img.dim(0), 6);
    const int64_t per = img.numel() / img.dim(0);
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (int j = 0; j < 6; ++j) s(i, j) = img[i * per + 7 * j] * (j + 1);
    return s;
  };
  ProjectionOptions o;
  o.steps = 50;
  const Vector d = Vector::Unit(8, 1);

  LinearityEval still = edit_linearity_eval(g, *net, pixels, target, d, 0.0, 10, w_mean, o);
  CHECK(still.source.w_plus == still.edited.w_plus);
  CHECK(still.deviation.cwiseAbs().maxCoeff() == 0.0);
  CHECK(still.mean == 0.0);

  fs::path p = fs::temp_directory_path() / "hsrgan_linearity.csv";
  write_linearity_csv(p, still);
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,attribute,score,deviation");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 11 * 6);

  // Scores scripted to be linear in the frame index.
  ImageFn scripted = [](const Tensor<double>& img) {
    Matrix s(img.dim(0), 6);
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (int j = 0; j < 6; ++j) s(i, j) = 0.25 * j - 0.5 + 0.125 * i;
    return s;
  };
  LinearityEval lin = edit_linearity_eval(g, *net, scripted, target, d, 1.5, 8, w_mean, o);
  CHECK(lin.deviation.cwiseAbs().maxCoeff() < 1e-15);
  CHECK(lin.scores.rows() == 9);
  CHECK_THROWS_AS(edit_linearity_eval(g, *net, scripted, target, d, 1.5, 1, w_mean, o), RangeError);
}

TEST_CASE("interpolation grids") {
  model::Generator<float> g(tiny_generator(), 1);
  const Matrix a = broadcast_code(g, 31), b = broadcast_code(g, 32);

  io::Rgb8Image two = interpolate_grid(g, a, b, 1);
  CHECK(two.width == 2 * 16);
  CHECK(two.height == 16);
  const io::Rgb8Image ra = to_rgb8(render(g, {a})), rb = to_rgb8(render(g, {b}));
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16 * 3; ++x) {
      CHECK(two.pixels[static_cast<size_t>(y * 32 * 3 + x)] == ra.pixels[static_cast<size_t>(y * 16 * 3 + x)]);
      CHECK(two.pixels[static_cast<size_t>(y * 32 * 3 + 16 * 3 + x)] == rb.pixels[static_cast<size_t>(y * 16 * 3 + x)]);
    }

  const int n = 6;
  auto forward = interpolate(a, b, n), backward = interpolate(b, a, n);
  for (int k = 0; k <= n; ++k) CHECK(forward[static_cast<size_t>(k)] == backward[static_cast<size_t>(n - k)]);
  io::Rgb8Image gf = interpolate_grid(g, a, b, n), gb = interpolate_grid(g, b, a, n);
  CHECK(gf.width == (n + 1) * 16);
  bool mirrored = true;
  for (int k = 0; k <= n; ++k)
    for (int64_t y = 0; y < 16; ++y)
      for (int64_t x = 0; x < 16 * 3; ++x)
        mirrored = mirrored && gf.pixels[static_cast<size_t>((y * (n + 1) * 16 + k * 16) * 3 + x)] ==
                                   gb.pixels[static_cast<size_t>((y * (n + 1) * 16 + (n - k) * 16) * 3 + x)];
  CHECK(mirrored);
}
