#include <cmath>
#include <set>

#include "doctest.h"
#include "gradcheck.hpp"
#include "hsrgan/core/error.hpp"
#include "hsrgan/model/generator.hpp"

using namespace hsrgan;
using namespace hsrgan::model;
using ag::Var;
using testing::randn;

namespace {

GeneratorConfig tiny_config() {
  GeneratorConfig c;
  c.resolution = 16;
  c.z_dim = 6;
  c.w_dim = 6;
  c.mapping_depth = 2;
  c.base_channels = 2;
  c.max_channels = 6;
  return c;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("mapping is deterministic and depth 0 is the identity") {
  Generator<double> g(tiny_config(), 1);
  Var<double> z = Var<double>::constant(randn({3, 6}, 2));
  CHECK(g.map(z).value() == g.map(z).value());
  GeneratorConfig c = tiny_config();
  c.mapping_depth = 0;
  Generator<double> id(c, 1);
  CHECK(id.map(z).value() == z.value());
}

TEST_CASE("mapping Jacobian matches central differences") {
  Generator<double> g(tiny_config(), 3);
  Tensor<double> z0 = randn({1, 6}, 4);
  const double h = 1e-5;
  double worst = 0;
  for (int out = 0; out < 6; ++out) {
    Var<double> z = Var<double>::parameter(z0);
    Var<double> w = g.map(z);
    Tensor<double> sel({1, 6});
    sel[out] = 1.0;
    Tensor<double> row = ag::grad(ag::sum(w * Var<double>::constant(sel)), {z})[0].value();
    for (int in = 0; in < 6; ++in) {
      Tensor<double> zp = z0, zm = z0;
      zp[in] += h;
      zm[in] -= h;
      ag::NoGradGuard ng;
      const double fd = (g.map(Var<double>::constant(zp)).value()[out] -
                         g.map(Var<double>::constant(zm)).value()[out]) / (2 * h);
      worst = std::max(worst, std::abs(fd - row[in]) / std::max(1e-3, std::abs(fd)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("non-finite latents are rejected") {
  Generator<double> g(tiny_config(), 1);
  Tensor<double> z = randn({1, 6}, 2);
  z[3] = std::nan("");
  CHECK_THROWS_AS(g.map(Var<double>::constant(z)), NonFiniteError);
}

TEST_CASE("single style and its broadcast give the same image") {
  Generator<double> g(tiny_config(), 5);
  Var<double> w = Var<double>::constant(randn({2, 6}, 6));
  Tensor<double> a = g.synthesize(w).image.value();
  Tensor<double> b = g.synthesize(ExtendedStyle<double>(g.block_count(), w)).image.value();
  CHECK(a == b);
  CHECK(a.shape() == Shape{2, 3, 16, 16});
}

TEST_CASE("block count mismatch is an error") {
  Generator<double> g(tiny_config(), 5);
  Var<double> w = Var<double>::constant(randn({1, 6}, 6));
  CHECK_THROWS_AS(g.synthesize(ExtendedStyle<double>(g.block_count() + 1, w)), ShapeError);
}

TEST_CASE("taps at a 32x32 configuration") {
  GeneratorConfig c;
  c.base_channels = 4;
  c.max_channels = 8;
  c.z_dim = c.w_dim = 8;
  Generator<float> g(c, 1);
  CHECK(g.block_count() == 4);
  Rng rng(1);
  Var<float> w = g.map(Var<float>::constant(sample_z<float>(2, 8, rng)));
  auto out = g.synthesize(w, true);
  REQUIRE(out.taps.size() == 2);
  CHECK(out.taps.count(8) == 1);
  CHECK(out.taps.count(16) == 1);
  CHECK(out.taps.at(8).shape() == Shape{2, 8, 8, 8});
  CHECK(out.taps.at(16).shape() == Shape{2, 8, 16, 16});
  // Taps observe without modifying.
  CHECK(g.synthesize(w, false).image.value() == out.image.value());
  CHECK(g.synthesize(w, false).taps.empty());

  GeneratorConfig c64 = c;
  c64.resolution = 64;
  CHECK(c64.taps() == std::vector<int>{8, 16, 32});
}

TEST_CASE("synthesis is continuous in w") {
  Generator<double> g(tiny_config(), 7);
  Tensor<double> w0 = randn({1, 6}, 8);
  Tensor<double> w1 = w0;
  for (auto& v : w1.data()) v += 1e-6;
  Tensor<double> a = g.synthesize(Var<double>::constant(w0)).image.value();
  Tensor<double> b = g.synthesize(Var<double>::constant(w1)).image.value();
  double norm = 0;
  for (int64_t i = 0; i < a.numel(); ++i) norm += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(std::sqrt(norm) < 1e-3);
  CHECK(max_abs_diff(a, b) > 0.0);
}

TEST_CASE("image loss gradient w.r.t. w matches finite differences") {
  Generator<double> g(tiny_config(), 9);
  Tensor<double> probe = randn({1, 3, 16, 16}, 10);
  auto f = [&](const std::vector<testing::VarD>& v) {
    Var<double> img = g.synthesize(v[0]).image;
    return ag::sum(img * Var<double>::constant(probe)) + ag::mean(img * img);
  };
  CHECK(testing::first_order_error(f, {randn({1, 6}, 11)}) < 1e-4);
}

TEST_CASE("generator parameter gradients match finite differences") {
  GeneratorConfig c = tiny_config();
  c.resolution = 8;
  Generator<double> g(c, 12);
  Tensor<double> probe = randn({2, 3, 8, 8}, 13);
  Var<double> w = Var<double>::constant(randn({2, 6}, 14));
  auto loss = [&] { return ag::sum(g.synthesize(w).image * Var<double>::constant(probe)); };
  for (const auto& p : g.parameters()) {
    Var<double> param = p.var;
    Tensor<double> analytic = ag::grad(loss(), {param})[0].value();
    double worst = 0;
    const double h = 1e-6;
    for (int64_t i = 0; i < std::min<int64_t>(param.numel(), 12); ++i) {
      const double orig = param.value()[i];
      ag::NoGradGuard ng;
      param.mutable_value()[i] = orig + h;
      const double up = loss().item();
      param.mutable_value()[i] = orig - h;
      const double down = loss().item();
      param.mutable_value()[i] = orig;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - analytic[i]) / std::max(1.0, std::abs(fd)));
    }
    INFO(p.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("truncation") {
  Tensor<double> mean = randn({6}, 20);
  Tensor<double> u = randn({1, 6}, 21);
  Tensor<double> w({1, 6});
  for (int i = 0; i < 6; ++i) w[i] = mean[i] + u[i];
  Var<double> wv = Var<double>::constant(w);
  CHECK(truncate(wv, 1.0, mean).value() == w);
  Tensor<double> t0 = truncate(wv, 0.0, mean).value();
  for (int i = 0; i < 6; ++i) CHECK(t0[i] == mean[i]);
  Tensor<double> t7 = truncate(wv, 0.7, mean).value();
  for (int i = 0; i < 6; ++i) CHECK(t7[i] == doctest::Approx(mean[i] + 0.7 * u[i]).epsilon(1e-14));
  CHECK_THROWS_AS(truncate(wv, 1.5, mean), RangeError);
  CHECK_THROWS_AS(truncate(wv, -0.1, mean), RangeError);
}

TEST_CASE("w_mean is the average of mapped samples") {
  Generator<double> g(tiny_config(), 30);
  Rng a(4), b(4);
  Tensor<double> m = g.compute_w_mean(50, a, 16);
  Var<double> ws = g.map(Var<double>::constant(sample_z<double>(50, 6, b)));
  for (int d = 0; d < 6; ++d) {
    double s = 0;
    for (int i = 0; i < 50; ++i) s += ws.value()[i * 6 + d];
    CHECK(m[d] == doctest::Approx(s / 50).epsilon(1e-12));
  }
}

TEST_CASE("noise injection is off by default and frozen without an rng") {
  GeneratorConfig c = tiny_config();
  CHECK_FALSE(c.noise);
  c.noise = true;
  Generator<double> g(c, 40);
  Var<double> w = Var<double>::constant(randn({1, 6}, 41));
  CHECK(g.synthesize(w).image.value() == g.synthesize(w).image.value());
  bool has_strength = false;
  for (const auto& p : g.parameters()) has_strength |= p.name.find("noise_strength") != std::string::npos;
  CHECK(has_strength);
}

TEST_CASE("parameter names are stable and unique") {
  Generator<float> g(tiny_config(), 1);
  auto p = g.parameters();
  std::set<std::string> names;
  for (const auto& n : p) names.insert(n.name);
  CHECK(names.size() == p.size());
  CHECK(names.count("mapping.fc0.weight") == 1);
  CHECK(names.count("synthesis.const") == 1);
  CHECK(names.count("synthesis.torgb.affine.weight") == 1);
}

TEST_CASE("config validation") {
  GeneratorConfig c;
  c.resolution = 24;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = GeneratorConfig{};
  c.tap_resolutions = {32};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
