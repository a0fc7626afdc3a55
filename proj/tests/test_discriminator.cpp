#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "hsrgan/core/error.hpp"
#include "hsrgan/model/discriminator.hpp"

using namespace hsrgan;
using namespace hsrgan::model;
using ag::Var;
using testing::randn;

namespace {

DiscriminatorConfig tiny_config() {
  DiscriminatorConfig c;
  c.resolution = 8;
  c.base_channels = 2;
  c.max_channels = 4;
  return c;
}

Tensor<double> uniform_images(const Shape& s, unsigned seed) {
  Tensor<double> t = randn(s, seed);
  for (auto& v : t.data()) v = std::tanh(v);
  return t;
}

}  // namespace

TEST_CASE("identical inputs give identical logits") {
  Discriminator<double> d(tiny_config(), 1);
  Var<double> x = Var<double>::constant(uniform_images({4, 3, 8, 8}, 2));
  Tensor<double> a = d(x).value(), b = d(x).value();
  CHECK(a == b);
  CHECK(a.shape() == Shape{4, 1});
  for (double v : a.data()) CHECK(std::isfinite(v));
}

TEST_CASE("logits keep batch order") {
  DiscriminatorConfig c = tiny_config();
  c.mbstd_group = 1;
  Discriminator<double> d(c, 3);
  Tensor<double> x = uniform_images({3, 3, 8, 8}, 4);
  Tensor<double> all = d(Var<double>::constant(x)).value();
  for (int64_t i = 0; i < 3; ++i) {
    Tensor<double> one({1, 3, 8, 8});
    std::copy_n(x.ptr() + i * 192, 192, one.ptr());
    CHECK(d(Var<double>::constant(one)).value()[0] == doctest::Approx(all[i]).epsilon(1e-12));
  }
  // Within one stddev group the statistic is permutation invariant, so reversing the batch reverses the logits.
  Discriminator<double> grouped(tiny_config(), 3);
  Tensor<double> x4 = uniform_images({4, 3, 8, 8}, 5), rev({4, 3, 8, 8});
  for (int64_t i = 0; i < 4; ++i) std::copy_n(x4.ptr() + i * 192, 192, rev.ptr() + (3 - i) * 192);
  Tensor<double> a = grouped(Var<double>::constant(x4)).value(), b = grouped(Var<double>::constant(rev)).value();
  for (int64_t i = 0; i < 4; ++i) CHECK(a[i] == doctest::Approx(b[3 - i]).epsilon(1e-12));
}

TEST_CASE("resolution mismatch is rejected") {
  Discriminator<double> d(tiny_config(), 1);
  CHECK_THROWS_AS(d(Var<double>::constant(Tensor<double>({1, 3, 16, 16}))), ShapeError);
}

TEST_CASE("logit input gradient matches finite differences") {
  Discriminator<double> d(tiny_config(), 6);
  auto f = [&](const std::vector<testing::VarD>& v) { return ag::sum(d(v[0])); };
  CHECK(testing::first_order_error(f, {uniform_images({2, 3, 8, 8}, 7)}) < 1e-4);
}

TEST_CASE("minibatch stddev second derivatives") {
  auto f = [](const std::vector<testing::VarD>& v) {
    Var<double> y = minibatch_stddev(v[0], 4);
    return ag::sum(y * y * y);
  };
  CHECK(testing::second_order_error(f, {randn({4, 2, 2, 2}, 8)}) < 1e-5);
}

TEST_CASE("minibatch stddev value") {
  Tensor<double> x({2, 1, 1, 1});
  x[0] = 1.0;
  x[1] = 3.0;
  Tensor<double> y = minibatch_stddev(Var<double>::constant(x), 4).value();
  CHECK(y.shape() == Shape{2, 2, 1, 1});
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(y[3] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("augmentation with p = 0 is the identity") {
  AugmentConfig c;
  c.p = 0.0;
  Rng rng(1);
  Tensor<double> x = uniform_images({3, 3, 8, 8}, 9);
  CHECK(augment(Var<double>::constant(x), c, rng).value() == x);
}

TEST_CASE("flip is an involution") {
  AugmentConfig c;
  c.p = 1.0;
  c.translate = false;
  c.brightness = false;
  Rng rng(2);
  Tensor<double> x = uniform_images({3, 3, 8, 8}, 10);
  Var<double> once = augment(Var<double>::constant(x), c, rng);
  CHECK_FALSE(once.value() == x);
  CHECK(augment(once, c, rng).value() == x);
}

TEST_CASE("application frequency matches p") {
  AugmentConfig c;
  c.p = 0.3;
  Rng rng(3);
  int flips = 0, shifts = 0, bright = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    AugmentDraw d = draw_augment(1, 32, c, rng);
    flips += d.flipped[0];
    shifts += d.translated[0];
    bright += d.brightened[0];
    CHECK(std::abs(d.dx[0]) <= 4);
    CHECK(std::abs(d.brightness[0]) <= 0.2);
  }
  CHECK(std::abs(flips / double(n) - 0.3) < 0.02);
  CHECK(std::abs(shifts / double(n) - 0.3) < 0.02);
  CHECK(std::abs(bright / double(n) - 0.3) < 0.02);
}

TEST_CASE("augmentation keeps shape and range") {
  AugmentConfig c;
  c.p = 1.0;
  Rng rng(4);
  Tensor<double> x = uniform_images({8, 3, 16, 16}, 11);
  Tensor<double> y = augment(Var<double>::constant(x), c, rng).value();
  CHECK(y.shape() == x.shape());
  for (double v : y.data()) CHECK((v >= -1.0 && v <= 1.0));
}

TEST_CASE("augmentation is differentiable") {
  AugmentConfig c;
  c.p = 0.7;
  Rng rng(5);
  AugmentDraw draw = draw_augment(3, 8, c, rng);
  auto f = [&](const std::vector<testing::VarD>& v) {
    Var<double> y = apply_augment(v[0], draw);
    return ag::sum(y * y * y);
  };
  Tensor<double> x = randn({3, 3, 8, 8}, 12, 0.3);
  CHECK(testing::first_order_error(f, {x}) < 1e-6);
}

TEST_CASE("output is finite for inputs in range") {
  DiscriminatorConfig c;
  c.base_channels = 4;
  c.max_channels = 16;
  Discriminator<float> d(c, 13);
  Tensor<float> x({4, 3, 32, 32}, 1.0f);
  for (int64_t i = 0; i < x.numel(); i += 2) x[i] = -1.0f;
  for (float v : d(Var<float>::constant(x)).value().data()) CHECK(std::isfinite(v));
}
