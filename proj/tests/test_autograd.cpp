#include <memory>

#include "gradcheck.hpp"
#include "hsrgan/core/error.hpp"

using namespace hsrgan;
using namespace hsrgan::ag;
using testing::randn;
using testing::VarD;

namespace {

// Smooth nonlinearity so second derivatives are informative.
VarD smooth(const VarD& x) { return softplus(x) * sigmoid(x); }

void check_both(const testing::ScalarFn& f, const std::vector<Tensor<double>>& values,
                double tol1 = 1e-6, double tol2 = 1e-5) {
  CHECK(testing::first_order_error(f, values) < tol1);
  CHECK(testing::second_order_error(f, values) < tol2);
}

}  // namespace

TEST_CASE("broadcast arithmetic") {
  auto f = [](const std::vector<VarD>& v) {
    return sum(smooth(v[0] * v[1] + v[2] - v[1]) * v[0]);
  };
  check_both(f, {randn({3, 1, 4}, 1), randn({2, 4}, 2), randn({1}, 3)});
}

TEST_CASE("pow, scale, mean and sum_to") {
  auto f = [](const std::vector<VarD>& v) {
    VarD s = sum_to(v[0] * v[0], Shape{1, 5});
    return mean(pow_scalar(add_scalar(s, 1.0), -0.5)) + scale(sum(pow_scalar(v[0], 3.0)), 0.1);
  };
  check_both(f, {randn({4, 5}, 4)});
}

TEST_CASE("leaky relu and clamp") {
  auto f = [](const std::vector<VarD>& v) {
    return sum(smooth(leaky_relu(v[0], 0.2, 1.41)) + clamp(v[0], -0.5, 0.5) * v[0]);
  };
  check_both(f, {randn({30}, 5)});
}

TEST_CASE("matmul in all transpose modes") {
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      auto f = [ta, tb](const std::vector<VarD>& v) { return sum(smooth(matmul(v[0], v[1], ta, tb))); };
      Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
      Shape sb = tb ? Shape{5, 4} : Shape{4, 5};
      check_both(f, {randn(sa, 6 + ta), randn(sb, 8 + tb)});
    }
}

TEST_CASE("conv2d and its adjoints") {
  for (int64_t k : {1, 3}) {
    auto f = [](const std::vector<VarD>& v) { return sum(smooth(conv2d(v[0], v[1]))); };
    check_both(f, {randn({2, 3, 5, 4}, 10), randn({2, 3, k, k}, 11, 0.5)});
    auto g = [k](const std::vector<VarD>& v) {
      return sum(smooth(conv2d_input_grad(v[0], v[1]))) + sum(smooth(conv2d_weight_grad(v[2], v[0], k)));
    };
    check_both(g, {randn({2, 2, 4, 4}, 12), randn({2, 3, k, k}, 13, 0.5), randn({2, 3, 4, 4}, 14)});
  }
}

TEST_CASE("conv2d adjoint identity") {
  Tensor<double> x = randn({2, 3, 6, 5}, 20), w = randn({4, 3, 3, 3}, 21), g = randn({2, 4, 6, 5}, 22);
  const double lhs = sum(conv2d(VarD::constant(x), VarD::constant(w)) * VarD::constant(g)).item();
  const double rhs = sum(VarD::constant(x) * conv2d_input_grad(VarD::constant(g), VarD::constant(w))).item();
  const double rhs2 = sum(VarD::constant(w) * conv2d_weight_grad(VarD::constant(x), VarD::constant(g), 3)).item();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  CHECK(lhs == doctest::Approx(rhs2).epsilon(1e-12));
}

TEST_CASE("resampling ops") {
  auto f = [](const std::vector<VarD>& v) {
    VarD up = upsample2x(v[0]);
    VarD down = avg_pool2x(up * up);
    VarD bl = bilinear_resize(smooth(down), 3, 5);
    return sum(smooth(bl)) + sum(global_avg_pool(v[0]) * global_avg_pool(v[0]));
  };
  check_both(f, {randn({2, 2, 4, 4}, 30)});
}

TEST_CASE("bilinear resize preserves constants and averages 2x downsampling") {
  Tensor<double> c({1, 1, 8, 8}, 3.5);
  auto r = bilinear_resize(VarD::constant(c), 7, 7).value();
  for (double v : r.data()) CHECK(v == doctest::Approx(3.5));
  Tensor<double> x = randn({1, 1, 8, 8}, 31);
  auto a = bilinear_resize(VarD::constant(x), 4, 4).value();
  auto b = avg_pool2x(VarD::constant(x)).value();
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]));
}

TEST_CASE("channel concat, slice and pad") {
  auto f = [](const std::vector<VarD>& v) {
    VarD c = concat_channels(v[0], v[1]);
    VarD s = slice_channels(smooth(c), 1, 3);
    return sum(smooth(pad_channels(s, 2, 6)));
  };
  check_both(f, {randn({2, 2, 3, 3}, 40), randn({2, 3, 3, 3}, 41)});
}

TEST_CASE("spatial jitter and its adjoint") {
  auto params = std::make_shared<const std::vector<SpatialJitter>>(
      std::vector<SpatialJitter>{{true, 1, -2}, {false, -3, 1}, {true, 0, 0}});
  auto f = [params](const std::vector<VarD>& v) { return sum(smooth(spatial_jitter(v[0], params))); };
  check_both(f, {randn({3, 2, 5, 6}, 50)});
  Tensor<double> x = randn({3, 2, 5, 6}, 51), g = randn({3, 2, 5, 6}, 52);
  const double lhs = sum(spatial_jitter(VarD::constant(x), params) * VarD::constant(g)).item();
  const double rhs = sum(VarD::constant(x) * spatial_jitter(VarD::constant(g), params, true)).item();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("grad returns zeros for unreachable inputs and respects detach") {
  VarD a = VarD::parameter(randn({3}, 60)), b = VarD::parameter(randn({3}, 61));
  auto gs = grad(sum(a * detach(b)), {a, b});
  REQUIRE(gs.size() == 2);
  for (double v : gs[1].value().data()) CHECK(v == 0.0);
  for (int i = 0; i < 3; ++i) CHECK(gs[0].value()[i] == b.value()[i]);
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  VarD a = VarD::parameter(randn({3}, 62));
  NoGradGuard guard;
  VarD y = sum(a * a);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("broadcast shape errors") {
  CHECK_THROWS_AS(broadcast_shape({2, 3}, {4, 3}), ShapeError);
  CHECK(broadcast_shape({3, 1}, {1, 4}) == Shape{3, 4});
}
