#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "hsrgan/kernels/kernels.hpp"

using namespace hsrgan::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(size_t n, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> dist;
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(dist(gen));
  return v;
}

template <typename T>
double max_rel(const std::vector<T>& a, const std::vector<T>& b) {
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(double(a[i]) - double(b[i]));
    worst = std::max(worst, d / (1.0 + std::abs(double(a[i]))));
  }
  return worst;
}

template <typename T>
double tol() {
  return sizeof(T) == 4 ? 1e-4 : 1e-11;
}

template <typename T>
void check_gemm(const KernelTable<T>& ref, const KernelTable<T>& vec) {
  const int64_t dims[][3] = {{1, 1, 1}, {7, 13, 5}, {6, 16, 256}, {37, 70, 300}, {130, 9, 1029}, {5, 1100, 33}};
  unsigned seed = 1;
  for (const auto& d : dims) {
    for (int ta = 0; ta < 2; ++ta)
      for (int tb = 0; tb < 2; ++tb)
        for (int acc = 0; acc < 2; ++acc) {
          const int64_t m = d[0], n = d[1], k = d[2];
          auto a = random_vec<T>(m * k, seed++);
          auto b = random_vec<T>(k * n, seed++);
          auto c0 = random_vec<T>(m * n, seed++);
          auto c1 = c0;
          const int64_t lda = ta ? m : k, ldb = tb ? k : n;
          ref.gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, c0.data(), n, acc);
          vec.gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, c1.data(), n, acc);
          INFO("m=" << m << " n=" << n << " k=" << k << " ta=" << ta << " tb=" << tb);
          CHECK(max_rel(c0, c1) < tol<T>() * std::sqrt(double(k)));
        }
  }
}

template <typename T>
void check_elementwise(const KernelTable<T>& ref, const KernelTable<T>& vec) {
  for (int64_t n : {0, 1, 7, 8, 15, 64, 1001}) {
    auto a = random_vec<T>(n, 100 + n), b = random_vec<T>(n, 200 + n);
    std::vector<T> o0(n), o1(n);
    ref.add(a.data(), b.data(), o0.data(), n);
    vec.add(a.data(), b.data(), o1.data(), n);
    CHECK(o0 == o1);
    ref.sub(a.data(), b.data(), o0.data(), n);
    vec.sub(a.data(), b.data(), o1.data(), n);
    CHECK(o0 == o1);
    ref.mul(a.data(), b.data(), o0.data(), n);
    vec.mul(a.data(), b.data(), o1.data(), n);
    CHECK(o0 == o1);
    ref.scale(a.data(), T(0.37), o0.data(), n);
    vec.scale(a.data(), T(0.37), o1.data(), n);
    CHECK(o0 == o1);
    ref.leaky_relu(a.data(), T(0.2), T(1.5), o0.data(), n);
    vec.leaky_relu(a.data(), T(0.2), T(1.5), o1.data(), n);
    CHECK(max_rel(o0, o1) < tol<T>());
    o0 = b;
    o1 = b;
    ref.axpy(T(-0.7), a.data(), o0.data(), n);
    vec.axpy(T(-0.7), a.data(), o1.data(), n);
    CHECK(max_rel(o0, o1) < tol<T>());
    const double scale_n = 1.0 + std::sqrt(double(n));
    CHECK(std::abs(double(ref.sum(a.data(), n)) - double(vec.sum(a.data(), n))) < tol<T>() * scale_n);
    CHECK(std::abs(double(ref.dot(a.data(), b.data(), n)) - double(vec.dot(a.data(), b.data(), n))) <
          tol<T>() * scale_n);
    CHECK(std::abs(double(ref.squared_distance(a.data(), b.data(), n)) -
                   double(vec.squared_distance(a.data(), b.data(), n))) < tol<T>() * scale_n * 4);

    auto p0 = a, p1 = a, m0 = b, m1 = b;
    std::vector<T> v0(n, T(0.5)), v1(n, T(0.5));
    ref.adam(p0.data(), b.data(), m0.data(), v0.data(), n, T(0.01), T(0.9), T(0.99), T(1e-8), T(0.1), T(0.01));
    vec.adam(p1.data(), b.data(), m1.data(), v1.data(), n, T(0.01), T(0.9), T(0.99), T(1e-8), T(0.1), T(0.01));
    CHECK(max_rel(p0, p1) < tol<T>());
    CHECK(max_rel(m0, m1) < tol<T>());
    CHECK(max_rel(v0, v1) < tol<T>());
  }
}

// Each output row must not depend on the other rows in the batch.
template <typename T>
void check_row_independence(const KernelTable<T>& t) {
  const int64_t n = 29, k = 77;
  auto b = random_vec<T>(k * n, 5);
  auto a = random_vec<T>(40 * k, 6);
  std::vector<T> full(40 * n), single(n);
  t.gemm(false, false, 40, n, k, a.data(), k, b.data(), n, full.data(), n, false);
  for (int64_t r : {0, 5, 17, 39}) {
    t.gemm(false, false, 1, n, k, a.data() + r * k, k, b.data(), n, single.data(), n, false);
    CHECK(std::equal(single.begin(), single.end(), full.begin() + r * n));
  }
}

}  // namespace

TEST_CASE_TEMPLATE("vector kernels agree with the scalar reference", T, float, double) {
  if (!isa_available(Isa::avx2)) return;
  check_gemm(table<T>(Isa::scalar), table<T>(Isa::avx2));
  check_elementwise(table<T>(Isa::scalar), table<T>(Isa::avx2));
}

TEST_CASE_TEMPLATE("gemm rows are independent of batch position", T, float, double) {
  check_row_independence(table<T>(Isa::scalar));
  if (isa_available(Isa::avx2)) check_row_independence(table<T>(Isa::avx2));
}

TEST_CASE("scalar gemm matches a naive triple loop") {
  const auto& t = table<double>(Isa::scalar);
  const int64_t m = 4, n = 3, k = 5;
  auto a = random_vec<double>(m * k, 9), b = random_vec<double>(k * n, 10);
  std::vector<double> c(m * n);
  t.gemm(false, false, m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (int64_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-12));
    }
}
