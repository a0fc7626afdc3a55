#include "hsrgan/kernels/kernels.hpp"

#include <cmath>
#include <vector>

namespace hsrgan::kernels::detail {
namespace {

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, int64_t lda,
          const T* b, int64_t ldb, T* c, int64_t ldc, bool accumulate) {
  std::vector<T> row(static_cast<size_t>(n));
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    for (int64_t j = 0; j < n; ++j) row[j] = accumulate ? crow[j] : T(0);
    for (int64_t p = 0; p < k; ++p) {
      const T aip = trans_a ? a[p * lda + i] : a[i * lda + p];
      if (trans_b) {
        for (int64_t j = 0; j < n; ++j) row[j] += aip * b[j * ldb + p];
      } else {
        const T* brow = b + p * ldb;
        for (int64_t j = 0; j < n; ++j) row[j] += aip * brow[j];
      }
    }
    for (int64_t j = 0; j < n; ++j) crow[j] = row[j];
  }
}

template <typename T>
void add(const T* a, const T* b, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
template <typename T>
void sub(const T* a, const T* b, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
template <typename T>
void mul(const T* a, const T* b, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
template <typename T>
void scale(const T* a, T s, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * s;
}
template <typename T>
void axpy(T alpha, const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
template <typename T>
T sum(const T* a, int64_t n) {
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}
template <typename T>
T dot(const T* a, const T* b, int64_t n) {
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}
template <typename T>
T squared_distance(const T* a, const T* b, int64_t n) {
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    const T d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}
template <typename T>
void leaky_relu(const T* x, T slope, T gain, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = gain * (x[i] >= T(0) ? x[i] : slope * x[i]);
}
template <typename T>
void adam(T* param, const T* grad, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps, T bc1,
          T bc2) {
  for (int64_t i = 0; i < n; ++i) {
    const T g = grad[i];
    m[i] = beta1 * m[i] + (T(1) - beta1) * g;
    v[i] = beta2 * v[i] + (T(1) - beta2) * (g * g);
    const T denom = std::sqrt(v[i] / bc2) + eps;
    param[i] -= lr * (m[i] / bc1) / denom;
  }
}

template <typename T>
KernelTable<T> make() {
  return KernelTable<T>{&gemm<T>, &add<T>, &sub<T>, &mul<T>, &scale<T>, &axpy<T>,
                        &sum<T>,  &dot<T>, &squared_distance<T>, &leaky_relu<T>, &adam<T>};
}

}  // namespace

template <typename T>
const KernelTable<T>& scalar_table() {
  static const KernelTable<T> t = make<T>();
  return t;
}

template const KernelTable<float>& scalar_table<float>();
template const KernelTable<double>& scalar_table<double>();

}  // namespace hsrgan::kernels::detail
