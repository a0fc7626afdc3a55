#pragma once
// Dense arithmetic kernels with a scalar reference implementation and an
// AVX2/FMA variant. The variant is picked once per process from CPUID and the
// HSRGAN_SIMD environment variable ("scalar" or "avx2").
//
// Every kernel accumulates each output element in a fixed order that does not
// depend on its position in the output, so results are independent of how a
// batch is tiled.

#include <cstdint>
#include <string_view>

namespace hsrgan::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

template <typename T>
struct KernelTable {
  // C[m x n] = op(A) * op(B) (+ C when accumulate). Row-major, op = optional transpose.
  void (*gemm)(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a,
               int64_t lda, const T* b, int64_t ldb, T* c, int64_t ldc, bool accumulate);
  void (*add)(const T* a, const T* b, T* out, int64_t n);
  void (*sub)(const T* a, const T* b, T* out, int64_t n);
  void (*mul)(const T* a, const T* b, T* out, int64_t n);
  void (*scale)(const T* a, T s, T* out, int64_t n);
  // y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, int64_t n);
  T (*sum)(const T* a, int64_t n);
  T (*dot)(const T* a, const T* b, int64_t n);
  T (*squared_distance)(const T* a, const T* b, int64_t n);
  // out = gain * (x >= 0 ? x : slope * x)
  void (*leaky_relu)(const T* x, T slope, T gain, T* out, int64_t n);
  // Adam with decoupled bias corrections: p -= lr * (m / bc1) / (sqrt(v / bc2) + eps)
  void (*adam)(T* param, const T* grad, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps,
               T bc1, T bc2);
};

bool isa_available(Isa isa);
Isa active_isa();

template <typename T>
const KernelTable<T>& table(Isa isa);

template <typename T>
const KernelTable<T>& table() {
  return table<T>(active_isa());
}

namespace detail {
template <typename T>
const KernelTable<T>& scalar_table();
template <typename T>
const KernelTable<T>& avx2_table();
}  // namespace detail

}  // namespace hsrgan::kernels
