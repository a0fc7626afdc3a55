// AVX2/FMA kernels. This translation unit is compiled with -mavx2 -mfma and must
// only be entered through the dispatch table after a CPUID check, so it avoids
// inline library code that could be merged with the baseline build.

#include "hsrgan/kernels/kernels.hpp"

#include <immintrin.h>

#include <cstdlib>
#include <cstring>

namespace hsrgan::kernels::detail {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using reg = __m256;
  static constexpr int width = 8;
  static reg zero() { return _mm256_setzero_ps(); }
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg set1(float x) { return _mm256_set1_ps(x); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_ps(a, b); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg sqrt(reg a) { return _mm256_sqrt_ps(a); }
  static reg ge_zero_mask(reg a) { return _mm256_cmp_ps(a, _mm256_setzero_ps(), _CMP_GE_OQ); }
  static reg blend(reg if_false, reg if_true, reg mask) {
    return _mm256_blendv_ps(if_false, if_true, mask);
  }
  static float hsum(reg v) {
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, v);
    float acc = 0.0f;
    for (int i = 0; i < 8; ++i) acc += lanes[i];
    return acc;
  }
  static float scalar_sqrt(float x) { return __builtin_sqrtf(x); }
};

template <>
struct Vec<double> {
  using reg = __m256d;
  static constexpr int width = 4;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg set1(double x) { return _mm256_set1_pd(x); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_pd(a, b); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg sqrt(reg a) { return _mm256_sqrt_pd(a); }
  static reg ge_zero_mask(reg a) { return _mm256_cmp_pd(a, _mm256_setzero_pd(), _CMP_GE_OQ); }
  static reg blend(reg if_false, reg if_true, reg mask) {
    return _mm256_blendv_pd(if_false, if_true, mask);
  }
  static double hsum(reg v) {
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, v);
    double acc = 0.0;
    for (int i = 0; i < 4; ++i) acc += lanes[i];
    return acc;
  }
  static double scalar_sqrt(double x) { return __builtin_sqrt(x); }
};

// ---------------------------------------------------------------------------
// GEMM: packed panels, MR x (2 * width) register tile.

constexpr int64_t kMr = 6;
constexpr int64_t kMc = 120;
constexpr int64_t kKc = 256;
constexpr int64_t kNc = 1024;

struct PackBuffers {
  void* a = nullptr;
  void* b = nullptr;
  PackBuffers() {
    a = std::aligned_alloc(64, kMc * kKc * sizeof(double));
    b = std::aligned_alloc(64, kKc * (kNc + 16) * sizeof(double));
  }
  ~PackBuffers() {
    std::free(a);
    std::free(b);
  }
  PackBuffers(const PackBuffers&) = delete;
  PackBuffers& operator=(const PackBuffers&) = delete;
};

thread_local PackBuffers pack_buffers;

template <typename T>
void micro_kernel(int64_t kc, const T* ap, const T* bp, T* c, int64_t ldc, bool load_c) {
  using V = Vec<T>;
  constexpr int W = V::width;
  typename V::reg acc[kMr][2];
  if (load_c) {
    for (int r = 0; r < kMr; ++r) {
      acc[r][0] = V::load(c + r * ldc);
      acc[r][1] = V::load(c + r * ldc + W);
    }
  } else {
    for (int r = 0; r < kMr; ++r) acc[r][0] = acc[r][1] = V::zero();
  }
  for (int64_t p = 0; p < kc; ++p) {
    const typename V::reg b0 = V::load(bp);
    const typename V::reg b1 = V::load(bp + W);
    for (int r = 0; r < kMr; ++r) {
      const typename V::reg av = V::set1(ap[r]);
      acc[r][0] = V::fmadd(av, b0, acc[r][0]);
      acc[r][1] = V::fmadd(av, b1, acc[r][1]);
    }
    ap += kMr;
    bp += 2 * W;
  }
  for (int r = 0; r < kMr; ++r) {
    V::store(c + r * ldc, acc[r][0]);
    V::store(c + r * ldc + W, acc[r][1]);
  }
}

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, int64_t lda,
          const T* b, int64_t ldb, T* c, int64_t ldc, bool accumulate) {
  constexpr int64_t nr = 2 * Vec<T>::width;
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (!accumulate)
      for (int64_t i = 0; i < m; ++i) std::memset(c + i * ldc, 0, sizeof(T) * n);
    return;
  }
  T* apack = static_cast<T*>(pack_buffers.a);
  T* bpack = static_cast<T*>(pack_buffers.b);
  alignas(32) T tile[kMr * nr];

  for (int64_t jc = 0; jc < n; jc += kNc) {
    const int64_t nc = (n - jc < kNc) ? n - jc : kNc;
    for (int64_t pc = 0; pc < k; pc += kKc) {
      const int64_t kc = (k - pc < kKc) ? k - pc : kKc;
      // Pack B[pc:pc+kc, jc:jc+nc] into column panels of width nr.
      for (int64_t j0 = 0; j0 < nc; j0 += nr) {
        T* dst = bpack + j0 * kc;
        const int64_t cols = (nc - j0 < nr) ? nc - j0 : nr;
        for (int64_t p = 0; p < kc; ++p) {
          for (int64_t q = 0; q < nr; ++q) {
            T val = 0;
            if (q < cols) {
              const int64_t row = pc + p, col = jc + j0 + q;
              val = trans_b ? b[col * ldb + row] : b[row * ldb + col];
            }
            dst[p * nr + q] = val;
          }
        }
      }
      const bool load_c = accumulate || pc > 0;
      for (int64_t ic = 0; ic < m; ic += kMc) {
        const int64_t mc = (m - ic < kMc) ? m - ic : kMc;
        for (int64_t i0 = 0; i0 < mc; i0 += kMr) {
          T* dst = apack + i0 * kc;
          const int64_t rows = (mc - i0 < kMr) ? mc - i0 : kMr;
          for (int64_t p = 0; p < kc; ++p) {
            for (int64_t r = 0; r < kMr; ++r) {
              T val = 0;
              if (r < rows) {
                const int64_t row = ic + i0 + r, col = pc + p;
                val = trans_a ? a[col * lda + row] : a[row * lda + col];
              }
              dst[p * kMr + r] = val;
            }
          }
        }
        for (int64_t j0 = 0; j0 < nc; j0 += nr) {
          const int64_t cols = (nc - j0 < nr) ? nc - j0 : nr;
          for (int64_t i0 = 0; i0 < mc; i0 += kMr) {
            const int64_t rows = (mc - i0 < kMr) ? mc - i0 : kMr;
            T* cblock = c + (ic + i0) * ldc + (jc + j0);
            const T* ap = apack + i0 * kc;
            const T* bp = bpack + j0 * kc;
            if (rows == kMr && cols == nr) {
              micro_kernel<T>(kc, ap, bp, cblock, ldc, load_c);
            } else {
              for (int64_t r = 0; r < kMr; ++r)
                for (int64_t q = 0; q < nr; ++q)
                  tile[r * nr + q] = (load_c && r < rows && q < cols) ? cblock[r * ldc + q] : T(0);
              micro_kernel<T>(kc, ap, bp, tile, nr, load_c);
              for (int64_t r = 0; r < rows; ++r)
                for (int64_t q = 0; q < cols; ++q) cblock[r * ldc + q] = tile[r * nr + q];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reductions.

template <typename T, typename VecOp, typename ScalarOp>
void binary(const T* a, const T* b, T* out, int64_t n, VecOp vop, ScalarOp sop) {
  using V = Vec<T>;
  int64_t i = 0;
  for (; i + V::width <= n; i += V::width) V::store(out + i, vop(V::load(a + i), V::load(b + i)));
  for (; i < n; ++i) out[i] = sop(a[i], b[i]);
}

template <typename T>
void add(const T* a, const T* b, T* out, int64_t n) {
  binary(a, b, out, n, [](auto x, auto y) { return Vec<T>::add(x, y); },
         [](T x, T y) { return x + y; });
}
template <typename T>
void sub(const T* a, const T* b, T* out, int64_t n) {
  binary(a, b, out, n, [](auto x, auto y) { return Vec<T>::sub(x, y); },
         [](T x, T y) { return x - y; });
}
template <typename T>
void mul(const T* a, const T* b, T* out, int64_t n) {
  binary(a, b, out, n, [](auto x, auto y) { return Vec<T>::mul(x, y); },
         [](T x, T y) { return x * y; });
}

template <typename T>
void scale(const T* a, T s, T* out, int64_t n) {
  using V = Vec<T>;
  const auto sv = V::set1(s);
  int64_t i = 0;
  for (; i + V::width <= n; i += V::width) V::store(out + i, V::mul(V::load(a + i), sv));
  for (; i < n; ++i) out[i] = a[i] * s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, int64_t n) {
  using V = Vec<T>;
  const auto av = V::set1(alpha);
  int64_t i = 0;
  for (; i + V::width <= n; i += V::width)
    V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T sum(const T* a, int64_t n) {
  using V = Vec<T>;
  auto acc0 = V::zero(), acc1 = V::zero();
  int64_t i = 0;
  for (; i + 2 * V::width <= n; i += 2 * V::width) {
    acc0 = V::add(acc0, V::load(a + i));
    acc1 = V::add(acc1, V::load(a + i + V::width));
  }
  for (; i + V::width <= n; i += V::width) acc0 = V::add(acc0, V::load(a + i));
  T total = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) total += a[i];
  return total;
}

template <typename T>
T dot(const T* a, const T* b, int64_t n) {
  using V = Vec<T>;
  auto acc0 = V::zero(), acc1 = V::zero();
  int64_t i = 0;
  for (; i + 2 * V::width <= n; i += 2 * V::width) {
    acc0 = V::fmadd(V::load(a + i), V::load(b + i), acc0);
    acc1 = V::fmadd(V::load(a + i + V::width), V::load(b + i + V::width), acc1);
  }
  for (; i + V::width <= n; i += V::width) acc0 = V::fmadd(V::load(a + i), V::load(b + i), acc0);
  T total = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

template <typename T>
T squared_distance(const T* a, const T* b, int64_t n) {
  using V = Vec<T>;
  auto acc0 = V::zero(), acc1 = V::zero();
  int64_t i = 0;
  for (; i + 2 * V::width <= n; i += 2 * V::width) {
    const auto d0 = V::sub(V::load(a + i), V::load(b + i));
    const auto d1 = V::sub(V::load(a + i + V::width), V::load(b + i + V::width));
    acc0 = V::fmadd(d0, d0, acc0);
    acc1 = V::fmadd(d1, d1, acc1);
  }
  for (; i + V::width <= n; i += V::width) {
    const auto d = V::sub(V::load(a + i), V::load(b + i));
    acc0 = V::fmadd(d, d, acc0);
  }
  T total = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) {
    const T d = a[i] - b[i];
    total += d * d;
  }
  return total;
}

template <typename T>
void leaky_relu(const T* x, T slope, T gain, T* out, int64_t n) {
  using V = Vec<T>;
  const auto sv = V::set1(slope);
  const auto gv = V::set1(gain);
  int64_t i = 0;
  for (; i + V::width <= n; i += V::width) {
    const auto v = V::load(x + i);
    const auto r = V::blend(V::mul(v, sv), v, V::ge_zero_mask(v));
    V::store(out + i, V::mul(gv, r));
  }
  for (; i < n; ++i) out[i] = gain * (x[i] >= T(0) ? x[i] : slope * x[i]);
}

template <typename T>
void adam(T* param, const T* grad, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps, T bc1,
          T bc2) {
  using V = Vec<T>;
  const auto b1 = V::set1(beta1), b2 = V::set1(beta2);
  const auto ob1 = V::set1(T(1) - beta1), ob2 = V::set1(T(1) - beta2);
  const auto lrv = V::set1(lr), epsv = V::set1(eps), c1 = V::set1(bc1), c2 = V::set1(bc2);
  int64_t i = 0;
  for (; i + V::width <= n; i += V::width) {
    const auto g = V::load(grad + i);
    const auto mi = V::add(V::mul(b1, V::load(m + i)), V::mul(ob1, g));
    const auto vi = V::add(V::mul(b2, V::load(v + i)), V::mul(ob2, V::mul(g, g)));
    V::store(m + i, mi);
    V::store(v + i, vi);
    const auto denom = V::add(V::sqrt(V::div(vi, c2)), epsv);
    const auto step = V::div(V::mul(lrv, V::div(mi, c1)), denom);
    V::store(param + i, V::sub(V::load(param + i), step));
  }
  for (; i < n; ++i) {
    const T g = grad[i];
    m[i] = beta1 * m[i] + (T(1) - beta1) * g;
    v[i] = beta2 * v[i] + (T(1) - beta2) * (g * g);
    const T denom = Vec<T>::scalar_sqrt(v[i] / bc2) + eps;
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
const KernelTable<T>& avx2_table() {
  static const KernelTable<T> t = make<T>();
  return t;
}

template const KernelTable<float>& avx2_table<float>();
template const KernelTable<double>& avx2_table<double>();

}  // namespace hsrgan::kernels::detail
