#include "hsrgan/autograd/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "hsrgan/core/error.hpp"
#include "hsrgan/kernels/kernels.hpp"

namespace hsrgan::ag {

namespace {

using Strides = std::vector<int64_t>;

template <typename T>
const kernels::KernelTable<T>& K() {
  return kernels::table<T>();
}

Strides contiguous_strides(const Shape& shape) {
  Strides s(shape.size());
  int64_t acc = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    s[i] = acc;
    acc *= shape[i];
  }
  return s;
}

// Strides of `in` laid out against the (larger or equal rank) `out` shape;
// broadcast dimensions get stride 0.
Strides aligned_strides(const Shape& in, const Shape& out) {
  const Strides base = contiguous_strides(in);
  Strides s(out.size(), 0);
  const size_t offset = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i) s[offset + i] = (in[i] == 1 && out[offset + i] != 1) ? 0 : base[i];
  return s;
}

// Drops unit dimensions and merges dimensions that are contiguous for every operand.
template <size_t N>
void coalesce(Shape& shape, std::array<Strides, N>& strides) {
  Shape ns;
  std::array<Strides, N> nst;
  for (size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] == 1) continue;
    if (!ns.empty()) {
      bool mergeable = true;
      for (size_t k = 0; k < N; ++k)
        mergeable = mergeable && nst[k].back() == strides[k][d] * shape[d];
      if (mergeable) {
        ns.back() *= shape[d];
        for (size_t k = 0; k < N; ++k) nst[k].back() = strides[k][d];
        continue;
      }
    }
    ns.push_back(shape[d]);
    for (size_t k = 0; k < N; ++k) nst[k].push_back(strides[k][d]);
  }
  if (ns.empty()) {
    ns.push_back(1);
    for (size_t k = 0; k < N; ++k) nst[k].push_back(0);
  }
  shape = std::move(ns);
  strides = std::move(nst);
}

// Calls f(offsets, inner_length, inner_strides) for each innermost run.
template <size_t N, typename F>
void for_each_run(const Shape& shape, const std::array<Strides, N>& strides, F&& f) {
  const size_t rank = shape.size();
  const int64_t inner = shape[rank - 1];
  std::array<int64_t, N> inner_strides{};
  for (size_t k = 0; k < N; ++k) inner_strides[k] = strides[k][rank - 1];
  int64_t outer = 1;
  for (size_t d = 0; d + 1 < rank; ++d) outer *= shape[d];
  std::vector<int64_t> idx(rank, 0);
  std::array<int64_t, N> off{};
  for (int64_t o = 0; o < outer; ++o) {
    f(off, inner, inner_strides);
    for (size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      for (size_t k = 0; k < N; ++k) off[k] += strides[k][d];
      if (idx[d] < shape[d]) break;
      for (size_t k = 0; k < N; ++k) off[k] -= strides[k][d] * shape[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { add, sub, mul };

template <typename T>
Tensor<T> binary_forward(const Tensor<T>& a, const Tensor<T>& b, BinOp op) {
  const auto& k = K<T>();
  if (a.shape() == b.shape()) {
    Tensor<T> out(a.shape());
    const int64_t n = out.numel();
    switch (op) {
      case BinOp::add: k.add(a.ptr(), b.ptr(), out.ptr(), n); break;
      case BinOp::sub: k.sub(a.ptr(), b.ptr(), out.ptr(), n); break;
      case BinOp::mul: k.mul(a.ptr(), b.ptr(), out.ptr(), n); break;
    }
    return out;
  }
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  Shape shape = out_shape;
  std::array<Strides, 3> st{aligned_strides(a.shape(), out_shape),
                            aligned_strides(b.shape(), out_shape), contiguous_strides(out_shape)};
  coalesce(shape, st);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for_each_run<3>(shape, st, [&](const std::array<int64_t, 3>& off, int64_t n,
                                 const std::array<int64_t, 3>& in) {
    const T* x = pa + off[0];
    const T* y = pb + off[1];
    T* z = po + off[2];
    const int64_t sx = in[0], sy = in[1];
    if (sx == 1 && sy == 1) {
      switch (op) {
        case BinOp::add: k.add(x, y, z, n); break;
        case BinOp::sub: k.sub(x, y, z, n); break;
        case BinOp::mul: k.mul(x, y, z, n); break;
      }
      return;
    }
    for (int64_t i = 0; i < n; ++i) {
      const T u = x[i * sx], v = y[i * sy];
      z[i] = op == BinOp::add ? u + v : op == BinOp::sub ? u - v : u * v;
    }
  });
  return out;
}

template <typename T>
Tensor<T> sum_to_forward(const Tensor<T>& a, const Shape& target) {
  if (a.shape() == target) return a;
  if (target.size() > a.shape().size()) throw ShapeError("sum_to: target rank exceeds input rank");
  const size_t offset = a.shape().size() - target.size();
  for (size_t i = 0; i < target.size(); ++i)
    if (target[i] != 1 && target[i] != a.shape()[offset + i])
      throw ShapeError("sum_to: cannot reduce " + to_string(a.shape()) + " to " + to_string(target));
  Tensor<T> out(target);
  Shape shape = a.shape();
  std::array<Strides, 2> st{contiguous_strides(a.shape()), aligned_strides(target, a.shape())};
  coalesce(shape, st);
  const auto& k = K<T>();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for_each_run<2>(shape, st, [&](const std::array<int64_t, 2>& off, int64_t n,
                                 const std::array<int64_t, 2>& in) {
    const T* x = pa + off[0];
    T* z = po + off[1];
    if (in[1] == 0) {
      if (in[0] == 1) {
        z[0] += k.sum(x, n);
      } else {
        for (int64_t i = 0; i < n; ++i) z[0] += x[i * in[0]];
      }
    } else {
      for (int64_t i = 0; i < n; ++i) z[i * in[1]] += x[i * in[0]];
    }
  });
  return out;
}

template <typename T>
Tensor<T> broadcast_forward(const Tensor<T>& a, const Shape& target) {
  if (a.shape() == target) return a;
  if (broadcast_shape(a.shape(), target) != target)
    throw ShapeError("broadcast_to: cannot broadcast " + to_string(a.shape()) + " to " +
                     to_string(target));
  Tensor<T> out(target);
  Shape shape = target;
  std::array<Strides, 2> st{aligned_strides(a.shape(), target), contiguous_strides(target)};
  coalesce(shape, st);
  const T* pa = a.ptr();
  T* po = out.ptr();
  for_each_run<2>(shape, st, [&](const std::array<int64_t, 2>& off, int64_t n,
                                 const std::array<int64_t, 2>& in) {
    const T* x = pa + off[0];
    T* z = po + off[1];
    if (in[0] == 0) {
      std::fill(z, z + n, x[0]);
    } else {
      for (int64_t i = 0; i < n; ++i) z[i] = x[i * in[0]];
    }
  });
  return out;
}

template <typename T>
Tensor<T> map_unary(const Tensor<T>& a, auto&& f) {
  Tensor<T> out(a.shape());
  const T* x = a.ptr();
  T* y = out.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) y[i] = f(x[i]);
  return out;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T power(T x, double p) {
  if (p == 1.0) return x;
  if (p == 2.0) return x * x;
  if (p == 0.5) return std::sqrt(x);
  if (p == -0.5) return T(1) / std::sqrt(x);
  if (p == -1.0) return T(1) / x;
  if (p == -1.5) return T(1) / (x * std::sqrt(x));
  return static_cast<T>(std::pow(x, static_cast<T>(p)));
}

// --- convolution helpers -------------------------------------------------

template <typename T>
void im2col(const T* x, int64_t c, int64_t h, int64_t w, int64_t k, T* col) {
  const int64_t pad = k / 2;
  const int64_t hw = h * w;
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx) {
        T* dst = col + ((ci * k + ky) * k + kx) * hw;
        const T* src = x + ci * hw;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + ky - pad;
          T* row = dst + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, T(0));
            continue;
          }
          for (int64_t xx = 0; xx < w; ++xx) {
            const int64_t sx = xx + kx - pad;
            row[xx] = (sx < 0 || sx >= w) ? T(0) : src[sy * w + sx];
          }
        }
      }
}

template <typename T>
void col2im(const T* col, int64_t c, int64_t h, int64_t w, int64_t k, T* x) {
  const int64_t pad = k / 2;
  const int64_t hw = h * w;
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx) {
        const T* src = col + ((ci * k + ky) * k + kx) * hw;
        T* dst = x + ci * hw;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int64_t xx = 0; xx < w; ++xx) {
            const int64_t sx = xx + kx - pad;
            if (sx >= 0 && sx < w) dst[sy * w + sx] += src[y * w + xx];
          }
        }
      }
}

void check_conv_weight(const Shape& w) {
  if (w.size() != 4 || w[2] != w[3] || w[2] % 2 == 0)
    throw ShapeError("conv weight must be [O,C,k,k] with odd k, got " + to_string(w));
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w) {
  check_conv_weight(w.shape());
  if (x.rank() != 4 || x.dim(1) != w.dim(1))
    throw ShapeError("conv2d input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(w.shape()));
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t o = w.dim(0), k = w.dim(2), hw = h * wd, ckk = c * k * k;
  Tensor<T> out({b, o, h, wd});
  const auto& kt = K<T>();
  std::vector<T> col(k == 1 ? 0 : static_cast<size_t>(ckk * hw));
  for (int64_t bi = 0; bi < b; ++bi) {
    const T* xb = x.ptr() + bi * c * hw;
    const T* src = xb;
    if (k != 1) {
      im2col(xb, c, h, wd, k, col.data());
      src = col.data();
    }
    kt.gemm(false, false, o, hw, ckk, w.ptr(), ckk, src, hw, out.ptr() + bi * o * hw, hw, false);
  }
  return out;
}

template <typename T>
Tensor<T> conv_input_grad_forward(const Tensor<T>& g, const Tensor<T>& w) {
  check_conv_weight(w.shape());
  if (g.rank() != 4 || g.dim(1) != w.dim(0))
    throw ShapeError("conv2d_input_grad shapes " + to_string(g.shape()) + " / " + to_string(w.shape()));
  const int64_t b = g.dim(0), o = g.dim(1), h = g.dim(2), wd = g.dim(3);
  const int64_t c = w.dim(1), k = w.dim(2), hw = h * wd, ckk = c * k * k;
  Tensor<T> out({b, c, h, wd});
  const auto& kt = K<T>();
  std::vector<T> col(k == 1 ? 0 : static_cast<size_t>(ckk * hw));
  for (int64_t bi = 0; bi < b; ++bi) {
    const T* gb = g.ptr() + bi * o * hw;
    T* xb = out.ptr() + bi * c * hw;
    if (k == 1) {
      kt.gemm(true, false, c, hw, o, w.ptr(), ckk, gb, hw, xb, hw, false);
    } else {
      kt.gemm(true, false, ckk, hw, o, w.ptr(), ckk, gb, hw, col.data(), hw, false);
      col2im(col.data(), c, h, wd, k, xb);
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv_weight_grad_forward(const Tensor<T>& x, const Tensor<T>& g, int64_t k) {
  if (x.rank() != 4 || g.rank() != 4 || x.dim(0) != g.dim(0) || x.dim(2) != g.dim(2) ||
      x.dim(3) != g.dim(3) || k % 2 == 0)
    throw ShapeError("conv2d_weight_grad shapes " + to_string(x.shape()) + " / " + to_string(g.shape()));
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t o = g.dim(1), hw = h * wd, ckk = c * k * k;
  Tensor<T> out({o, c, k, k});
  const auto& kt = K<T>();
  std::vector<T> col(k == 1 ? 0 : static_cast<size_t>(ckk * hw));
  for (int64_t bi = 0; bi < b; ++bi) {
    const T* xb = x.ptr() + bi * c * hw;
    const T* src = xb;
    if (k != 1) {
      im2col(xb, c, h, wd, k, col.data());
      src = col.data();
    }
    kt.gemm(false, true, o, ckk, hw, g.ptr() + bi * o * hw, hw, src, hw, out.ptr(), ckk, bi > 0);
  }
  return out;
}

// --- resampling ------------------------------------------------------------

template <typename T>
Tensor<T> resample_forward(const Tensor<T>& x, const Resampler& r) {
  if (x.rank() != 4 || x.dim(2) != r.in_h || x.dim(3) != r.in_w)
    throw ShapeError("resample input " + to_string(x.shape()) + " does not match map " +
                     std::to_string(r.in_h) + "x" + std::to_string(r.in_w));
  const int64_t planes = x.dim(0) * x.dim(1);
  Tensor<T> out({x.dim(0), x.dim(1), r.out_h, r.out_w});
  std::vector<T> tmp(static_cast<size_t>(r.out_h * r.in_w));
  const auto& kt = K<T>();
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * r.in_h * r.in_w;
    T* dst = out.ptr() + p * r.out_h * r.out_w;
    std::fill(tmp.begin(), tmp.end(), T(0));
    for (int64_t i = 0; i < r.out_h; ++i)
      for (const auto& [row, wt] : r.rows[i])
        kt.axpy(static_cast<T>(wt), src + row * r.in_w, tmp.data() + i * r.in_w, r.in_w);
    for (int64_t i = 0; i < r.out_h; ++i) {
      const T* t = tmp.data() + i * r.in_w;
      for (int64_t j = 0; j < r.out_w; ++j) {
        T acc = 0;
        for (const auto& [col, wt] : r.cols[j]) acc += static_cast<T>(wt) * t[col];
        dst[i * r.out_w + j] = acc;
      }
    }
  }
  return out;
}

struct ResamplePair {
  std::shared_ptr<const Resampler> forward;
  std::shared_ptr<const Resampler> backward;
};

ResamplePair cached_map(int kind, int64_t ih, int64_t iw, int64_t oh, int64_t ow) {
  static std::mutex mutex;
  static std::map<std::tuple<int, int64_t, int64_t, int64_t, int64_t>, ResamplePair> cache;
  std::lock_guard<std::mutex> lock(mutex);
  const auto key = std::make_tuple(kind, ih, iw, oh, ow);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  Resampler r;
  switch (kind) {
    case 0: r = Resampler::nearest_upsample(ih, iw, oh / ih); break;
    case 1: r = Resampler::average_pool(ih, iw, ih / oh); break;
    case 2: r = Resampler::bilinear(ih, iw, oh, ow); break;
    default: r = Resampler::global_average(ih, iw); break;
  }
  auto fwd = std::make_shared<const Resampler>(r);
  auto bwd = std::make_shared<const Resampler>(r.transposed());
  ResamplePair pair{fwd, bwd};
  cache.emplace(key, pair);
  return pair;
}

template <typename T>
Var<T> resample_pair(const Var<T>& x, std::shared_ptr<const Resampler> fwd,
                     std::shared_ptr<const Resampler> bwd) {
  Tensor<T> out = resample_forward(x.value(), *fwd);
  return make_node<T>(
      std::move(out), {x},
      [fwd, bwd](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{resample_pair(g, bwd, fwd)};
      },
      "resample");
}

// --- channel slicing --------------------------------------------------------

template <typename T>
Tensor<T> copy_channels(const Tensor<T>& src, int64_t src_start, Tensor<T>& dst, int64_t dst_start,
                        int64_t count) {
  const int64_t b = src.dim(0), hw = src.dim(2) * src.dim(3);
  const int64_t cs = src.dim(1), cd = dst.dim(1);
  for (int64_t bi = 0; bi < b; ++bi)
    std::copy_n(src.ptr() + (bi * cs + src_start) * hw, count * hw, dst.ptr() + (bi * cd + dst_start) * hw);
  return dst;
}

template <typename T>
Tensor<T> jitter_forward(const Tensor<T>& x, const std::vector<SpatialJitter>& params, bool adjoint) {
  if (x.rank() != 4 || static_cast<int64_t>(params.size()) != x.dim(0))
    throw ShapeError("spatial_jitter needs one parameter set per sample");
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(x.shape());
  for (int64_t bi = 0; bi < b; ++bi) {
    const SpatialJitter& p = params[bi];
    for (int64_t ci = 0; ci < c; ++ci) {
      const T* src = x.ptr() + (bi * c + ci) * h * w;
      T* dst = out.ptr() + (bi * c + ci) * h * w;
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          int64_t si, sj;
          if (!adjoint) {
            si = i - p.dy;
            const int64_t tj = j - p.dx;
            if (si < 0 || si >= h || tj < 0 || tj >= w) {
              dst[i * w + j] = 0;
              continue;
            }
            sj = p.flip ? w - 1 - tj : tj;
          } else {
            si = i + p.dy;
            sj = (p.flip ? w - 1 - j : j) + p.dx;
            if (si < 0 || si >= h || sj < 0 || sj >= w) {
              dst[i * w + j] = 0;
              continue;
            }
          }
          dst[i * w + j] = src[si * w + sj];
        }
    }
  }
  return out;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " do not broadcast");
    out[i] = da == 1 ? db : da;
  }
  return out;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return make_node<T>(
      binary_forward(a.value(), b.value(), BinOp::add), {a, b},
      [sa = a.shape(), sb = b.shape()](const Var<T>& g, const std::vector<bool>& need) {
        return std::vector<Var<T>>{need[0] ? sum_to(g, sa) : Var<T>(), need[1] ? sum_to(g, sb) : Var<T>()};
      },
      "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return make_node<T>(
      binary_forward(a.value(), b.value(), BinOp::sub), {a, b},
      [sa = a.shape(), sb = b.shape()](const Var<T>& g, const std::vector<bool>& need) {
        return std::vector<Var<T>>{need[0] ? sum_to(g, sa) : Var<T>(),
                                   need[1] ? sum_to(neg(g), sb) : Var<T>()};
      },
      "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return make_node<T>(
      binary_forward(a.value(), b.value(), BinOp::mul), {a, b},
      [a, b](const Var<T>& g, const std::vector<bool>& need) {
        return std::vector<Var<T>>{need[0] ? sum_to(mul(g, b), a.shape()) : Var<T>(),
                                   need[1] ? sum_to(mul(g, a), b.shape()) : Var<T>()};
      },
      "mul");
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, -1.0);
}

template <typename T>
Var<T> scale(const Var<T>& a, double factor) {
  Tensor<T> out(a.shape());
  K<T>().scale(a.value().ptr(), static_cast<T>(factor), out.ptr(), a.numel());
  return make_node<T>(
      std::move(out), {a},
      [factor](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{scale(g, factor)};
      },
      "scale");
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double value) {
  const T v = static_cast<T>(value);
  return make_node<T>(
      map_unary(a.value(), [v](T x) { return x + v; }), {a},
      [](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{g}; }, "add_scalar");
}

template <typename T>
Var<T> pow_scalar(const Var<T>& a, double exponent) {
  if (exponent == 1.0) return a;
  return make_node<T>(
      map_unary(a.value(), [exponent](T x) { return power(x, exponent); }), {a},
      [a, exponent](const Var<T>& g, const std::vector<bool>&) {
        Var<T> d = exponent == 2.0 ? scale(a, 2.0) : scale(pow_scalar(a, exponent - 1.0), exponent);
        return std::vector<Var<T>>{mul(g, d)};
      },
      "pow");
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return make_node<T>(
      map_unary(a.value(), [](T x) { return stable_sigmoid(x); }), {a},
      [a](const Var<T>& g, const std::vector<bool>&) {
        Var<T> s = sigmoid(a);
        return std::vector<Var<T>>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
      },
      "sigmoid");
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  return make_node<T>(
      map_unary(a.value(), [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); }),
      {a},
      [a](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{mul(g, sigmoid(a))}; },
      "softplus");
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, double slope, double gain) {
  Tensor<T> out(a.shape());
  K<T>().leaky_relu(a.value().ptr(), static_cast<T>(slope), static_cast<T>(gain), out.ptr(), a.numel());
  if (!grad_enabled() || !a.requires_grad()) return Var<T>::constant(std::move(out));
  const T pos = static_cast<T>(gain), negv = static_cast<T>(gain * slope);
  Var<T> mask = Var<T>::constant(map_unary(a.value(), [pos, negv](T x) { return x >= T(0) ? pos : negv; }));
  return make_node<T>(
      std::move(out), {a},
      [mask](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{mul(g, mask)}; },
      "leaky_relu");
}

template <typename T>
Var<T> clamp(const Var<T>& a, double lo, double hi) {
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  Tensor<T> out = map_unary(a.value(), [l, h](T x) { return std::min(std::max(x, l), h); });
  if (!grad_enabled() || !a.requires_grad()) return Var<T>::constant(std::move(out));
  Var<T> mask = Var<T>::constant(map_unary(a.value(), [l, h](T x) { return (x >= l && x <= h) ? T(1) : T(0); }));
  return make_node<T>(
      std::move(out), {a},
      [mask](const Var<T>& g, const std::vector<bool>&) { return std::vector<Var<T>>{mul(g, mask)}; },
      "clamp");
}

template <typename T>
Var<T> sum_to(const Var<T>& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return make_node<T>(
      sum_to_forward(a.value(), shape), {a},
      [sa = a.shape()](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{broadcast_to(g, sa)};
      },
      "sum_to");
}

template <typename T>
Var<T> broadcast_to(const Var<T>& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return make_node<T>(
      broadcast_forward(a.value(), shape), {a},
      [sa = a.shape()](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{sum_to(g, sa)};
      },
      "broadcast_to");
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::scalar(K<T>().sum(a.value().ptr(), a.numel()));
  return make_node<T>(
      std::move(out), {a},
      [sa = a.shape()](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{broadcast_to(reshape(g, Shape{}), sa)};
      },
      "sum");
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return make_node<T>(
      a.value().reshaped(shape), {a},
      [sa = a.shape()](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{reshape(g, sa)};
      },
      "reshape");
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  if (!a.requires_grad()) return a;
  return Var<T>::constant(a.value());
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
  if (a.value().rank() != 2 || b.value().rank() != 2) throw ShapeError("matmul expects 2-D operands");
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t ka = trans_a ? a.dim(0) : a.dim(1);
  const int64_t kb = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb)
    throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor<T> out({m, n});
  K<T>().gemm(trans_a, trans_b, m, n, ka, a.value().ptr(), a.dim(1), b.value().ptr(), b.dim(1),
              out.ptr(), n, false);
  return make_node<T>(
      std::move(out), {a, b},
      [a, b, trans_a, trans_b](const Var<T>& g, const std::vector<bool>& need) {
        Var<T> ga, gb;
        if (!trans_a && !trans_b) {
          if (need[0]) ga = matmul(g, b, false, true);
          if (need[1]) gb = matmul(a, g, true, false);
        } else if (!trans_a && trans_b) {
          if (need[0]) ga = matmul(g, b, false, false);
          if (need[1]) gb = matmul(g, a, true, false);
        } else if (trans_a && !trans_b) {
          if (need[0]) ga = matmul(b, g, false, true);
          if (need[1]) gb = matmul(a, g, false, false);
        } else {
          if (need[0]) ga = matmul(b, g, true, true);
          if (need[1]) gb = matmul(g, a, true, true);
        }
        return std::vector<Var<T>>{ga, gb};
      },
      "matmul");
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w) {
  return make_node<T>(
      conv_forward(x.value(), w.value()), {x, w},
      [x, w](const Var<T>& g, const std::vector<bool>& need) {
        return std::vector<Var<T>>{need[0] ? conv2d_input_grad(g, w) : Var<T>(),
                                   need[1] ? conv2d_weight_grad(x, g, w.dim(2)) : Var<T>()};
      },
      "conv2d");
}

template <typename T>
Var<T> conv2d_input_grad(const Var<T>& g, const Var<T>& w) {
  return make_node<T>(
      conv_input_grad_forward(g.value(), w.value()), {g, w},
      [g, w](const Var<T>& h, const std::vector<bool>& need) {
        return std::vector<Var<T>>{need[0] ? conv2d(h, w) : Var<T>(),
                                   need[1] ? conv2d_weight_grad(h, g, w.dim(2)) : Var<T>()};
      },
      "conv2d_input_grad");
}

template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& g, int64_t k) {
  return make_node<T>(
      conv_weight_grad_forward(x.value(), g.value(), k), {x, g},
      [x, g](const Var<T>& h, const std::vector<bool>& need) {
        return std::vector<Var<T>>{need[0] ? conv2d_input_grad(g, h) : Var<T>(),
                                   need[1] ? conv2d(x, h) : Var<T>()};
      },
      "conv2d_weight_grad");
}

template <typename T>
Var<T> resample(const Var<T>& x, std::shared_ptr<const Resampler> map) {
  auto back = std::make_shared<const Resampler>(map->transposed());
  return resample_pair(x, std::move(map), std::move(back));
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  auto pair = cached_map(0, x.dim(2), x.dim(3), 2 * x.dim(2), 2 * x.dim(3));
  return resample_pair(x, pair.forward, pair.backward);
}

template <typename T>
Var<T> avg_pool2x(const Var<T>& x) {
  auto pair = cached_map(1, x.dim(2), x.dim(3), x.dim(2) / 2, x.dim(3) / 2);
  return resample_pair(x, pair.forward, pair.backward);
}

template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int64_t out_h, int64_t out_w) {
  if (x.dim(2) == out_h && x.dim(3) == out_w) return x;
  auto pair = cached_map(2, x.dim(2), x.dim(3), out_h, out_w);
  return resample_pair(x, pair.forward, pair.backward);
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  auto pair = cached_map(3, x.dim(2), x.dim(3), 1, 1);
  return reshape(resample_pair(x, pair.forward, pair.backward), Shape{x.dim(0), x.dim(1)});
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  if (a.value().rank() != 4 || b.value().rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
      a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels shapes " + to_string(a.shape()) + " / " + to_string(b.shape()));
  const int64_t ca = a.dim(1), cb = b.dim(1);
  Tensor<T> out({a.dim(0), ca + cb, a.dim(2), a.dim(3)});
  copy_channels(a.value(), 0, out, 0, ca);
  copy_channels(b.value(), 0, out, ca, cb);
  return make_node<T>(
      std::move(out), {a, b},
      [ca, cb](const Var<T>& g, const std::vector<bool>& need) {
        return std::vector<Var<T>>{need[0] ? slice_channels(g, 0, ca) : Var<T>(),
                                   need[1] ? slice_channels(g, ca, cb) : Var<T>()};
      },
      "concat_channels");
}

template <typename T>
Var<T> slice_channels(const Var<T>& a, int64_t start, int64_t length) {
  if (a.value().rank() != 4 || start < 0 || start + length > a.dim(1))
    throw ShapeError("slice_channels out of range");
  const int64_t total = a.dim(1);
  Tensor<T> out({a.dim(0), length, a.dim(2), a.dim(3)});
  copy_channels(a.value(), start, out, 0, length);
  return make_node<T>(
      std::move(out), {a},
      [start, total](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{pad_channels(g, start, total)};
      },
      "slice_channels");
}

template <typename T>
Var<T> pad_channels(const Var<T>& a, int64_t start, int64_t total) {
  const int64_t length = a.dim(1);
  if (start < 0 || start + length > total) throw ShapeError("pad_channels out of range");
  Tensor<T> out({a.dim(0), total, a.dim(2), a.dim(3)});
  copy_channels(a.value(), 0, out, start, length);
  return make_node<T>(
      std::move(out), {a},
      [start, length](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{slice_channels(g, start, length)};
      },
      "pad_channels");
}

template <typename T>
Var<T> spatial_jitter(const Var<T>& x, std::shared_ptr<const std::vector<SpatialJitter>> params,
                      bool adjoint) {
  return make_node<T>(
      jitter_forward(x.value(), *params, adjoint), {x},
      [params, adjoint](const Var<T>& g, const std::vector<bool>&) {
        return std::vector<Var<T>>{spatial_jitter(g, params, !adjoint)};
      },
      "spatial_jitter");
}

#define HSRGAN_INSTANTIATE_OPS(T)                                                           \
  template Var<T> add(const Var<T>&, const Var<T>&);                                        \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                        \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                        \
  template Var<T> neg(const Var<T>&);                                                       \
  template Var<T> scale(const Var<T>&, double);                                             \
  template Var<T> add_scalar(const Var<T>&, double);                                        \
  template Var<T> pow_scalar(const Var<T>&, double);                                        \
  template Var<T> sigmoid(const Var<T>&);                                                   \
  template Var<T> softplus(const Var<T>&);                                                  \
  template Var<T> leaky_relu(const Var<T>&, double, double);                                \
  template Var<T> clamp(const Var<T>&, double, double);                                     \
  template Var<T> sum_to(const Var<T>&, const Shape&);                                      \
  template Var<T> broadcast_to(const Var<T>&, const Shape&);                                \
  template Var<T> sum(const Var<T>&);                                                       \
  template Var<T> mean(const Var<T>&);                                                      \
  template Var<T> reshape(const Var<T>&, const Shape&);                                     \
  template Var<T> detach(const Var<T>&);                                                    \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                         \
  template Var<T> conv2d(const Var<T>&, const Var<T>&);                                     \
  template Var<T> conv2d_input_grad(const Var<T>&, const Var<T>&);                          \
  template Var<T> conv2d_weight_grad(const Var<T>&, const Var<T>&, int64_t);                \
  template Var<T> resample(const Var<T>&, std::shared_ptr<const Resampler>);                \
  template Var<T> upsample2x(const Var<T>&);                                                \
  template Var<T> avg_pool2x(const Var<T>&);                                                \
  template Var<T> bilinear_resize(const Var<T>&, int64_t, int64_t);                         \
  template Var<T> global_avg_pool(const Var<T>&);                                           \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                            \
  template Var<T> slice_channels(const Var<T>&, int64_t, int64_t);                          \
  template Var<T> pad_channels(const Var<T>&, int64_t, int64_t);                            \
  template Var<T> spatial_jitter(const Var<T>&, std::shared_ptr<const std::vector<SpatialJitter>>, bool);

HSRGAN_INSTANTIATE_OPS(float)
HSRGAN_INSTANTIATE_OPS(double)

}  // namespace hsrgan::ag
