#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "cytonet/autograd.hpp"
#include "cytonet/tensor.hpp"

#if defined(_OPENMP)
#define CYTONET_PRAGMA(x) _Pragma(#x)
#else
#define CYTONET_PRAGMA(x)
#endif

namespace cytonet {

enum class Mode { train, eval };

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn_acc(int m, int k, int n, const T* A, const T* B, T* C) {
  CYTONET_PRAGMA(omp parallel for schedule(static) if (m > 2 && static_cast<long>(m) * k * n > 32768))
  for (int i = 0; i < m; ++i) {
    T* crow = C + static_cast<std::size_t>(i) * n;
    const T* arow = A + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const T a = arow[kk];
      const T* brow = B + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt_acc(int m, int k, int n, const T* A, const T* B, T* C) {
  CYTONET_PRAGMA(omp parallel for schedule(static) if (m > 2 && static_cast<long>(m) * k * n > 32768))
  for (int i = 0; i < m; ++i) {
    const T* arow = A + static_cast<std::size_t>(i) * k;
    T* crow = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = B + static_cast<std::size_t>(j) * k;
      T acc = T(0);
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn_acc(int m, int k, int n, const T* A, const T* B, T* C) {
  CYTONET_PRAGMA(omp parallel for schedule(static) if (m > 2 && static_cast<long>(m) * k * n > 32768))
  for (int i = 0; i < m; ++i) {
    T* crow = C + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const T a = A[static_cast<std::size_t>(kk) * m + i];
      const T* brow = B + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

// one image (C,H,W) -> col (C*kh*kw, Ho*Wo)
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo,
            T* col) {
  const int plane = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    const T* src = x + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = col + (static_cast<std::size_t>(c * kh + ki) * kw + kj) * plane;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          T* drow = dst + static_cast<std::size_t>(oh) * Wo;
          if (ih < 0 || ih >= H) {
            for (int ow = 0; ow < Wo; ++ow) drow[ow] = T(0);
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + kj;
            drow[ow] = (iw >= 0 && iw < W) ? srow[iw] : T(0);
          }
        }
      }
    }
  }
}

// col (C*kh*kw, Ho*Wo) scatter-added back into one image (C,H,W)
template <typename T>
void col2im_acc(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
                int Wo, T* x) {
  const int plane = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    T* dst = x + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = col + (static_cast<std::size_t>(c * kh + ki) * kw + kj) * plane;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          const T* srow = src + static_cast<std::size_t>(oh) * Wo;
          T* drow = dst + static_cast<std::size_t>(ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < W) drow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Source indices and interpolation weight along one axis, align-corners-false.
struct LerpAxis {
  std::vector<int> lo, hi;
  std::vector<double> w;  // weight of hi
};

inline LerpAxis lerp_axis(int in, int out) {
  LerpAxis a;
  a.lo.resize(static_cast<std::size_t>(out));
  a.hi.resize(static_cast<std::size_t>(out));
  a.w.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double s = (o + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    if (s > in - 1) s = in - 1;
    const int lo = static_cast<int>(std::floor(s));
    const int hi = std::min(lo + 1, in - 1);
    a.lo[static_cast<std::size_t>(o)] = lo;
    a.hi[static_cast<std::size_t>(o)] = hi;
    a.w[static_cast<std::size_t>(o)] = s - lo;
  }
  return a;
}

}  // namespace detail

namespace ops {

template <typename T>
using V = typename Tape<T>::Var;

template <typename T>
using BackFn = std::function<void(Tape<T>&, V<T>)>;

// ---- elementwise ---------------------------------------------------------

template <typename T>
V<T> add(Tape<T>& t, V<T> a, V<T> b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  detail::require(av.same_shape(bv), "add: shape mismatch " + shape_str(av.shape()) + " vs " +
                                         shape_str(bv.shape()));
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  BackFn<T> fn;
  if (t.will_record({a, b})) {
    fn = [a, b](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      if (tt.requires_grad(a)) {
        auto& ga = tt.grad_acc(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (tt.requires_grad(b)) {
        auto& gb = tt.grad_acc(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  }
  return t.record("add", std::move(out), {a, b}, std::move(fn));
}

template <typename T>
V<T> mul(Tape<T>& t, V<T> a, V<T> b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  detail::require(av.same_shape(bv), "mul: shape mismatch " + shape_str(av.shape()) + " vs " +
                                         shape_str(bv.shape()));
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  BackFn<T> fn;
  if (t.will_record({a, b})) {
    fn = [a, b](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      const auto& av2 = tt.value(a);
      const auto& bv2 = tt.value(b);
      if (tt.requires_grad(a)) {
        auto& ga = tt.grad_acc(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (tt.requires_grad(b)) {
        auto& gb = tt.grad_acc(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
      }
    };
  }
  return t.record("mul", std::move(out), {a, b}, std::move(fn));
}

template <typename T>
V<T> scale(Tape<T>& t, V<T> a, T s) {
  const auto& av = t.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  BackFn<T> fn;
  if (t.will_record({a})) {
    fn = [a, s](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      auto& ga = tt.grad_acc(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    };
  }
  return t.record("scale", std::move(out), {a}, std::move(fn));
}

template <typename T>
V<T> add_scalar(Tape<T>& t, V<T> a, T s) {
  const auto& av = t.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  BackFn<T> fn;
  if (t.will_record({a})) {
    fn = [a](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      auto& ga = tt.grad_acc(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  }
  return t.record("add_scalar", std::move(out), {a}, std::move(fn));
}

/// x: (B,C,H,W) scaled per channel by s: (B,C,1,1).
template <typename T>
V<T> channel_scale(Tape<T>& t, V<T> x, V<T> s) {
  const auto& xv = t.value(x);
  const auto& sv = t.value(s);
  detail::require(xv.ndim() == 4 && sv.ndim() == 4, "channel_scale expects 4-D tensors");
  detail::require(sv.dim(0) == xv.dim(0) && sv.dim(1) == xv.dim(1) && sv.dim(2) == 1 &&
                      sv.dim(3) == 1,
                  "channel_scale: scale shape " + shape_str(sv.shape()) +
                      " incompatible with input " + shape_str(xv.shape()));
  const int B = xv.dim(0), C = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor<T> out(xv.shape());
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const T sc = sv[static_cast<std::size_t>(b) * C + c];
      const T* xp = xv.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      T* op = out.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) op[i] = xp[i] * sc;
    }
  }
  BackFn<T> fn;
  if (t.will_record({x, s})) {
    fn = [x, s, B, C, plane](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      const auto& xv2 = tt.value(x);
      const auto& sv2 = tt.value(s);
      if (tt.requires_grad(x)) {
        auto& gx = tt.grad_acc(x);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const T sc = sv2[static_cast<std::size_t>(b) * C + c];
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) gx[base + i] += g[base + i] * sc;
          }
      }
      if (tt.requires_grad(s)) {
        auto& gs = tt.grad_acc(s);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * plane;
            double acc = 0;
            for (std::size_t i = 0; i < plane; ++i)
              acc += static_cast<double>(g[base + i]) * static_cast<double>(xv2[base + i]);
            gs[static_cast<std::size_t>(b) * C + c] += static_cast<T>(acc);
          }
      }
    };
  }
  return t.record("channel_scale", std::move(out), {x, s}, std::move(fn));
}

// ---- activations ---------------------------------------------------------

/// Gradient at exactly 0 is 0 (strict x > 0 passes gradient).
template <typename T>
V<T> relu(Tape<T>& t, V<T> x) {
  const auto& xv = t.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (t.tracking_kink_margin()) {
    double m = std::numeric_limits<double>::infinity();
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      m = std::min(m, std::abs(static_cast<double>(xv[i])));
      h = (h ^ static_cast<std::uint64_t>(xv[i] > T(0))) * 1099511628211ULL;
    }
    t.note_kink_margin(m);
    t.note_activation_pattern(h);
  }
  BackFn<T> fn;
  if (t.will_record({x})) {
    fn = [x](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      const auto& xv2 = tt.value(x);
      auto& gx = tt.grad_acc(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv2[i] > T(0)) gx[i] += g[i];
      }
    };
  }
  return t.record("relu", std::move(out), {x}, std::move(fn));
}

template <typename T>
V<T> sigmoid(Tape<T>& t, V<T> x) {
  const auto& xv = t.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = static_cast<double>(xv[i]);
    const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out[i] = static_cast<T>(s);
  }
  BackFn<T> fn;
  if (t.will_record({x})) {
    fn = [x](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      const auto& s = tt.value(o);
      auto& gx = tt.grad_acc(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i] * (T(1) - s[i]);
    };
  }
  return t.record("sigmoid", std::move(out), {x}, std::move(fn));
}

/// Numerically stable softmax along `axis` (max subtraction per lane).
template <typename T>
V<T> softmax(Tape<T>& t, V<T> x, int axis) {
  const auto& xv = t.value(x);
  detail::require(axis >= 0 && axis < xv.ndim(), "softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  const int n = xv.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(xv.dim(i));
  for (int i = axis + 1; i < xv.ndim(); ++i) inner *= static_cast<std::size_t>(xv.dim(i));
  Tensor<T> out(xv.shape());
  for (std::size_t ou = 0; ou < outer; ++ou) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = ou * static_cast<std::size_t>(n) * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i)
        mx = std::max(mx, static_cast<double>(xv[base + static_cast<std::size_t>(i) * inner]));
      double sum = 0;
      for (int i = 0; i < n; ++i) {
        const double e = std::exp(static_cast<double>(xv[base + static_cast<std::size_t>(i) * inner]) - mx);
        out[base + static_cast<std::size_t>(i) * inner] = static_cast<T>(e);
        sum += e;
      }
      for (int i = 0; i < n; ++i) {
        auto& v = out[base + static_cast<std::size_t>(i) * inner];
        v = static_cast<T>(static_cast<double>(v) / sum);
      }
    }
  }
  BackFn<T> fn;
  if (t.will_record({x})) {
    fn = [x, outer, inner, n](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      const auto& s = tt.value(o);
      auto& gx = tt.grad_acc(x);
      for (std::size_t ou = 0; ou < outer; ++ou) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = ou * static_cast<std::size_t>(n) * inner + in;
          double dot = 0;
          for (int i = 0; i < n; ++i) {
            const std::size_t k = base + static_cast<std::size_t>(i) * inner;
            dot += static_cast<double>(g[k]) * static_cast<double>(s[k]);
          }
          for (int i = 0; i < n; ++i) {
            const std::size_t k = base + static_cast<std::size_t>(i) * inner;
            gx[k] += static_cast<T>(static_cast<double>(s[k]) *
                                    (static_cast<double>(g[k]) - dot));
          }
        }
      }
    };
  }
  return t.record("softmax", std::move(out), {x}, std::move(fn));
}

// ---- linear algebra ------------------------------------------------------

/// a: (m,k), b: (k,n) -> (m,n)
template <typename T>
V<T> matmul(Tape<T>& t, V<T> a, V<T> b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  detail::require(av.ndim() == 2 && bv.ndim() == 2, "matmul expects 2-D tensors");
  detail::require(av.dim(1) == bv.dim(0), "matmul: inner extents differ: " +
                                              shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  detail::gemm_nn_acc(m, k, n, av.data(), bv.data(), out.data());
  BackFn<T> fn;
  if (t.will_record({a, b})) {
    fn = [a, b, m, k, n](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      if (tt.requires_grad(a)) {
        // dA = G * B^T
        detail::gemm_nt_acc(m, n, k, g.data(), tt.value(b).data(), tt.grad_acc(a).data());
      }
      if (tt.requires_grad(b)) {
        // dB = A^T * G
        detail::gemm_tn_acc(k, m, n, tt.value(a).data(), g.data(), tt.grad_acc(b).data());
      }
    };
  }
  return t.record("matmul", std::move(out), {a, b}, std::move(fn));
}

/// Fully connected layer: x (B,F), w (K,F), optional bias (K) -> (B,K).
template <typename T>
V<T> dense(Tape<T>& t, V<T> x, V<T> w, std::optional<V<T>> bias) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  detail::require(xv.ndim() == 2 && wv.ndim() == 2, "dense expects 2-D input and weights");
  detail::require(xv.dim(1) == wv.dim(1),
                  "dense: flattened feature extent " + std::to_string(xv.dim(1)) +
                      " does not match weight columns " + std::to_string(wv.dim(1)));
  const int B = xv.dim(0), F = xv.dim(1), K = wv.dim(0);
  Tensor<T> out({B, K});
  detail::gemm_nt_acc(B, F, K, xv.data(), wv.data(), out.data());
  if (bias) {
    const auto& bv = t.value(*bias);
    detail::require(bv.ndim() == 1 && bv.dim(0) == K, "dense: bias extent mismatch");
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < K; ++j) out.at2(b, j) += bv[static_cast<std::size_t>(j)];
  }
  BackFn<T> fn;
  const bool needs = bias ? t.will_record({x, w, *bias}) : t.will_record({x, w});
  if (needs) {
    fn = [x, w, bias, B, F, K](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);  // (B,K)
      if (tt.requires_grad(x)) {
        // dX = G * W
        detail::gemm_nn_acc(B, K, F, g.data(), tt.value(w).data(), tt.grad_acc(x).data());
      }
      if (tt.requires_grad(w)) {
        // dW = G^T * X
        detail::gemm_tn_acc(K, B, F, g.data(), tt.value(x).data(), tt.grad_acc(w).data());
      }
      if (bias && tt.requires_grad(*bias)) {
        auto& gb = tt.grad_acc(*bias);
        for (int b = 0; b < B; ++b)
          for (int j = 0; j < K; ++j) gb[static_cast<std::size_t>(j)] += g.at2(b, j);
      }
    };
  }
  if (bias) return t.record("dense", std::move(out), {x, w, *bias}, std::move(fn));
  return t.record("dense", std::move(out), {x, w}, std::move(fn));
}

/// Copying reshape; element count must be preserved.
template <typename T>
V<T> reshape(Tape<T>& t, V<T> x, Shape shape) {
  const auto& xv = t.value(x);
  detail::require(shape_numel(shape) == xv.size(),
                  "reshape: element count changes from " + shape_str(xv.shape()) + " to " +
                      shape_str(shape));
  Tensor<T> out(std::move(shape), xv.vec());
  BackFn<T> fn;
  if (t.will_record({x})) {
    fn = [x](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      auto& gx = tt.grad_acc(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    };
  }
  return t.record("reshape", std::move(out), {x}, std::move(fn));
}

/// (B, ...) -> (B, prod(...)).
template <typename T>
V<T> flatten2(Tape<T>& t, V<T> x) {
  const auto& xv = t.value(x);
  detail::require(xv.ndim() >= 2, "flatten2 expects at least 2 dims");
  const int B = xv.dim(0);
  const int rest = static_cast<int>(xv.size() / static_cast<std::size_t>(B));
  return reshape(t, x, Shape{B, rest});
}

// ---- convolution ---------------------------------------------------------

/// Cross-correlation (no kernel flip). x: (B,Ci,H,W), w: (Co,Ci,kh,kw).
/// Output spatial extent: floor((H + 2*pad - kh)/stride) + 1.
template <typename T>
V<T> conv2d(Tape<T>& t, V<T> x, V<T> w, std::optional<V<T>> bias, int stride, int padding) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  detail::require(xv.ndim() == 4, "conv2d: input must be (B,C,H,W), got " + shape_str(xv.shape()));
  detail::require(wv.ndim() == 4, "conv2d: weights must be (Co,Ci,kh,kw)");
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  detail::require(padding >= 0, "conv2d: padding must be >= 0");
  const int B = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  detail::require(wv.dim(1) == Ci, "conv2d: weight expects " + std::to_string(wv.dim(1)) +
                                       " input channels, input has " + std::to_string(Ci));
  detail::require(kh <= H + 2 * padding && kw <= W + 2 * padding,
                  "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                      " larger than padded input " + std::to_string(H + 2 * padding) + "x" +
                      std::to_string(W + 2 * padding));
  const int Ho = (H + 2 * padding - kh) / stride + 1;
  const int Wo = (W + 2 * padding - kw) / stride + 1;
  const int K = Ci * kh * kw;
  const int N = Ho * Wo;

  Tensor<T> out({B, Co, Ho, Wo});
  const T* bp = nullptr;
  if (bias) {
    const auto& bv = t.value(*bias);
    detail::require(bv.ndim() == 1 && bv.dim(0) == Co, "conv2d: bias extent mismatch");
    bp = bv.data();
  }
  CYTONET_PRAGMA(omp parallel for schedule(static) if (B > 1 && static_cast<long>(Co) * K * N > 8192))
  for (int b = 0; b < B; ++b) {
    std::vector<T> col(static_cast<std::size_t>(K) * N);
    detail::im2col(xv.data() + static_cast<std::size_t>(b) * Ci * H * W, Ci, H, W, kh, kw, stride,
                   padding, Ho, Wo, col.data());
    T* ob = out.data() + static_cast<std::size_t>(b) * Co * N;
    if (bp) {
      for (int co = 0; co < Co; ++co)
        for (int j = 0; j < N; ++j) ob[static_cast<std::size_t>(co) * N + j] = bp[co];
    }
    // serial inner gemm: the batch loop is the parallel axis
    for (int i = 0; i < Co; ++i) {
      T* crow = ob + static_cast<std::size_t>(i) * N;
      const T* arow = wv.data() + static_cast<std::size_t>(i) * K;
      for (int kk = 0; kk < K; ++kk) {
        const T a = arow[kk];
        const T* brow = col.data() + static_cast<std::size_t>(kk) * N;
        for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
      }
    }
  }

  BackFn<T> fn;
  const bool needs = bias ? t.will_record({x, w, *bias}) : t.will_record({x, w});
  if (needs) {
    fn = [x, w, bias, B, Ci, H, W, Co, kh, kw, stride, padding, Ho, Wo, K, N](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);  // (B,Co,Ho,Wo)
      const auto& wv2 = tt.value(w);
      const auto& xv2 = tt.value(x);
      if (tt.requires_grad(x)) {
        auto& gx = tt.grad_acc(x);
        CYTONET_PRAGMA(omp parallel for schedule(static) if (B > 1 && static_cast<long>(Co) * K * N > 8192))
        for (int b = 0; b < B; ++b) {
          std::vector<T> dcol(static_cast<std::size_t>(K) * N, T(0));
          // dcol = W^T * G_b
          detail::gemm_tn_acc(K, Co, N, wv2.data(),
                              g.data() + static_cast<std::size_t>(b) * Co * N, dcol.data());
          detail::col2im_acc(dcol.data(), Ci, H, W, kh, kw, stride, padding, Ho, Wo,
                             gx.data() + static_cast<std::size_t>(b) * Ci * H * W);
        }
      }
      if (tt.requires_grad(w)) {
        auto& gw = tt.grad_acc(w);
        std::vector<T> col(static_cast<std::size_t>(K) * N);
        for (int b = 0; b < B; ++b) {  // batch-sequential accumulation: deterministic
          detail::im2col(xv2.data() + static_cast<std::size_t>(b) * Ci * H * W, Ci, H, W, kh, kw,
                         stride, padding, Ho, Wo, col.data());
          // dW += G_b * col^T
          detail::gemm_nt_acc(Co, N, K, g.data() + static_cast<std::size_t>(b) * Co * N,
                              col.data(), gw.data());
        }
      }
      if (bias && tt.requires_grad(*bias)) {
        auto& gb = tt.grad_acc(*bias);
        for (int b = 0; b < B; ++b)
          for (int co = 0; co < Co; ++co) {
            double acc = 0;
            const T* gp = g.data() + (static_cast<std::size_t>(b) * Co + co) * N;
            for (int j = 0; j < N; ++j) acc += static_cast<double>(gp[j]);
            gb[static_cast<std::size_t>(co)] += static_cast<T>(acc);
          }
      }
    };
  }
  if (bias) return t.record("conv2d", std::move(out), {x, w, *bias}, std::move(fn));
  return t.record("conv2d", std::move(out), {x, w}, std::move(fn));
}

// ---- pooling -------------------------------------------------------------

template <typename T>
V<T> maxpool2d(Tape<T>& t, V<T> x, int window, int stride) {
  const auto& xv = t.value(x);
  detail::require(xv.ndim() == 4, "maxpool2d expects (B,C,H,W)");
  detail::require(window >= 1 && stride >= 1, "maxpool2d: window and stride must be >= 1");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  detail::require(window <= H && window <= W,
                  "maxpool2d: window " + std::to_string(window) + " exceeds input " +
                      std::to_string(H) + "x" + std::to_string(W));
  const int Ho = (H - window) / stride + 1;
  const int Wo = (W - window) / stride + 1;
  Tensor<T> out({B, C, Ho, Wo});
  const bool rec = t.will_record({x});
  std::vector<std::int64_t> argmax;
  if (rec) argmax.resize(out.size());
  const std::size_t planes = static_cast<std::size_t>(B) * C;
  CYTONET_PRAGMA(omp parallel for schedule(static) if (planes > 1 && static_cast<long>(Ho) * Wo * window * window > 4096))
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * static_cast<std::size_t>(H) * W;
    T* dst = out.data() + p * static_cast<std::size_t>(Ho) * Wo;
    for (int oh = 0; oh < Ho; ++oh) {
      for (int ow = 0; ow < Wo; ++ow) {
        T best = src[static_cast<std::size_t>(oh * stride) * W + ow * stride];
        std::int64_t besti = static_cast<std::int64_t>(p) * H * W + oh * stride * W + ow * stride;
        for (int i = 0; i < window; ++i)
          for (int j = 0; j < window; ++j) {
            const std::size_t k = static_cast<std::size_t>(oh * stride + i) * W + ow * stride + j;
            if (src[k] > best) {
              best = src[k];
              besti = static_cast<std::int64_t>(p) * H * W + static_cast<std::int64_t>(k);
            }
          }
        dst[static_cast<std::size_t>(oh) * Wo + ow] = best;
        if (rec) argmax[(p * Ho + oh) * Wo + ow] = besti;
      }
    }
  }
  if (t.tracking_kink_margin()) {
    // distance between the two largest values of each window, plus the argmax
    // choice pattern
    double margin = std::numeric_limits<double>::infinity();
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = xv.data() + p * static_cast<std::size_t>(H) * W;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double top1 = -std::numeric_limits<double>::infinity(), top2 = top1;
          std::uint64_t arg = 0;
          for (int i = 0; i < window; ++i)
            for (int j = 0; j < window; ++j) {
              const std::size_t k =
                  static_cast<std::size_t>(oh * stride + i) * W + ow * stride + j;
              const double v = static_cast<double>(src[k]);
              if (v > top1) {
                top2 = top1;
                top1 = v;
                arg = static_cast<std::uint64_t>(k);
              } else if (v > top2) {
                top2 = v;
              }
            }
          if (window > 1) margin = std::min(margin, top1 - top2);
          h = (h ^ arg) * 1099511628211ULL;
        }
    }
    t.note_kink_margin(margin);
    t.note_activation_pattern(h);
  }
  BackFn<T> fn;
  if (rec) {
    fn = [x, argmax = std::move(argmax)](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      auto& gx = tt.grad_acc(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[static_cast<std::size_t>(argmax[i])] += g[i];
    };
  }
  return t.record("maxpool2d", std::move(out), {x}, std::move(fn));
}

template <typename T>
V<T> avgpool2d(Tape<T>& t, V<T> x, int window, int stride) {
  const auto& xv = t.value(x);
  detail::require(xv.ndim() == 4, "avgpool2d expects (B,C,H,W)");
  detail::require(window >= 1 && stride >= 1, "avgpool2d: window and stride must be >= 1");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  detail::require(window <= H && window <= W,
                  "avgpool2d: window " + std::to_string(window) + " exceeds input " +
                      std::to_string(H) + "x" + std::to_string(W));
  const int Ho = (H - window) / stride + 1;
  const int Wo = (W - window) / stride + 1;
  Tensor<T> out({B, C, Ho, Wo});
  const double inv = 1.0 / (static_cast<double>(window) * window);
  const std::size_t planes = static_cast<std::size_t>(B) * C;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * static_cast<std::size_t>(H) * W;
    T* dst = out.data() + p * static_cast<std::size_t>(Ho) * Wo;
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow) {
        double acc = 0;
        for (int i = 0; i < window; ++i)
          for (int j = 0; j < window; ++j)
            acc += static_cast<double>(
                src[static_cast<std::size_t>(oh * stride + i) * W + ow * stride + j]);
        dst[static_cast<std::size_t>(oh) * Wo + ow] = static_cast<T>(acc * inv);
      }
  }
  BackFn<T> fn;
  if (t.will_record({x})) {
    fn = [x, B, C, H, W, Ho, Wo, window, stride, inv](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      auto& gx = tt.grad_acc(x);
      const std::size_t planes2 = static_cast<std::size_t>(B) * C;
      for (std::size_t p = 0; p < planes2; ++p) {
        const T* gp = g.data() + p * static_cast<std::size_t>(Ho) * Wo;
        T* gxp = gx.data() + p * static_cast<std::size_t>(H) * W;
        for (int oh = 0; oh < Ho; ++oh)
          for (int ow = 0; ow < Wo; ++ow) {
            const T gv = static_cast<T>(static_cast<double>(gp[static_cast<std::size_t>(oh) * Wo + ow]) * inv);
            for (int i = 0; i < window; ++i)
              for (int j = 0; j < window; ++j)
                gxp[static_cast<std::size_t>(oh * stride + i) * W + ow * stride + j] += gv;
          }
      }
    };
  }
  return t.record("avgpool2d", std::move(out), {x}, std::move(fn));
}

/// Averages each channel plane to one scalar: (B,C,H,W) -> (B,C,1,1).
template <typename T>
V<T> global_avg_pool(Tape<T>& t, V<T> x) {
  const auto& xv = t.value(x);
  detail::require(xv.ndim() == 4, "global_avg_pool expects (B,C,H,W)");
  const int B = xv.dim(0), C = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor<T> out({B, C, 1, 1});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* src = xv.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      double acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(src[i]);
      out[static_cast<std::size_t>(b) * C + c] = static_cast<T>(acc / static_cast<double>(plane));
    }
  BackFn<T> fn;
  if (t.will_record({x})) {
    fn = [x, B, C, plane](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      auto& gx = tt.grad_acc(x);
      const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const T gv = g[static_cast<std::size_t>(b) * C + c] * inv;
          T* dst = gx.data() + (static_cast<std::size_t>(b) * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[i] += gv;
        }
    };
  }
  return t.record("global_avg_pool", std::move(out), {x}, std::move(fn));
}

// ---- batch normalization ---------------------------------------------------

template <typename T>
struct BatchNormBuffers {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  std::int64_t num_batches = 0;  // 0 means no running statistics exist yet

  explicit BatchNormBuffers(int channels = 1)
      : running_mean(Shape{channels}), running_var(Tensor<T>::ones(Shape{channels})) {}
};

/// Train mode normalizes with batch statistics (biased variance) and, when
/// `track_stats`, folds them into the running buffers with `momentum`.
/// Eval mode uses the running statistics and requires them to exist.
template <typename T>
V<T> batch_norm(Tape<T>& t, V<T> x, V<T> gamma, V<T> beta, BatchNormBuffers<T>& buffers,
                Mode mode, T eps, T momentum, bool track_stats = true) {
  const auto& xv = t.value(x);
  detail::require(xv.ndim() == 4, "batch_norm expects (B,C,H,W)");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const auto& gv = t.value(gamma);
  const auto& bv = t.value(beta);
  detail::require(gv.ndim() == 1 && gv.dim(0) == C && bv.ndim() == 1 && bv.dim(0) == C,
                  "batch_norm: per-channel parameter extents must match " + std::to_string(C) +
                      " channels");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t n = static_cast<std::size_t>(B) * plane;

  Tensor<T> mean({C}), invstd({C});
  if (mode == Mode::train) {
    CYTONET_PRAGMA(omp parallel for schedule(static) if (C > 2 && n > 1024))
    for (int c = 0; c < C; ++c) {
      double sum = 0, sq = 0;
      for (int b = 0; b < B; ++b) {
        const T* src = xv.data() + (static_cast<std::size_t>(b) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double v = static_cast<double>(src[i]);
          sum += v;
          sq += v * v;
        }
      }
      const double mu = sum / static_cast<double>(n);
      double var = sq / static_cast<double>(n) - mu * mu;
      if (var < 0) var = 0;
      mean[static_cast<std::size_t>(c)] = static_cast<T>(mu);
      invstd[static_cast<std::size_t>(c)] =
          static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      if (track_stats) {
        auto& rm = buffers.running_mean[static_cast<std::size_t>(c)];
        auto& rv = buffers.running_var[static_cast<std::size_t>(c)];
        rm = static_cast<T>((1.0 - static_cast<double>(momentum)) * static_cast<double>(rm) +
                            static_cast<double>(momentum) * mu);
        rv = static_cast<T>((1.0 - static_cast<double>(momentum)) * static_cast<double>(rv) +
                            static_cast<double>(momentum) * var);
      }
    }
    if (track_stats) buffers.num_batches += 1;
  } else {
    if (buffers.num_batches == 0) {
      throw NumericError("batch_norm: eval mode before any running statistics exist");
    }
    for (int c = 0; c < C; ++c) {
      mean[static_cast<std::size_t>(c)] = buffers.running_mean[static_cast<std::size_t>(c)];
      const double rv = static_cast<double>(buffers.running_var[static_cast<std::size_t>(c)]);
      invstd[static_cast<std::size_t>(c)] =
          static_cast<T>(1.0 / std::sqrt(rv + static_cast<double>(eps)));
    }
  }

  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * C + c) * plane;
      const T mu = mean[static_cast<std::size_t>(c)];
      const T is = invstd[static_cast<std::size_t>(c)];
      const T ga = gv[static_cast<std::size_t>(c)];
      const T be = bv[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (xv[base + i] - mu) * is;
        xhat[base + i] = xh;
        out[base + i] = ga * xh + be;
      }
    }

  BackFn<T> fn;
  if (t.will_record({x, gamma, beta})) {
    const bool train_stats = (mode == Mode::train);
    fn = [x, gamma, beta, B, C, plane, n, train_stats, xhat = std::move(xhat),
          invstd = std::move(invstd)](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      const auto& gv2 = tt.value(gamma);
      // per-channel reductions
      std::vector<double> sum_g(static_cast<std::size_t>(C), 0.0);
      std::vector<double> sum_gx(static_cast<std::size_t>(C), 0.0);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const std::size_t base = (static_cast<std::size_t>(b) * C + c) * plane;
          double sg = 0, sgx = 0;
          for (std::size_t i = 0; i < plane; ++i) {
            const double gg = static_cast<double>(g[base + i]);
            sg += gg;
            sgx += gg * static_cast<double>(xhat[base + i]);
          }
          sum_g[static_cast<std::size_t>(c)] += sg;
          sum_gx[static_cast<std::size_t>(c)] += sgx;
        }
      if (tt.requires_grad(gamma)) {
        auto& gg = tt.grad_acc(gamma);
        for (int c = 0; c < C; ++c) gg[static_cast<std::size_t>(c)] += static_cast<T>(sum_gx[static_cast<std::size_t>(c)]);
      }
      if (tt.requires_grad(beta)) {
        auto& gb = tt.grad_acc(beta);
        for (int c = 0; c < C; ++c) gb[static_cast<std::size_t>(c)] += static_cast<T>(sum_g[static_cast<std::size_t>(c)]);
      }
      if (tt.requires_grad(x)) {
        auto& gx = tt.grad_acc(x);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * plane;
            const double ga = static_cast<double>(gv2[static_cast<std::size_t>(c)]);
            const double is = static_cast<double>(invstd[static_cast<std::size_t>(c)]);
            if (train_stats) {
              const double mg = sum_g[static_cast<std::size_t>(c)] / static_cast<double>(n);
              const double mgx = sum_gx[static_cast<std::size_t>(c)] / static_cast<double>(n);
              for (std::size_t i = 0; i < plane; ++i) {
                const double gg = static_cast<double>(g[base + i]);
                const double xh = static_cast<double>(xhat[base + i]);
                gx[base + i] += static_cast<T>(ga * is * (gg - mg - xh * mgx));
              }
            } else {
              for (std::size_t i = 0; i < plane; ++i) {
                gx[base + i] += static_cast<T>(ga * is * static_cast<double>(g[base + i]));
              }
            }
          }
      }
    };
  }
  return t.record("batch_norm", std::move(out), {x, gamma, beta}, std::move(fn));
}

// ---- resampling / concatenation -------------------------------------------

/// Bilinear interpolation, align-corners-false. Constant planes are preserved
/// exactly (lerp form).
template <typename T>
V<T> bilinear_upsample(Tape<T>& t, V<T> x, int target_h, int target_w) {
  const auto& xv = t.value(x);
  detail::require(xv.ndim() == 4, "bilinear_upsample expects (B,C,H,W)");
  detail::require(target_h >= 1 && target_w >= 1, "bilinear_upsample: target extent must be >= 1");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const auto ay = detail::lerp_axis(H, target_h);
  const auto ax = detail::lerp_axis(W, target_w);
  Tensor<T> out({B, C, target_h, target_w});
  const std::size_t planes = static_cast<std::size_t>(B) * C;
  CYTONET_PRAGMA(omp parallel for schedule(static) if (planes > 1 && static_cast<long>(target_h) * target_w > 4096))
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * static_cast<std::size_t>(H) * W;
    T* dst = out.data() + p * static_cast<std::size_t>(target_h) * target_w;
    for (int oy = 0; oy < target_h; ++oy) {
      const int y0 = ay.lo[static_cast<std::size_t>(oy)], y1 = ay.hi[static_cast<std::size_t>(oy)];
      const T wy = static_cast<T>(ay.w[static_cast<std::size_t>(oy)]);
      for (int ox = 0; ox < target_w; ++ox) {
        const int x0 = ax.lo[static_cast<std::size_t>(ox)], x1 = ax.hi[static_cast<std::size_t>(ox)];
        const T wx = static_cast<T>(ax.w[static_cast<std::size_t>(ox)]);
        const T v00 = src[static_cast<std::size_t>(y0) * W + x0];
        const T v01 = src[static_cast<std::size_t>(y0) * W + x1];
        const T v10 = src[static_cast<std::size_t>(y1) * W + x0];
        const T v11 = src[static_cast<std::size_t>(y1) * W + x1];
        const T top = v00 + wx * (v01 - v00);
        const T bot = v10 + wx * (v11 - v10);
        dst[static_cast<std::size_t>(oy) * target_w + ox] = top + wy * (bot - top);
      }
    }
  }
  BackFn<T> fn;
  if (t.will_record({x})) {
    fn = [x, B, C, H, W, target_h, target_w, ay, ax](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      auto& gx = tt.grad_acc(x);
      const std::size_t planes2 = static_cast<std::size_t>(B) * C;
      CYTONET_PRAGMA(omp parallel for schedule(static) if (planes2 > 1 && static_cast<long>(target_h) * target_w > 4096))
      for (std::size_t p = 0; p < planes2; ++p) {
        const T* gp = g.data() + p * static_cast<std::size_t>(target_h) * target_w;
        T* dst = gx.data() + p * static_cast<std::size_t>(H) * W;
        for (int oy = 0; oy < target_h; ++oy) {
          const int y0 = ay.lo[static_cast<std::size_t>(oy)], y1 = ay.hi[static_cast<std::size_t>(oy)];
          const T wy = static_cast<T>(ay.w[static_cast<std::size_t>(oy)]);
          for (int ox = 0; ox < target_w; ++ox) {
            const int x0 = ax.lo[static_cast<std::size_t>(ox)], x1 = ax.hi[static_cast<std::size_t>(ox)];
            const T wx = static_cast<T>(ax.w[static_cast<std::size_t>(ox)]);
            const T gv = gp[static_cast<std::size_t>(oy) * target_w + ox];
            dst[static_cast<std::size_t>(y0) * W + x0] += gv * (T(1) - wy) * (T(1) - wx);
            dst[static_cast<std::size_t>(y0) * W + x1] += gv * (T(1) - wy) * wx;
            dst[static_cast<std::size_t>(y1) * W + x0] += gv * wy * (T(1) - wx);
            dst[static_cast<std::size_t>(y1) * W + x1] += gv * wy * wx;
          }
        }
      }
    };
  }
  return t.record("bilinear_upsample", std::move(out), {x}, std::move(fn));
}

/// Stacks along the channel axis in argument order.
template <typename T>
V<T> concat_channels(Tape<T>& t, const std::vector<V<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty input list");
  if (xs.size() == 1) return xs[0];
  const auto& first = t.value(xs[0]);
  detail::require(first.ndim() == 4, "concat_channels expects (B,C,H,W) tensors");
  const int B = first.dim(0), H = first.dim(2), W = first.dim(3);
  int Cout = 0;
  for (const auto& v : xs) {
    const auto& tv = t.value(v);
    detail::require(tv.ndim() == 4 && tv.dim(0) == B && tv.dim(2) == H && tv.dim(3) == W,
                    "concat_channels: batch/spatial extents differ: " + shape_str(first.shape()) +
                        " vs " + shape_str(tv.shape()));
    Cout += tv.dim(1);
  }
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor<T> out({B, Cout, H, W});
  for (int b = 0; b < B; ++b) {
    int coff = 0;
    for (const auto& v : xs) {
      const auto& tv = t.value(v);
      const int Ci = tv.dim(1);
      std::copy_n(tv.data() + static_cast<std::size_t>(b) * Ci * plane,
                  static_cast<std::size_t>(Ci) * plane,
                  out.data() + (static_cast<std::size_t>(b) * Cout + coff) * plane);
      coff += Ci;
    }
  }
  bool needs = false;
  for (const auto& v : xs)
    if (t.recording() && t.requires_grad(v)) needs = true;
  BackFn<T> fn;
  if (needs) {
    fn = [xs, B, Cout, plane](Tape<T>& tt, V<T> o) {
      const auto& g = tt.grad(o);
      for (int b = 0; b < B; ++b) {
        int coff = 0;
        for (const auto& v : xs) {
          const int Ci = tt.value(v).dim(1);
          if (tt.requires_grad(v)) {
            auto& gv = tt.grad_acc(v);
            const T* src = g.data() + (static_cast<std::size_t>(b) * Cout + coff) * plane;
            T* dst = gv.data() + static_cast<std::size_t>(b) * Ci * plane;
            for (std::size_t i = 0; i < static_cast<std::size_t>(Ci) * plane; ++i) dst[i] += src[i];
          }
          coff += Ci;
        }
      }
    };
  }
  // record() takes an initializer_list and only needs "any input requires
  // grad"; register one requiring input and let the closure fan out.
  V<T> head = xs[0];
  for (const auto& v : xs) {
    if (t.requires_grad(v)) {
      head = v;
      break;
    }
  }
  return t.record("concat_channels", std::move(out), {head}, std::move(fn));
}

// ---- reductions ------------------------------------------------------------

template <typename T>
V<T> reduce_sum(Tape<T>& t, V<T> x) {
  const auto& xv = t.value(x);
  double acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]);
  BackFn<T> fn;
  if (t.will_record({x})) {
    fn = [x](Tape<T>& tt, V<T> o) {
      const T g = tt.grad(o)[0];
      auto& gx = tt.grad_acc(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    };
  }
  return t.record("reduce_sum", Tensor<T>::scalar(static_cast<T>(acc)), {x}, std::move(fn));
}

template <typename T>
V<T> reduce_mean(Tape<T>& t, V<T> x) {
  const auto& xv = t.value(x);
  const double n = static_cast<double>(xv.size());
  double acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]);
  BackFn<T> fn;
  if (t.will_record({x})) {
    fn = [x, n](Tape<T>& tt, V<T> o) {
      const T g = static_cast<T>(static_cast<double>(tt.grad(o)[0]) / n);
      auto& gx = tt.grad_acc(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    };
  }
  return t.record("reduce_mean", Tensor<T>::scalar(static_cast<T>(acc / n)), {x}, std::move(fn));
}

// ---- loss ------------------------------------------------------------------

/// Mean over the batch of -log softmax(logits)[label], evaluated through the
/// log-sum-exp form. logits: (B,K).
template <typename T>
V<T> cross_entropy_with_logits(Tape<T>& t, V<T> logits, const std::vector<int>& labels) {
  const auto& zv = t.value(logits);
  detail::require(zv.ndim() == 2, "cross_entropy_with_logits expects (B,K) logits");
  const int B = zv.dim(0), K = zv.dim(1);
  detail::require(static_cast<int>(labels.size()) == B,
                  "cross_entropy_with_logits: batch size mismatch");
  for (int b = 0; b < B; ++b) {
    if (labels[static_cast<std::size_t>(b)] < 0 || labels[static_cast<std::size_t>(b)] >= K) {
      throw Error("cross_entropy_with_logits: label " +
                  std::to_string(labels[static_cast<std::size_t>(b)]) + " out of range [0," +
                  std::to_string(K) + ")");
    }
  }
  const bool rec = t.will_record({logits});
  Tensor<T> probs;
  if (rec) probs = Tensor<T>({B, K});
  double loss = 0;
  for (int b = 0; b < B; ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(zv.at2(b, k)));
    double sum = 0;
    for (int k = 0; k < K; ++k) sum += std::exp(static_cast<double>(zv.at2(b, k)) - mx);
    const double lse = mx + std::log(sum);
    loss += lse - static_cast<double>(zv.at2(b, labels[static_cast<std::size_t>(b)]));
    if (rec) {
      for (int k = 0; k < K; ++k)
        probs.at2(b, k) = static_cast<T>(std::exp(static_cast<double>(zv.at2(b, k)) - mx) / sum);
    }
  }
  loss /= static_cast<double>(B);
  BackFn<T> fn;
  if (rec) {
    fn = [logits, labels, B, K, probs = std::move(probs)](Tape<T>& tt, V<T> o) {
      const T g = tt.grad(o)[0];
      auto& gz = tt.grad_acc(logits);
      const T invb = static_cast<T>(1.0 / static_cast<double>(B));
      for (int b = 0; b < B; ++b)
        for (int k = 0; k < K; ++k) {
          T d = probs.at2(b, k);
          if (k == labels[static_cast<std::size_t>(b)]) d -= T(1);
          gz.at2(b, k) += g * d * invb;
        }
    };
  }
  return t.record("cross_entropy_with_logits", Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                  std::move(fn));
}

}  // namespace ops

// ---- plain (non-tape) helpers ----------------------------------------------

/// Row-wise stable softmax of a (B,K) tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& z) {
  if (z.ndim() != 2) throw ShapeError("softmax_rows expects (B,K)");
  const int B = z.dim(0), K = z.dim(1);
  Tensor<T> out(z.shape());
  for (int b = 0; b < B; ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(z.at2(b, k)));
    double sum = 0;
    for (int k = 0; k < K; ++k) sum += std::exp(static_cast<double>(z.at2(b, k)) - mx);
    for (int k = 0; k < K; ++k)
      out.at2(b, k) = static_cast<T>(std::exp(static_cast<double>(z.at2(b, k)) - mx) / sum);
  }
  return out;
}

/// Row-wise argmax; ties break toward the lowest class index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& z) {
  if (z.ndim() != 2) throw ShapeError("argmax_rows expects (B,K)");
  const int B = z.dim(0), K = z.dim(1);
  std::vector<int> out(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    int best = 0;
    for (int k = 1; k < K; ++k) {
      if (z.at2(b, k) > z.at2(b, best)) best = k;
    }
    out[static_cast<std::size_t>(b)] = best;
  }
  return out;
}

/// Mean over the batch of -log p[label] for a (B,K) probability tensor whose
/// rows must sum to 1.
template <typename T>
double cross_entropy_from_probs(const Tensor<T>& probs, const std::vector<int>& labels) {
  if (probs.ndim() != 2) throw ShapeError("cross_entropy_from_probs expects (B,K)");
  const int B = probs.dim(0), K = probs.dim(1);
  if (static_cast<int>(labels.size()) != B) {
    throw ShapeError("cross_entropy_from_probs: batch size mismatch");
  }
  double loss = 0;
  for (int b = 0; b < B; ++b) {
    double row = 0;
    for (int k = 0; k < K; ++k) row += static_cast<double>(probs.at2(b, k));
    if (std::abs(row - 1.0) > 1e-3) {
      throw NumericError("cross_entropy_from_probs: row " + std::to_string(b) +
                         " sums to " + std::to_string(row) + ", expected 1");
    }
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= K) {
      throw Error("cross_entropy_from_probs: label " + std::to_string(y) + " out of range [0," +
                  std::to_string(K) + ")");
    }
    loss += -std::log(std::max(static_cast<double>(probs.at2(b, y)), 1e-300));
  }
  return loss / static_cast<double>(B);
}

}  // namespace cytonet
