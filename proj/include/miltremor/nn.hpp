#pragma once

// Dense tensor engine with reverse-mode differentiation for the fixed layer
// vocabulary used by the tremor models: dense, conv1d, maxpool1d, leaky_relu,
// dropout, flatten, softmax, tanh, sigmoid. Templated on the scalar type:
// float in production paths, double for verification.
//
// Layers own their activation and gradient buffers and reuse them across
// steps; a model is single-writer (one forward/backward at a time), while
// independent models run freely in parallel.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <immintrin.h>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "miltremor/common.hpp"

namespace miltremor::nn {

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated by zero_grad(); same length as data

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(count(shape), T(0));
  }
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw Error(ErrorCode::shape, "data does not match shape");
  }

  static size_t count(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d < 0) throw Error(ErrorCode::shape, "negative dimension");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  size_t size() const { return data.size(); }
  void zero_grad() { grad.assign(data.size(), T(0)); }
};

// --- kernels (raw pointers, single item) -------------------------------------

namespace detail {

// The conv kernels are kept out of line: inlining them into the layer
// members defeats the vectorizer's aliasing analysis.
template <typename T>
__attribute__((noinline)) void conv1d_item(const T* __restrict x, int cin, int len, const T* __restrict w,
                        const T* __restrict bias, int cout, int k, T* __restrict y) {
  const int lo = len - k + 1;
  for (int co = 0; co < cout; ++co) {
    T* o = y + static_cast<size_t>(co) * lo;
    const T bv = bias ? bias[co] : T(0);
    for (int l = 0; l < lo; ++l) o[l] = bv;
    for (int ci = 0; ci < cin; ++ci) {
      const T* xi = x + static_cast<size_t>(ci) * len;
      const T* wr = w + (static_cast<size_t>(co) * cin + ci) * k;
      for (int kk = 0; kk < k; ++kk) {
        const T wv = wr[kk];
        const T* xs = xi + kk;
        for (int l = 0; l < lo; ++l) o[l] += wv * xs[l];
      }
    }
  }
}

// dx[ci][l+kk] += w[co][ci][kk] * dy[co][l]; dx must be pre-zeroed.
template <typename T>
__attribute__((noinline)) void conv1d_item_dx(const T* __restrict dy, int cout, int lo, const T* __restrict w,
                           int cin, int k, T* __restrict dx) {
  for (int co = 0; co < cout; ++co) {
    const T* dyo = dy + static_cast<size_t>(co) * lo;
    for (int ci = 0; ci < cin; ++ci) {
      T* dxi = dx + static_cast<size_t>(ci) * (lo + k - 1);
      const T* wr = w + (static_cast<size_t>(co) * cin + ci) * k;
      for (int kk = 0; kk < k; ++kk) {
        const T wv = wr[kk];
        T* dxs = dxi + kk;
        for (int l = 0; l < lo; ++l) dxs[l] += wv * dyo[l];
      }
    }
  }
}

// dw[co][ci][kk] += sum_b sum_l dy[b][co][l] * x[b][ci][l+kk]; the whole batch
// is accumulated in one pass so the per-tap reduction epilogue runs once.
template <typename T>
__attribute__((noinline)) void conv1d_batch_dw(const T* __restrict x, int cin, int len, const T* __restrict dy,
                            int cout, int lo, int k, int batch, T* __restrict dw,
                            T* __restrict db) {
  const size_t xstride = static_cast<size_t>(cin) * len;
  const size_t ystride = static_cast<size_t>(cout) * lo;
  for (int co = 0; co < cout; ++co) {
    if (db) {
      T s = 0;
      for (int b = 0; b < batch; ++b) {
        const T* dyo = dy + b * ystride + static_cast<size_t>(co) * lo;
        for (int l = 0; l < lo; ++l) s += dyo[l];
      }
      db[co] += s;
    }
    for (int ci = 0; ci < cin; ++ci) {
      T* wr = dw + (static_cast<size_t>(co) * cin + ci) * k;
      for (int kk = 0; kk < k; ++kk) {
        T s = 0;
        for (int b = 0; b < batch; ++b) {
          const T* dyo = dy + b * ystride + static_cast<size_t>(co) * lo;
          const T* xs = x + b * xstride + static_cast<size_t>(ci) * len + kk;
          for (int l = 0; l < lo; ++l) s += dyo[l] * xs[l];
        }
        wr[kk] += s;
      }
    }
  }
}

#if defined(__AVX512F__)

inline float hsum512(__m512 v) { return _mm512_reduce_add_ps(v); }

// Float specializations: eight taps share each x load block, with the output
// tile streamed through registers. The tap dots in the weight gradient are
// FMA reductions, which the compiler will not vectorize under strict FP
// semantics, so they get explicit vector accumulators.
template <>
inline void conv1d_item<float>(const float* __restrict x, int cin, int len,
                               const float* __restrict w, const float* __restrict bias, int cout,
                               int k, float* __restrict y) {
  const int lo = len - k + 1;
  for (int co = 0; co < cout; ++co) {
    float* o = y + static_cast<size_t>(co) * lo;
    const float bv = bias ? bias[co] : 0.0f;
    for (int l = 0; l < lo; ++l) o[l] = bv;
    for (int ci = 0; ci < cin; ++ci) {
      const float* xi = x + static_cast<size_t>(ci) * len;
      const float* wr = w + (static_cast<size_t>(co) * cin + ci) * k;
      int kk0 = 0;
      for (; kk0 + 8 <= k; kk0 += 8) {
        const float* xb = xi + kk0;
        const __m512 w0 = _mm512_set1_ps(wr[kk0 + 0]), w1 = _mm512_set1_ps(wr[kk0 + 1]),
                     w2 = _mm512_set1_ps(wr[kk0 + 2]), w3 = _mm512_set1_ps(wr[kk0 + 3]),
                     w4 = _mm512_set1_ps(wr[kk0 + 4]), w5 = _mm512_set1_ps(wr[kk0 + 5]),
                     w6 = _mm512_set1_ps(wr[kk0 + 6]), w7 = _mm512_set1_ps(wr[kk0 + 7]);
        int l = 0;
        for (; l + 16 <= lo; l += 16) {
          __m512 acc = _mm512_loadu_ps(o + l);
          acc = _mm512_fmadd_ps(w0, _mm512_loadu_ps(xb + l + 0), acc);
          acc = _mm512_fmadd_ps(w1, _mm512_loadu_ps(xb + l + 1), acc);
          acc = _mm512_fmadd_ps(w2, _mm512_loadu_ps(xb + l + 2), acc);
          acc = _mm512_fmadd_ps(w3, _mm512_loadu_ps(xb + l + 3), acc);
          acc = _mm512_fmadd_ps(w4, _mm512_loadu_ps(xb + l + 4), acc);
          acc = _mm512_fmadd_ps(w5, _mm512_loadu_ps(xb + l + 5), acc);
          acc = _mm512_fmadd_ps(w6, _mm512_loadu_ps(xb + l + 6), acc);
          acc = _mm512_fmadd_ps(w7, _mm512_loadu_ps(xb + l + 7), acc);
          _mm512_storeu_ps(o + l, acc);
        }
        for (; l < lo; ++l) {
          float s = o[l];
          for (int j = 0; j < 8; ++j) s += wr[kk0 + j] * xb[l + j];
          o[l] = s;
        }
      }
      for (; kk0 < k; ++kk0) {
        const float wv = wr[kk0];
        const float* xs = xi + kk0;
        for (int l = 0; l < lo; ++l) o[l] += wv * xs[l];
      }
    }
  }
}

template <>
inline void conv1d_batch_dw<float>(const float* __restrict x, int cin, int len,
                                   const float* __restrict dy, int cout, int lo, int k, int batch,
                                   float* __restrict dw, float* __restrict db) {
  const size_t xstride = static_cast<size_t>(cin) * len;
  const size_t ystride = static_cast<size_t>(cout) * lo;
  for (int co = 0; co < cout; ++co) {
    if (db) {
      __m512 acc = _mm512_setzero_ps();
      float s = 0.0f;
      for (int b = 0; b < batch; ++b) {
        const float* dyo = dy + b * ystride + static_cast<size_t>(co) * lo;
        int l = 0;
        for (; l + 16 <= lo; l += 16) acc = _mm512_add_ps(acc, _mm512_loadu_ps(dyo + l));
        for (; l < lo; ++l) s += dyo[l];
      }
      db[co] += s + hsum512(acc);
    }
    for (int ci = 0; ci < cin; ++ci) {
      float* wr = dw + (static_cast<size_t>(co) * cin + ci) * k;
      int kk0 = 0;
      for (; kk0 + 8 <= k; kk0 += 8) {
        __m512 a0 = _mm512_setzero_ps(), a1 = _mm512_setzero_ps(), a2 = _mm512_setzero_ps(),
               a3 = _mm512_setzero_ps(), a4 = _mm512_setzero_ps(), a5 = _mm512_setzero_ps(),
               a6 = _mm512_setzero_ps(), a7 = _mm512_setzero_ps();
        float s[8] = {};
        for (int b = 0; b < batch; ++b) {
          const float* dyo = dy + b * ystride + static_cast<size_t>(co) * lo;
          const float* xb = x + b * xstride + static_cast<size_t>(ci) * len + kk0;
          int l = 0;
          for (; l + 16 <= lo; l += 16) {
            const __m512 vdy = _mm512_loadu_ps(dyo + l);
            a0 = _mm512_fmadd_ps(vdy, _mm512_loadu_ps(xb + l + 0), a0);
            a1 = _mm512_fmadd_ps(vdy, _mm512_loadu_ps(xb + l + 1), a1);
            a2 = _mm512_fmadd_ps(vdy, _mm512_loadu_ps(xb + l + 2), a2);
            a3 = _mm512_fmadd_ps(vdy, _mm512_loadu_ps(xb + l + 3), a3);
            a4 = _mm512_fmadd_ps(vdy, _mm512_loadu_ps(xb + l + 4), a4);
            a5 = _mm512_fmadd_ps(vdy, _mm512_loadu_ps(xb + l + 5), a5);
            a6 = _mm512_fmadd_ps(vdy, _mm512_loadu_ps(xb + l + 6), a6);
            a7 = _mm512_fmadd_ps(vdy, _mm512_loadu_ps(xb + l + 7), a7);
          }
          for (; l < lo; ++l) {
            const float dv = dyo[l];
            for (int j = 0; j < 8; ++j) s[j] += dv * xb[l + j];
          }
        }
        const float h[8] = {hsum512(a0), hsum512(a1), hsum512(a2), hsum512(a3),
                            hsum512(a4), hsum512(a5), hsum512(a6), hsum512(a7)};
        for (int j = 0; j < 8; ++j) wr[kk0 + j] += s[j] + h[j];
      }
      for (; kk0 < k; ++kk0) {
        __m512 acc = _mm512_setzero_ps();
        float s = 0.0f;
        for (int b = 0; b < batch; ++b) {
          const float* dyo = dy + b * ystride + static_cast<size_t>(co) * lo;
          const float* xs = x + b * xstride + static_cast<size_t>(ci) * len + kk0;
          int l = 0;
          for (; l + 16 <= lo; l += 16)
            acc = _mm512_fmadd_ps(_mm512_loadu_ps(dyo + l), _mm512_loadu_ps(xs + l), acc);
          for (; l < lo; ++l) s += dyo[l] * xs[l];
        }
        wr[kk0] += s + hsum512(acc);
      }
    }
  }
}

#elif defined(__AVX2__) && defined(__FMA__)

// Float specialization: eight taps share each x load block, with the output
// tile streamed through registers.
template <>
inline void conv1d_item<float>(const float* __restrict x, int cin, int len,
                               const float* __restrict w, const float* __restrict bias, int cout,
                               int k, float* __restrict y) {
  const int lo = len - k + 1;
  for (int co = 0; co < cout; ++co) {
    float* o = y + static_cast<size_t>(co) * lo;
    const float bv = bias ? bias[co] : 0.0f;
    for (int l = 0; l < lo; ++l) o[l] = bv;
    for (int ci = 0; ci < cin; ++ci) {
      const float* xi = x + static_cast<size_t>(ci) * len;
      const float* wr = w + (static_cast<size_t>(co) * cin + ci) * k;
      int kk0 = 0;
      for (; kk0 + 8 <= k; kk0 += 8) {
        const float* xb = xi + kk0;
        const __m256 w0 = _mm256_broadcast_ss(wr + kk0 + 0);
        const __m256 w1 = _mm256_broadcast_ss(wr + kk0 + 1);
        const __m256 w2 = _mm256_broadcast_ss(wr + kk0 + 2);
        const __m256 w3 = _mm256_broadcast_ss(wr + kk0 + 3);
        const __m256 w4 = _mm256_broadcast_ss(wr + kk0 + 4);
        const __m256 w5 = _mm256_broadcast_ss(wr + kk0 + 5);
        const __m256 w6 = _mm256_broadcast_ss(wr + kk0 + 6);
        const __m256 w7 = _mm256_broadcast_ss(wr + kk0 + 7);
        int l = 0;
        for (; l + 8 <= lo; l += 8) {
          __m256 acc = _mm256_loadu_ps(o + l);
          acc = _mm256_fmadd_ps(w0, _mm256_loadu_ps(xb + l + 0), acc);
          acc = _mm256_fmadd_ps(w1, _mm256_loadu_ps(xb + l + 1), acc);
          acc = _mm256_fmadd_ps(w2, _mm256_loadu_ps(xb + l + 2), acc);
          acc = _mm256_fmadd_ps(w3, _mm256_loadu_ps(xb + l + 3), acc);
          acc = _mm256_fmadd_ps(w4, _mm256_loadu_ps(xb + l + 4), acc);
          acc = _mm256_fmadd_ps(w5, _mm256_loadu_ps(xb + l + 5), acc);
          acc = _mm256_fmadd_ps(w6, _mm256_loadu_ps(xb + l + 6), acc);
          acc = _mm256_fmadd_ps(w7, _mm256_loadu_ps(xb + l + 7), acc);
          _mm256_storeu_ps(o + l, acc);
        }
        for (; l < lo; ++l) {
          float s = o[l];
          for (int j = 0; j < 8; ++j) s += wr[kk0 + j] * xb[l + j];
          o[l] = s;
        }
      }
      for (; kk0 < k; ++kk0) {
        const float wv = wr[kk0];
        const float* xs = xi + kk0;
        for (int l = 0; l < lo; ++l) o[l] += wv * xs[l];
      }
    }
  }
}

inline float hsum256(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_add_ss(lo, _mm_movehdup_ps(lo));
  return _mm_cvtss_f32(lo);
}

#endif  // SIMD float specializations

template <typename T>
__attribute__((noinline)) void dense_item(const T* __restrict x, const T* __restrict w, const T* __restrict b,
                       int in, int out, T* __restrict y) {
  for (int o = 0; o < out; ++o) y[o] = b ? b[o] : T(0);
  for (int i = 0; i < in; ++i) {
    const T xv = x[i];
    const T* wr = w + static_cast<size_t>(i) * out;
    for (int o = 0; o < out; ++o) y[o] += xv * wr[o];
  }
}

}  // namespace detail

// --- spec-level ops -----------------------------------------------------------

// y = xW + b with x [B, in], W [in, out], b [out].
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b) {
  if (x.shape.size() != 2 || W.shape.size() != 2 || b.shape.size() != 1)
    throw Error(ErrorCode::shape, "dense_forward expects x[B,in], W[in,out], b[out]");
  const int B = x.shape[0], in = x.shape[1], out = W.shape[1];
  if (W.shape[0] != in || b.shape[0] != out)
    throw Error(ErrorCode::shape, "dense_forward dimension mismatch");
  Tensor<T> y({B, out});
  for (int bi = 0; bi < B; ++bi)
    detail::dense_item(x.data.data() + static_cast<size_t>(bi) * in, W.data.data(),
                       b.data.data(), in, out, y.data.data() + static_cast<size_t>(bi) * out);
  return y;
}

// Valid (no padding) cross-correlation: x [C_in, L], kernels [C_out, C_in, k].
template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& b) {
  if (x.shape.size() != 2 || kernels.shape.size() != 3 || b.shape.size() != 1)
    throw Error(ErrorCode::shape, "conv1d_forward expects x[C,L], kernels[F,C,k], b[F]");
  const int cin = x.shape[0], len = x.shape[1];
  const int cout = kernels.shape[0], k = kernels.shape[2];
  if (kernels.shape[1] != cin || b.shape[0] != cout)
    throw Error(ErrorCode::shape, "conv1d_forward dimension mismatch");
  if (len < k) throw Error(ErrorCode::shape, "conv1d_forward input shorter than kernel");
  Tensor<T> y({cout, len - k + 1});
  detail::conv1d_item(x.data.data(), cin, len, kernels.data.data(), b.data.data(), cout, k,
                      y.data.data());
  return y;
}

// Non-overlapping stride-k max pooling; odd trailing elements dropped.
template <typename T>
Tensor<T> maxpool1d_forward(const Tensor<T>& x, int k = 2) {
  if (x.shape.size() != 2) throw Error(ErrorCode::shape, "maxpool1d_forward expects x[C,L]");
  const int c = x.shape[0], len = x.shape[1];
  if (len < k) throw Error(ErrorCode::shape, "maxpool1d_forward input shorter than pool");
  const int lo = len / k;
  Tensor<T> y({c, lo});
  for (int ci = 0; ci < c; ++ci)
    for (int l = 0; l < lo; ++l) {
      T m = x.data[static_cast<size_t>(ci) * len + l * k];
      for (int j = 1; j < k; ++j) m = std::max(m, x.data[static_cast<size_t>(ci) * len + l * k + j]);
      y.data[static_cast<size_t>(ci) * lo + l] = m;
    }
  return y;
}

template <typename T>
inline T leaky_relu(T x, T alpha = T(0.2)) {
  return x >= T(0) ? x : alpha * x;
}

// Numerically stable two-way softmax.
template <typename T>
inline std::array<T, 2> softmax2(T l0, T l1) {
  const T m = std::max(l0, l1);
  const T e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
  const T s = e0 + e1;
  return {e0 / s, e1 / s};
}

// lr = base until ceil(E/2), then decayed by `factor` at each epoch.
inline double lr_schedule(int epoch, int total_epochs, double base = 1e-3, double factor = 0.9) {
  const int half = (total_epochs + 1) / 2;
  if (epoch < half) return base;
  return base * std::pow(factor, epoch - half + 1);
}

// --- Adam ---------------------------------------------------------------------

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  int64_t t = 0;
  T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
  T lr = T(1e-3);
};

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& st) {
  if (params.size() != grads.size()) throw Error(ErrorCode::shape, "adam_step size mismatch");
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), T(0));
    st.v.assign(params.size(), T(0));
  }
  st.t += 1;
  const T b1t = T(1) - std::pow(st.beta1, static_cast<T>(st.t));
  const T b2t = T(1) - std::pow(st.beta2, static_cast<T>(st.t));
  T* __restrict p = params.data();
  const T* __restrict g = grads.data();
  T* __restrict m = st.m.data();
  T* __restrict v = st.v.data();
  const T lr = st.lr, b1 = st.beta1, b2 = st.beta2, eps = st.eps;
  for (size_t i = 0; i < params.size(); ++i) {
    m[i] = b1 * m[i] + (T(1) - b1) * g[i];
    v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
    const T mhat = m[i] / b1t;
    const T vhat = v[i] / b2t;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

// Optimizer over a parameter set; one AdamState per tensor.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>*> params, T lr = T(1e-3)) : params_(std::move(params)) {
    states_.resize(params_.size());
    for (auto& st : states_) st.lr = lr;
  }

  void set_lr(T lr) {
    for (auto& st : states_) st.lr = lr;
  }

  void step() {
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>* p = params_[i];
      adam_step<T>(std::span<T>(p->data), std::span<const T>(p->grad), states_[i]);
    }
  }

 private:
  std::vector<Tensor<T>*> params_;
  std::vector<AdamState<T>> states_;
};

// --- layer stack ---------------------------------------------------------------

enum class LayerKind : uint8_t {
  dense = 0,
  conv1d = 1,
  maxpool1d = 2,
  leaky_relu = 3,
  dropout = 4,
  flatten = 5,
  softmax = 6,
  tanh_act = 7,
  sigmoid = 8,
};

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  int in = 0;        // dense input features (0 = infer from shape propagation)
  int out = 0;       // dense output features
  int filters = 0;   // conv1d output channels
  int kernel = 0;    // conv1d kernel size
  int pool = 0;      // maxpool window
  double alpha = 0;  // leaky_relu slope
  double p = 0;      // dropout probability

  static LayerSpec Dense(int in, int out) { return {LayerKind::dense, in, out, 0, 0, 0, 0, 0}; }
  static LayerSpec Conv1d(int filters, int kernel) {
    return {LayerKind::conv1d, 0, 0, filters, kernel, 0, 0, 0};
  }
  static LayerSpec MaxPool1d(int k) { return {LayerKind::maxpool1d, 0, 0, 0, 0, k, 0, 0}; }
  static LayerSpec LeakyRelu(double alpha) {
    return {LayerKind::leaky_relu, 0, 0, 0, 0, 0, alpha, 0};
  }
  static LayerSpec Dropout(double p) { return {LayerKind::dropout, 0, 0, 0, 0, 0, 0, p}; }
  static LayerSpec Flatten() { return {LayerKind::flatten, 0, 0, 0, 0, 0, 0, 0}; }
  static LayerSpec Softmax() { return {LayerKind::softmax, 0, 0, 0, 0, 0, 0, 0}; }
  static LayerSpec Tanh() { return {LayerKind::tanh_act, 0, 0, 0, 0, 0, 0, 0}; }
  static LayerSpec Sigmoid() { return {LayerKind::sigmoid, 0, 0, 0, 0, 0, 0, 0}; }
};

enum class Mode { train, eval };

template <typename T>
struct Ctx {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;
  // When set, dropout masks are sampled on first use and then reused, which
  // keeps finite-difference probes consistent with the recorded gradients.
  bool freeze_dropout = false;
};

// Shape of one batch item flowing through a stack: either [C, L] or flat [D].
struct ItemShape {
  int channels = 0;  // 0 when flat
  int length = 0;    // flat size when channels == 0
  size_t count() const {
    return channels ? static_cast<size_t>(channels) * length : static_cast<size_t>(length);
  }
  static ItemShape Flat(int d) { return {0, d}; }
  static ItemShape Grid(int c, int l) { return {c, l}; }
};

// Layers keep their output (y_) and input-gradient (dx_) buffers across calls,
// plus a pointer to the forward input, which the caller keeps alive until
// backward has run.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual const std::vector<T>& forward(const std::vector<T>& x, int B, Ctx<T>& ctx) = 0;
  // Accumulates parameter gradients; fills dx_ only when need_dx.
  virtual const std::vector<T>& backward(const std::vector<T>& dy, int B, bool need_dx) = 0;
  virtual void collect_params(std::vector<Tensor<T>*>&) {}
  virtual LayerSpec spec() const = 0;
  virtual std::string describe() const = 0;
  ItemShape in_shape, out_shape;

 protected:
  std::vector<T> y_, dx_;
};

template <typename T>
class DenseLayer : public Layer<T> {
 public:
  DenseLayer(int in, int out) : in_(in), out_(out), W({in, out}), b({out}) {}

  const std::vector<T>& forward(const std::vector<T>& x, int B, Ctx<T>&) override {
    x_ = x.data();
    this->y_.resize(static_cast<size_t>(B) * out_);
    for (int bi = 0; bi < B; ++bi)
      detail::dense_item(x.data() + static_cast<size_t>(bi) * in_, W.data.data(), b.data.data(),
                         in_, out_, this->y_.data() + static_cast<size_t>(bi) * out_);
    return this->y_;
  }

  const std::vector<T>& backward(const std::vector<T>& dy, int B, bool need_dx) override {
    const T* x = x_;
    for (int bi = 0; bi < B; ++bi) {
      const T* dyr = dy.data() + static_cast<size_t>(bi) * out_;
      const T* xr = x + static_cast<size_t>(bi) * in_;
      for (int o = 0; o < out_; ++o) b.grad[o] += dyr[o];
      for (int i = 0; i < in_; ++i) {
        const T xv = xr[i];
        T* __restrict wg = W.grad.data() + static_cast<size_t>(i) * out_;
        for (int o = 0; o < out_; ++o) wg[o] += xv * dyr[o];
      }
    }
    if (!need_dx) {
      this->dx_.clear();
      return this->dx_;
    }
    this->dx_.resize(static_cast<size_t>(B) * in_);
    for (int bi = 0; bi < B; ++bi) {
      const T* dyr = dy.data() + static_cast<size_t>(bi) * out_;
      T* dxr = this->dx_.data() + static_cast<size_t>(bi) * in_;
      const T* w = W.data.data();
      for (int i = 0; i < in_; ++i) {
        const T* wr = w + static_cast<size_t>(i) * out_;
        T s = 0;
        for (int o = 0; o < out_; ++o) s += wr[o] * dyr[o];
        dxr[i] = s;
      }
    }
    return this->dx_;
  }

  void collect_params(std::vector<Tensor<T>*>& out) override {
    out.push_back(&W);
    out.push_back(&b);
  }
  LayerSpec spec() const override { return LayerSpec::Dense(in_, out_); }
  std::string describe() const override {
    return "dense " + std::to_string(in_) + "->" + std::to_string(out_);
  }

  int in_, out_;
  Tensor<T> W, b;

 private:
  const T* x_ = nullptr;  // forward input; the caller keeps it alive
};

template <typename T>
class Conv1dLayer : public Layer<T> {
 public:
  Conv1dLayer(int cin, int len, int filters, int kernel)
      : cin_(cin), len_(len), cout_(filters), k_(kernel), W({filters, cin, kernel}), b({filters}) {
    if (len < kernel) throw Error(ErrorCode::shape, "conv1d input shorter than kernel");
    lo_ = len - kernel + 1;
  }

  const std::vector<T>& forward(const std::vector<T>& x, int B, Ctx<T>&) override {
    x_ = x.data();
    const size_t xi = static_cast<size_t>(cin_) * len_, yi = static_cast<size_t>(cout_) * lo_;
    this->y_.resize(static_cast<size_t>(B) * yi);
    for (int bi = 0; bi < B; ++bi)
      detail::conv1d_item(x.data() + bi * xi, cin_, len_, W.data.data(), b.data.data(), cout_, k_,
                          this->y_.data() + bi * yi);
    return this->y_;
  }

  const std::vector<T>& backward(const std::vector<T>& dy, int B, bool need_dx) override {
    const T* x = x_;
    const size_t xi = static_cast<size_t>(cin_) * len_, yi = static_cast<size_t>(cout_) * lo_;
    detail::conv1d_batch_dw(x, cin_, len_, dy.data(), cout_, lo_, k_, B, W.grad.data(),
                            b.grad.data());
    if (!need_dx) {
      this->dx_.clear();
      return this->dx_;
    }
    // The input gradient is itself a valid convolution: pad dy with k-1 zeros
    // on both sides and correlate with the channel-transposed, tap-flipped
    // kernels. This reuses the fast forward kernel.
    wt_.resize(W.size());
    for (int co = 0; co < cout_; ++co)
      for (int ci = 0; ci < cin_; ++ci)
        for (int kk = 0; kk < k_; ++kk)
          wt_[(static_cast<size_t>(ci) * cout_ + co) * k_ + kk] =
              W.data[(static_cast<size_t>(co) * cin_ + ci) * k_ + (k_ - 1 - kk)];
    const int pad = k_ - 1;
    const int plen = lo_ + 2 * pad;
    const size_t pitem = static_cast<size_t>(cout_) * plen;
    if (dyp_.size() != static_cast<size_t>(B) * pitem) dyp_.assign(static_cast<size_t>(B) * pitem, T(0));
    this->dx_.resize(static_cast<size_t>(B) * xi);
    for (int bi = 0; bi < B; ++bi) {
      T* dst = dyp_.data() + bi * pitem;
      const T* src = dy.data() + bi * yi;
      for (int co = 0; co < cout_; ++co)
        std::copy(src + static_cast<size_t>(co) * lo_, src + static_cast<size_t>(co + 1) * lo_,
                  dst + static_cast<size_t>(co) * plen + pad);
      detail::conv1d_item(dst, cout_, plen, wt_.data(), static_cast<const T*>(nullptr), cin_, k_,
                          this->dx_.data() + bi * xi);
    }
    return this->dx_;
  }

  void collect_params(std::vector<Tensor<T>*>& out) override {
    out.push_back(&W);
    out.push_back(&b);
  }
  LayerSpec spec() const override { return LayerSpec::Conv1d(cout_, k_); }
  std::string describe() const override {
    return "conv1d k=" + std::to_string(k_) + " f=" + std::to_string(cout_) + " (" +
           std::to_string(cin_) + "x" + std::to_string(len_) + " -> " + std::to_string(cout_) +
           "x" + std::to_string(lo_) + ")";
  }

  int cin_, len_, cout_, k_, lo_;
  Tensor<T> W, b;

 private:
  const T* x_ = nullptr;  // forward input; the caller keeps it alive
  std::vector<T> wt_;     // transposed, tap-flipped weights for dx
  std::vector<T> dyp_;    // zero-padded upstream gradient
};

template <typename T>
class MaxPool1dLayer : public Layer<T> {
 public:
  MaxPool1dLayer(int c, int len, int k) : c_(c), len_(len), k_(k), lo_(len / k) {
    if (len < k) throw Error(ErrorCode::shape, "maxpool input shorter than pool window");
  }

  const std::vector<T>& forward(const std::vector<T>& x, int B, Ctx<T>&) override {
    const size_t rows = static_cast<size_t>(B) * c_;
    this->y_.resize(rows * lo_);
    argmax_.resize(rows * lo_);
    for (size_t r = 0; r < rows; ++r) {
      const T* xr = x.data() + r * len_;
      T* yr = this->y_.data() + r * lo_;
      int* ar = argmax_.data() + r * lo_;
      for (int l = 0; l < lo_; ++l) {
        int best = l * k_;
        T m = xr[best];
        for (int j = 1; j < k_; ++j)
          if (xr[l * k_ + j] > m) {  // strict: ties keep the first index
            m = xr[l * k_ + j];
            best = l * k_ + j;
          }
        yr[l] = m;
        ar[l] = best;
      }
    }
    return this->y_;
  }

  const std::vector<T>& backward(const std::vector<T>& dy, int B, bool need_dx) override {
    if (!need_dx) {
      this->dx_.clear();
      return this->dx_;
    }
    const size_t rows = static_cast<size_t>(B) * c_;
    this->dx_.assign(rows * len_, T(0));
    for (size_t r = 0; r < rows; ++r)
      for (int l = 0; l < lo_; ++l)
        this->dx_[r * len_ + argmax_[r * lo_ + l]] += dy[r * lo_ + l];
    return this->dx_;
  }

  LayerSpec spec() const override { return LayerSpec::MaxPool1d(k_); }
  std::string describe() const override { return "maxpool k=" + std::to_string(k_); }

  int c_, len_, k_, lo_;

 private:
  std::vector<int> argmax_;
};

namespace detail {

// Branchless forms; a data-dependent branch mispredicts half the time on
// zero-centered activations.
template <typename T>
inline void leaky_fwd(const T* __restrict x, T* __restrict y, size_t n, T a) {
  for (size_t i = 0; i < n; ++i) y[i] = std::max(x[i], T(0)) + a * std::min(x[i], T(0));
}

// With alpha > 0 the output sign matches the input sign, so the saved output
// doubles as the backward mask (slope 1 at exactly 0).
template <typename T>
inline void leaky_bwd(const T* __restrict y, const T* __restrict dy, T* __restrict dx, size_t n,
                      T a) {
  for (size_t i = 0; i < n; ++i) dx[i] = y[i] >= T(0) ? dy[i] : a * dy[i];
}

#if defined(__AVX2__) && defined(__FMA__)
template <>
inline void leaky_bwd<float>(const float* __restrict y, const float* __restrict dy,
                             float* __restrict dx, size_t n, float a) {
  const __m256 va = _mm256_set1_ps(a);
  const __m256 zero = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vy = _mm256_loadu_ps(y + i);
    const __m256 vdy = _mm256_loadu_ps(dy + i);
    const __m256 mask = _mm256_cmp_ps(vy, zero, _CMP_GE_OQ);
    _mm256_storeu_ps(dx + i, _mm256_blendv_ps(_mm256_mul_ps(vdy, va), vdy, mask));
  }
  for (; i < n; ++i) dx[i] = y[i] >= 0.0f ? dy[i] : a * dy[i];
}
#endif

}  // namespace detail

template <typename T>
class LeakyReluLayer : public Layer<T> {
 public:
  explicit LeakyReluLayer(T alpha) : alpha_(alpha) {}

  const std::vector<T>& forward(const std::vector<T>& x, int, Ctx<T>&) override {
    this->y_.resize(x.size());
    detail::leaky_fwd(x.data(), this->y_.data(), x.size(), alpha_);
    return this->y_;
  }

  const std::vector<T>& backward(const std::vector<T>& dy, int, bool need_dx) override {
    if (!need_dx) {
      this->dx_.clear();
      return this->dx_;
    }
    this->dx_.resize(dy.size());
    detail::leaky_bwd(this->y_.data(), dy.data(), this->dx_.data(), dy.size(), alpha_);
    return this->dx_;
  }

  LayerSpec spec() const override { return LayerSpec::LeakyRelu(static_cast<double>(alpha_)); }
  std::string describe() const override { return "leaky_relu"; }

 private:
  T alpha_;
};

template <typename T>
class DropoutLayer : public Layer<T> {
 public:
  explicit DropoutLayer(T p) : p_(p) {
    if (p < T(0) || p >= T(1)) throw Error(ErrorCode::precondition, "dropout p must be in [0,1)");
  }

  const std::vector<T>& forward(const std::vector<T>& x, int, Ctx<T>& ctx) override {
    if (ctx.mode == Mode::eval || p_ == T(0)) {
      this->y_ = x;
      active_ = false;
      return this->y_;
    }
    active_ = true;
    const T scale = T(1) / (T(1) - p_);
    const bool reuse = ctx.freeze_dropout && mask_.size() == x.size() && frozen_;
    if (!reuse) {
      if (!ctx.rng) throw Error(ErrorCode::precondition, "dropout in train mode needs an rng");
      mask_.resize(x.size());
      for (size_t i = 0; i < x.size(); ++i)
        mask_[i] = (static_cast<T>(ctx.rng->uniform()) >= p_) ? scale : T(0);
      frozen_ = ctx.freeze_dropout;
    }
    this->y_.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) this->y_[i] = x[i] * mask_[i];
    return this->y_;
  }

  const std::vector<T>& backward(const std::vector<T>& dy, int, bool need_dx) override {
    if (!need_dx) {
      this->dx_.clear();
      return this->dx_;
    }
    if (!active_) {
      this->dx_ = dy;
      return this->dx_;
    }
    this->dx_.resize(dy.size());
    for (size_t i = 0; i < dy.size(); ++i) this->dx_[i] = dy[i] * mask_[i];
    return this->dx_;
  }

  LayerSpec spec() const override { return LayerSpec::Dropout(static_cast<double>(p_)); }
  std::string describe() const override { return "dropout"; }

 private:
  T p_;
  bool active_ = false;
  bool frozen_ = false;
  std::vector<T> mask_;
};

// Shape-only: [C, L] -> [C*L]; buffers are already contiguous.
template <typename T>
class FlattenLayer : public Layer<T> {
 public:
  const std::vector<T>& forward(const std::vector<T>& x, int, Ctx<T>&) override {
    this->y_ = x;
    return this->y_;
  }
  const std::vector<T>& backward(const std::vector<T>& dy, int, bool need_dx) override {
    this->dx_.clear();
    if (need_dx) this->dx_ = dy;
    return this->dx_;
  }
  LayerSpec spec() const override { return LayerSpec::Flatten(); }
  std::string describe() const override { return "flatten"; }
};

template <typename T>
class TanhLayer : public Layer<T> {
 public:
  const std::vector<T>& forward(const std::vector<T>& x, int, Ctx<T>&) override {
    this->y_.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) this->y_[i] = std::tanh(x[i]);
    return this->y_;
  }
  const std::vector<T>& backward(const std::vector<T>& dy, int, bool need_dx) override {
    if (!need_dx) {
      this->dx_.clear();
      return this->dx_;
    }
    this->dx_.resize(dy.size());
    for (size_t i = 0; i < dy.size(); ++i)
      this->dx_[i] = dy[i] * (T(1) - this->y_[i] * this->y_[i]);
    return this->dx_;
  }
  LayerSpec spec() const override { return LayerSpec::Tanh(); }
  std::string describe() const override { return "tanh"; }
};

template <typename T>
class SigmoidLayer : public Layer<T> {
 public:
  const std::vector<T>& forward(const std::vector<T>& x, int, Ctx<T>&) override {
    this->y_.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) this->y_[i] = T(1) / (T(1) + std::exp(-x[i]));
    return this->y_;
  }
  const std::vector<T>& backward(const std::vector<T>& dy, int, bool need_dx) override {
    if (!need_dx) {
      this->dx_.clear();
      return this->dx_;
    }
    this->dx_.resize(dy.size());
    for (size_t i = 0; i < dy.size(); ++i)
      this->dx_[i] = dy[i] * this->y_[i] * (T(1) - this->y_[i]);
    return this->dx_;
  }
  LayerSpec spec() const override { return LayerSpec::Sigmoid(); }
  std::string describe() const override { return "sigmoid"; }
};

// Row-wise softmax over the last dimension.
template <typename T>
class SoftmaxLayer : public Layer<T> {
 public:
  explicit SoftmaxLayer(int dim) : dim_(dim) {}

  const std::vector<T>& forward(const std::vector<T>& x, int B, Ctx<T>&) override {
    this->y_.resize(x.size());
    for (int bi = 0; bi < B; ++bi) {
      const T* xr = x.data() + static_cast<size_t>(bi) * dim_;
      T* yr = this->y_.data() + static_cast<size_t>(bi) * dim_;
      T m = xr[0];
      for (int i = 1; i < dim_; ++i) m = std::max(m, xr[i]);
      T s = 0;
      for (int i = 0; i < dim_; ++i) s += (yr[i] = std::exp(xr[i] - m));
      for (int i = 0; i < dim_; ++i) yr[i] /= s;
    }
    return this->y_;
  }

  const std::vector<T>& backward(const std::vector<T>& dy, int B, bool need_dx) override {
    if (!need_dx) {
      this->dx_.clear();
      return this->dx_;
    }
    this->dx_.resize(dy.size());
    for (int bi = 0; bi < B; ++bi) {
      const T* dyr = dy.data() + static_cast<size_t>(bi) * dim_;
      const T* yr = this->y_.data() + static_cast<size_t>(bi) * dim_;
      T dot = 0;
      for (int i = 0; i < dim_; ++i) dot += dyr[i] * yr[i];
      T* dxr = this->dx_.data() + static_cast<size_t>(bi) * dim_;
      for (int i = 0; i < dim_; ++i) dxr[i] = yr[i] * (dyr[i] - dot);
    }
    return this->dx_;
  }

  LayerSpec spec() const override { return LayerSpec::Softmax(); }
  std::string describe() const override { return "softmax"; }

 private:
  int dim_;
};

// A sequential stack with static per-item shapes resolved at build time.
template <typename T>
class LayerStack {
 public:
  LayerStack() = default;

  // Builds the stack from specs, propagating item shapes from `input`.
  // Dense layers with in == 0 take the current flat size.
  static LayerStack build(const std::vector<LayerSpec>& specs, ItemShape input) {
    LayerStack s;
    ItemShape cur = input;
    for (const LayerSpec& sp : specs) {
      std::unique_ptr<Layer<T>> layer;
      ItemShape next = cur;
      switch (sp.kind) {
        case LayerKind::dense: {
          if (cur.channels != 0)
            throw Error(ErrorCode::shape, "dense layer needs a flat input; add flatten first");
          const int in = sp.in ? sp.in : cur.length;
          if (in != cur.length) throw Error(ErrorCode::shape, "dense input size mismatch");
          layer = std::make_unique<DenseLayer<T>>(in, sp.out);
          next = ItemShape::Flat(sp.out);
          break;
        }
        case LayerKind::conv1d: {
          if (cur.channels == 0) throw Error(ErrorCode::shape, "conv1d needs [C,L] input");
          layer = std::make_unique<Conv1dLayer<T>>(cur.channels, cur.length, sp.filters, sp.kernel);
          next = ItemShape::Grid(sp.filters, cur.length - sp.kernel + 1);
          break;
        }
        case LayerKind::maxpool1d: {
          if (cur.channels == 0) throw Error(ErrorCode::shape, "maxpool1d needs [C,L] input");
          layer = std::make_unique<MaxPool1dLayer<T>>(cur.channels, cur.length, sp.pool);
          next = ItemShape::Grid(cur.channels, cur.length / sp.pool);
          break;
        }
        case LayerKind::leaky_relu:
          layer = std::make_unique<LeakyReluLayer<T>>(static_cast<T>(sp.alpha));
          break;
        case LayerKind::dropout:
          layer = std::make_unique<DropoutLayer<T>>(static_cast<T>(sp.p));
          break;
        case LayerKind::flatten:
          layer = std::make_unique<FlattenLayer<T>>();
          next = ItemShape::Flat(static_cast<int>(cur.count()));
          break;
        case LayerKind::softmax:
          if (cur.channels != 0) throw Error(ErrorCode::shape, "softmax needs a flat input");
          layer = std::make_unique<SoftmaxLayer<T>>(cur.length);
          break;
        case LayerKind::tanh_act:
          layer = std::make_unique<TanhLayer<T>>();
          break;
        case LayerKind::sigmoid:
          layer = std::make_unique<SigmoidLayer<T>>();
          break;
      }
      layer->in_shape = cur;
      layer->out_shape = next;
      cur = next;
      s.layers_.push_back(std::move(layer));
    }
    s.input_shape_ = input;
    s.output_shape_ = cur;
    return s;
  }

  // Forward for B items; the caller must keep x alive until backward is done.
  // The returned reference is owned by the last layer.
  const std::vector<T>& forward(const std::vector<T>& x, int B, Ctx<T>& ctx) {
    const std::vector<T>* cur = &x;
    for (auto& l : layers_) cur = &l->forward(*cur, B, ctx);
    return *cur;
  }

  // Backward for B items; returns the gradient wrt the stack input (owned by
  // the first layer), or an empty vector when need_input_grad is false.
  const std::vector<T>& backward(const std::vector<T>& dy, int B, bool need_input_grad) {
    const std::vector<T>* cur = &dy;
    for (size_t i = layers_.size(); i-- > 0;) {
      const bool need = i > 0 || need_input_grad;
      cur = &layers_[i]->backward(*cur, B, need);
    }
    return *cur;
  }

  std::vector<Tensor<T>*> params() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_) l->collect_params(out);
    return out;
  }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (auto& l : layers_) out.push_back(l->spec());
    return out;
  }

  const std::vector<std::unique_ptr<Layer<T>>>& layers() const { return layers_; }
  ItemShape input_shape() const { return input_shape_; }
  ItemShape output_shape() const { return output_shape_; }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  ItemShape input_shape_, output_shape_;
};

// Glorot-uniform init for dense/conv weights; biases stay zero.
template <typename T>
void init_params(LayerStack<T>& stack, Rng& rng) {
  for (auto& l : stack.layers()) {
    if (auto* d = dynamic_cast<DenseLayer<T>*>(l.get())) {
      const double bound = std::sqrt(6.0 / (d->in_ + d->out_));
      for (auto& w : d->W.data) w = static_cast<T>(rng.uniform(-bound, bound));
    } else if (auto* c = dynamic_cast<Conv1dLayer<T>*>(l.get())) {
      const double fan_in = static_cast<double>(c->cin_) * c->k_;
      const double fan_out = static_cast<double>(c->cout_) * c->k_;
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& w : c->W.data) w = static_cast<T>(rng.uniform(-bound, bound));
    }
  }
}

// --- gradient checking ----------------------------------------------------------

// Compares reverse-mode gradients against central finite differences on a
// random subset of each parameter tensor. `grad_fn` must zero grads, run
// forward + backward and leave gradients in the tensors; `loss_fn` must run a
// side-effect-free forward pass and return the loss.
template <typename T>
double grad_check(const std::vector<Tensor<T>*>& params, const std::function<T()>& loss_fn,
                  const std::function<void()>& grad_fn, int samples_per_tensor, T h, Rng& rng) {
  grad_fn();
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>* p = params[pi];
    const size_t n = p->size();
    if (n == 0) continue;
    const int samples = static_cast<int>(std::min<size_t>(samples_per_tensor, n));
    for (int s = 0; s < samples; ++s) {
      const size_t idx = static_cast<size_t>(rng.below(n));
      const T saved = p->data[idx];
      p->data[idx] = saved + h;
      const double lp = static_cast<double>(loss_fn());
      p->data[idx] = saved - h;
      const double lm = static_cast<double>(loss_fn());
      p->data[idx] = saved;
      const double fd = (lp - lm) / (2.0 * static_cast<double>(h));
      const double an = static_cast<double>(analytic[pi][idx]);
      if (std::fabs(fd) < 1e-10 && std::fabs(an) < 1e-10) continue;
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
      worst = std::max(worst, std::fabs(fd - an) / denom);
    }
  }
  return worst;
}

// Trainable parameter accounting, used by the CLI and the acceptance checks.
template <typename T>
size_t param_count(const std::vector<Tensor<T>*>& params) {
  size_t n = 0;
  for (auto* p : params) n += p->size();
  return n;
}

}  // namespace miltremor::nn
