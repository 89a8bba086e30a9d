#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace omnigf::kern {

// Numeric kernels shared by the autodiff forward pass and the incremental
// (KV-cached) inference path. Every kernel computes output row i from the
// inputs of row i alone (plus earlier rows, for causal attention), with a
// fixed inner accumulation order. That makes a token's hidden state
// bit-identical whether it is computed inside a full-sequence forward or one
// step at a time.

// C[m x n] += A[m x k] * B[k x n], row-major.
template <class T>
inline void matmul_acc(const T* A, int m, int k, const T* B, int n, T* C) {
  for (int i = 0; i < m; ++i) {
    const T* a = A + static_cast<std::int64_t>(i) * k;
    T* c = C + static_cast<std::int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = a[p];
      const T* b = B + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m x n] += A^T[k x m]^T * B ... i.e. A is stored [k x m], used as [m x k].
template <class T>
inline void matmul_tn_acc(const T* A, int k, int m, const T* B, int n, T* C) {
  for (int p = 0; p < k; ++p) {
    const T* a = A + static_cast<std::int64_t>(p) * m;
    const T* b = B + static_cast<std::int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = a[i];
      T* c = C + static_cast<std::int64_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T where B is stored [n x k].
template <class T>
inline void matmul_nt_acc(const T* A, int m, int k, const T* B, int n, T* C) {
  for (int i = 0; i < m; ++i) {
    const T* a = A + static_cast<std::int64_t>(i) * k;
    T* c = C + static_cast<std::int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* b = B + static_cast<std::int64_t>(j) * k;
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += a[p] * b[p];
      c[j] += acc;
    }
  }
}

template <class T>
inline void add_bias_rows(T* X, int m, int n, const T* bias) {
  for (int i = 0; i < m; ++i) {
    T* x = X + static_cast<std::int64_t>(i) * n;
    for (int j = 0; j < n; ++j) x[j] += bias[j];
  }
}

template <class T>
inline T dot(const T* a, const T* b, int n) {
  T acc = 0;
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
inline void axpy(T alpha, const T* x, T* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// LayerNorm over one row. gamma/beta may be null (identity affine).
template <class T>
inline void layer_norm_row(const T* x, int n, const T* gamma, const T* beta, T eps, T* out) {
  T mean = 0;
  for (int j = 0; j < n; ++j) mean += x[j];
  mean /= static_cast<T>(n);
  T var = 0;
  for (int j = 0; j < n; ++j) {
    const T d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<T>(n);
  const T inv = T(1) / std::sqrt(var + eps);
  for (int j = 0; j < n; ++j) {
    T v = (x[j] - mean) * inv;
    if (gamma) v *= gamma[j];
    if (beta) v += beta[j];
    out[j] = v;
  }
}

template <class T>
inline T gelu_scalar(T x) {
  // Exact erf form.
  return x * T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
}

template <class T>
inline T gelu_grad_scalar(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
  const T pdf = T(0.3989422804014326779) * std::exp(T(-0.5) * x * x);
  return cdf + x * pdf;
}

template <class T>
inline T sigmoid_scalar(T x) {
  if (x >= 0) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Rotary position embedding applied to one row of projected q or k. Pairs
// (2i, 2i+1) within each head rotate by pos * 10000^(-2i/head_dim).
template <class T>
inline void rope_row(const T* in, int pos, int n_heads, int head_dim, T* out) {
  for (int h = 0; h < n_heads; ++h) {
    const int off = h * head_dim;
    for (int i = 0; i < head_dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / head_dim);
      const double angle = pos * freq;
      const T c = static_cast<T>(std::cos(angle));
      const T s = static_cast<T>(std::sin(angle));
      const T x = in[off + 2 * i];
      const T y = in[off + 2 * i + 1];
      out[off + 2 * i] = x * c - y * s;
      out[off + 2 * i + 1] = x * s + y * c;
    }
  }
}

// Inverse rotation (used by the backward pass; the map is orthogonal).
template <class T>
inline void rope_row_inverse(const T* in, int pos, int n_heads, int head_dim, T* out) {
  for (int h = 0; h < n_heads; ++h) {
    const int off = h * head_dim;
    for (int i = 0; i < head_dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / head_dim);
      const double angle = pos * freq;
      const T c = static_cast<T>(std::cos(angle));
      const T s = static_cast<T>(std::sin(angle));
      const T x = in[off + 2 * i];
      const T y = in[off + 2 * i + 1];
      out[off + 2 * i] = x * c + y * s;
      out[off + 2 * i + 1] = -x * s + y * c;
    }
  }
}

// One query row of causal multi-head attention against t_count cached
// key/value rows (the query row itself is row t_count-1). Heads live in
// contiguous column blocks of width head_dim. probs, when non-null, receives
// the softmax weights; head h, key t goes to probs[h * probs_stride + t].
template <class T>
inline void attn_row(const T* q_row, const T* K, const T* V, int t_count, int n_heads,
                     int head_dim, T* out_row, T* probs, std::int64_t probs_stride,
                     T* scratch) {
  const int dmodel = n_heads * head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  for (int h = 0; h < n_heads; ++h) {
    const int off = h * head_dim;
    T* s = scratch;
    T mx = -std::numeric_limits<T>::infinity();
    for (int t = 0; t < t_count; ++t) {
      const T sc = dot(q_row + off, K + static_cast<std::int64_t>(t) * dmodel + off, head_dim) * scale;
      s[t] = sc;
      if (sc > mx) mx = sc;
    }
    T denom = 0;
    for (int t = 0; t < t_count; ++t) {
      s[t] = std::exp(s[t] - mx);
      denom += s[t];
    }
    const T inv = T(1) / denom;
    T* o = out_row + off;
    for (int j = 0; j < head_dim; ++j) o[j] = 0;
    for (int t = 0; t < t_count; ++t) {
      const T w = s[t] * inv;
      if (probs) probs[static_cast<std::int64_t>(h) * probs_stride + t] = w;
      axpy(w, V + static_cast<std::int64_t>(t) * dmodel + off, o, head_dim);
    }
  }
}

}  // namespace omnigf::kern
