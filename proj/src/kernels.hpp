#pragma once

// Dense kernels shared by the batched forward pass and the incremental
// decoder. Every output element is accumulated in ascending reduction order
// starting from zero (or the existing value when accumulating) using explicit
// fma, so the 4-row tile path and the single-row path round identically.

#include <algorithm>
#include <cmath>
#include <vector>

namespace flowcot::kernels {

template <class T>
inline constexpr int kTileCols = 128 / static_cast<int>(sizeof(T));

// C[M,N] = (accumulate ? C : 0) + A[M,K] * B[K,N] (+ bias[N]).
template <class T>
void matmul(const T* A, const T* B, const T* bias, T* C, int M, int K, int N, bool accumulate = false) {
  constexpr int W = kTileCols<T>;
  for (int j0 = 0; j0 < N; j0 += W) {
    const int w = std::min(W, N - j0);
    int i = 0;
    if (w == W) {
      for (; i + 4 <= M; i += 4) {
        T c0[W], c1[W], c2[W], c3[W];
        T* out = C + static_cast<std::size_t>(i) * N + j0;
        for (int j = 0; j < W; ++j) {
          c0[j] = accumulate ? out[j] : T(0);
          c1[j] = accumulate ? out[N + j] : T(0);
          c2[j] = accumulate ? out[2 * N + j] : T(0);
          c3[j] = accumulate ? out[3 * N + j] : T(0);
        }
        const T* a = A + static_cast<std::size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
          const T* b = B + static_cast<std::size_t>(k) * N + j0;
          const T x0 = a[k], x1 = a[K + k], x2 = a[2 * K + k], x3 = a[3 * K + k];
#pragma GCC unroll 32
          for (int j = 0; j < W; ++j) {
            c0[j] = std::fma(x0, b[j], c0[j]);
            c1[j] = std::fma(x1, b[j], c1[j]);
            c2[j] = std::fma(x2, b[j], c2[j]);
            c3[j] = std::fma(x3, b[j], c3[j]);
          }
        }
        for (int j = 0; j < W; ++j) {
          const T bj = bias ? bias[j0 + j] : T(0);
          out[j] = bias ? c0[j] + bj : c0[j];
          out[N + j] = bias ? c1[j] + bj : c1[j];
          out[2 * N + j] = bias ? c2[j] + bj : c2[j];
          out[3 * N + j] = bias ? c3[j] + bj : c3[j];
        }
      }
    }
    for (; i < M; ++i) {
      T c[W];
      T* out = C + static_cast<std::size_t>(i) * N + j0;
      for (int j = 0; j < w; ++j) c[j] = accumulate ? out[j] : T(0);
      const T* a = A + static_cast<std::size_t>(i) * K;
      for (int k = 0; k < K; ++k) {
        const T* b = B + static_cast<std::size_t>(k) * N + j0;
        const T x = a[k];
        for (int j = 0; j < w; ++j) c[j] = std::fma(x, b[j], c[j]);
      }
      for (int j = 0; j < w; ++j) out[j] = bias ? c[j] + bias[j0 + j] : c[j];
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]  (weight gradients).
template <class T>
void matmul_tn_acc(const T* A, const T* B, T* C, int M, int K, int N) {
  constexpr int W = kTileCols<T>;
  for (int j0 = 0; j0 < N; j0 += W) {
    const int w = std::min(W, N - j0);
    int k = 0;
    if (w == W) {
      for (; k + 4 <= K; k += 4) {
        T c0[W], c1[W], c2[W], c3[W];
        T* out = C + static_cast<std::size_t>(k) * N + j0;
        for (int j = 0; j < W; ++j) {
          c0[j] = out[j];
          c1[j] = out[N + j];
          c2[j] = out[2 * N + j];
          c3[j] = out[3 * N + j];
        }
        for (int i = 0; i < M; ++i) {
          const T* a = A + static_cast<std::size_t>(i) * K + k;
          const T* b = B + static_cast<std::size_t>(i) * N + j0;
          const T x0 = a[0], x1 = a[1], x2 = a[2], x3 = a[3];
#pragma GCC unroll 32
          for (int j = 0; j < W; ++j) {
            c0[j] = std::fma(x0, b[j], c0[j]);
            c1[j] = std::fma(x1, b[j], c1[j]);
            c2[j] = std::fma(x2, b[j], c2[j]);
            c3[j] = std::fma(x3, b[j], c3[j]);
          }
        }
        for (int j = 0; j < W; ++j) {
          out[j] = c0[j];
          out[N + j] = c1[j];
          out[2 * N + j] = c2[j];
          out[3 * N + j] = c3[j];
        }
      }
    }
    for (; k < K; ++k) {
      T c[W];
      T* out = C + static_cast<std::size_t>(k) * N + j0;
      for (int j = 0; j < w; ++j) c[j] = out[j];
      for (int i = 0; i < M; ++i) {
        const T x = A[static_cast<std::size_t>(i) * K + k];
        const T* b = B + static_cast<std::size_t>(i) * N + j0;
        for (int j = 0; j < w; ++j) c[j] = std::fma(x, b[j], c[j]);
      }
      for (int j = 0; j < w; ++j) out[j] = c[j];
    }
  }
}

template <class T>
void transpose(const T* A, T* At, int rows, int cols) {
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) At[static_cast<std::size_t>(c) * rows + r] = A[static_cast<std::size_t>(r) * cols + c];
}

// C[M,K] = (accumulate ? C : 0) + A[M,N] * B[K,N]^T.
template <class T>
void matmul_nt(const T* A, const T* B, T* C, int M, int N, int K, std::vector<T>& scratch,
               bool accumulate = false) {
  scratch.resize(static_cast<std::size_t>(K) * N);
  transpose(B, scratch.data(), K, N);
  matmul(A, scratch.data(), static_cast<const T*>(nullptr), C, M, N, K, accumulate);
}

// Pre-norm layer normalization of one row; returns (mean, rstd) for backward.
template <class T>
void layernorm_row(const T* x, const T* g, const T* b, T* xhat, T* y, int d, T& mean_out, T& rstd_out) {
  constexpr T kEps = T(1e-5);
  T sum = 0;
  for (int c = 0; c < d; ++c) sum += x[c];
  const T mean = sum / T(d);
  T var = 0;
  for (int c = 0; c < d; ++c) {
    const T diff = x[c] - mean;
    var += diff * diff;
  }
  var /= T(d);
  const T rstd = T(1) / std::sqrt(var + kEps);
  for (int c = 0; c < d; ++c) {
    xhat[c] = (x[c] - mean) * rstd;
    y[c] = xhat[c] * g[c] + b[c];
  }
  mean_out = mean;
  rstd_out = rstd;
}

// libm tanh is several times slower than exp.
template <class T>
inline T tanh_via_exp(T u) {
  return T(1) - T(2) / (std::exp(T(2) * u) + T(1));
}

template <class T>
inline T gelu(T x) {
  constexpr T kA = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kB = T(0.044715);
  return T(0.5) * x * (T(1) + tanh_via_exp(kA * (x + kB * x * x * x)));
}

template <class T>
inline T gelu_grad(T x) {
  constexpr T kA = T(0.7978845608028654);
  constexpr T kB = T(0.044715);
  const T inner = kA * (x + kB * x * x * x);
  const T t = tanh_via_exp(inner);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * kA * (T(1) + T(3) * kB * x * x);
}

// One causal attention row for one head.
//   q:    [hd]
//   kt:   key cache transposed, element (c, j) at kt[c * kt_ld + j]
//   v:    values, element (j, c) at v[j * v_ld + c]
//   p:    [len] scratch, receives the softmax probabilities
//   out:  [hd]
template <class T>
void attend_row(const T* q, const T* kt, int kt_ld, const T* v, int v_ld, int len, int hd, T scale,
                T* p, T* out) {
  for (int j = 0; j < len; ++j) p[j] = T(0);
  for (int c = 0; c < hd; ++c) {
    const T qc = q[c];
    const T* krow = kt + static_cast<std::size_t>(c) * kt_ld;
    for (int j = 0; j < len; ++j) p[j] = std::fma(qc, krow[j], p[j]);
  }
  T mx = p[0] * scale;
  for (int j = 0; j < len; ++j) {
    p[j] = p[j] * scale;
    mx = std::max(mx, p[j]);
  }
  T sum = 0;
  for (int j = 0; j < len; ++j) {
    p[j] = std::exp(p[j] - mx);
    sum += p[j];
  }
  for (int j = 0; j < len; ++j) p[j] = p[j] / sum;
  for (int c = 0; c < hd; ++c) out[c] = T(0);
  for (int j = 0; j < len; ++j) {
    const T pj = p[j];
    const T* vrow = v + static_cast<std::size_t>(j) * v_ld;
    for (int c = 0; c < hd; ++c) out[c] = std::fma(pj, vrow[c], out[c]);
  }
}

}  // namespace flowcot::kernels
