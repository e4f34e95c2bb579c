#pragma once

#include <cmath>
#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

// Dense kernels used by the autograd layer. Each kernel has an OpenMP
// version (namespace kern) and a straightforward serial reference
// (namespace kern::ref) kept for testing and benchmarking.

namespace dualpol::kern {

namespace ref {

// C = A[m,k] * B[k,n]
template <class T>
void gemm_nn(const T* A, const T* B, T* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += A[i * k + p] * B[p * n + j];
      C[i * n + j] = acc;
    }
}

// C += A[m,k] * B[n,k]^T
template <class T>
void gemm_nt_acc(const T* A, const T* B, T* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
      C[i * n + j] += acc;
    }
}

// C += A[k,m]^T * B[k,n]
template <class T>
void gemm_tn_acc(const T* A, const T* B, T* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += A[p * m + i] * B[p * n + j];
      C[i * n + j] += acc;
    }
}

template <class T>
void softmax_rows(const T* X, T* Y, int m, int n) {
  for (int i = 0; i < m; ++i) {
    const T* x = X + i * n;
    T* y = Y + i * n;
    T mx = x[0];
    for (int j = 1; j < n; ++j) mx = x[j] > mx ? x[j] : mx;
    T s = 0;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    T inv = T(1) / s;
    for (int j = 0; j < n; ++j) y[j] *= inv;
  }
}

template <class T>
void layernorm_rows(const T* X, T* Y, int m, int n, T eps) {
  for (int i = 0; i < m; ++i) {
    const T* x = X + i * n;
    T* y = Y + i * n;
    T mean = 0;
    for (int j = 0; j < n; ++j) mean += x[j];
    mean /= T(n);
    T var = 0;
    for (int j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= T(n);
    T inv = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) y[j] = (x[j] - mean) * inv;
  }
}

}  // namespace ref

// Row-parallel GEMM. Inner j-loop is contiguous in B and C so the
// compiler can vectorize it; k is blocked for locality.
template <class T>
void gemm_nn(const T* A, const T* B, T* C, int m, int k, int n) {
  constexpr int KB = 64;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    T* c = C + i * n;
    for (int j = 0; j < n; ++j) c[j] = 0;
    for (int p0 = 0; p0 < k; p0 += KB) {
      int p1 = p0 + KB < k ? p0 + KB : k;
      for (int p = p0; p < p1; ++p) {
        T a = A[i * k + p];
        const T* b = B + p * n;
        for (int j = 0; j < n; ++j) c[j] += a * b[j];
      }
    }
  }
}

template <class T>
void gemm_nt_acc(const T* A, const T* B, T* C, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const T* a = A + i * k;
    for (int j = 0; j < n; ++j) {
      const T* b = B + j * k;
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += a[p] * b[p];
      C[i * n + j] += acc;
    }
  }
}

template <class T>
void gemm_tn_acc(const T* A, const T* B, T* C, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    T* c = C + i * n;
    for (int p = 0; p < k; ++p) {
      T a = A[p * m + i];
      const T* b = B + p * n;
      for (int j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

template <class T>
void softmax_rows(const T* X, T* Y, int m, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const T* x = X + i * n;
    T* y = Y + i * n;
    T mx = x[0];
    for (int j = 1; j < n; ++j) mx = x[j] > mx ? x[j] : mx;
    T s = 0;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    T inv = T(1) / s;
    for (int j = 0; j < n; ++j) y[j] *= inv;
  }
}

template <class T>
void layernorm_rows(const T* X, T* Y, int m, int n, T eps) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) ref::layernorm_rows(X + i * n, Y + i * n, 1, n, eps);
}

// exact GELU and its derivative
template <class T>
inline T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475244)));
}

template <class T>
inline T gelu_grad(T x) {
  T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
  T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014326779);
  return cdf + x * pdf;
}

template <class T>
inline T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <class T>
inline T silu_grad(T x) {
  T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

}  // namespace dualpol::kern
