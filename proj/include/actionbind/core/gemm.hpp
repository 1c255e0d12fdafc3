#pragma once

#include <cstdint>
#include <vector>

namespace actionbind {

// Single-threaded dense kernels. Loops are arranged so the innermost runs
// over contiguous output/B columns and auto-vectorizes; k is unrolled by 4
// to amortize the C row load/store.

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn_acc(int64_t m, int64_t n, int64_t k, const T* __restrict__ a,
                 const T* __restrict__ b, T* __restrict__ c) {
  constexpr int64_t KU = 4;
  const int64_t k4 = k - k % KU;
  for (int64_t i = 0; i < m; ++i) {
    const T* __restrict__ ai = a + i * k;
    T* __restrict__ ci = c + i * n;
    int64_t p = 0;
    for (; p < k4; p += KU) {
      const T a0 = ai[p], a1 = ai[p + 1], a2 = ai[p + 2], a3 = ai[p + 3];
      const T* __restrict__ b0 = b + p * n;
      const T* __restrict__ b1 = b0 + n;
      const T* __restrict__ b2 = b1 + n;
      const T* __restrict__ b3 = b2 + n;
      for (int64_t j = 0; j < n; ++j) ci[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; p < k; ++p) {
      const T ap = ai[p];
      const T* __restrict__ bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += ap * bp[j];
    }
  }
}

// C[m,n] = A[m,k] * B[k,n]
template <typename T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  for (int64_t i = 0; i < m * n; ++i) c[i] = T(0);
  gemm_nn_acc(m, n, k, a, b, c);
}

// C[k,n] += A[m,k]^T * B[m,n]   (weight-gradient pattern)
template <typename T>
void gemm_tn_acc(int64_t m, int64_t n, int64_t k, const T* __restrict__ a,
                 const T* __restrict__ b, T* __restrict__ c) {
  for (int64_t i = 0; i < m; ++i) {
    const T* __restrict__ ai = a + i * k;
    const T* __restrict__ bi = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const T ap = ai[p];
      T* __restrict__ cp = c + p * n;
      for (int64_t j = 0; j < n; ++j) cp[j] += ap * bi[j];
    }
  }
}

// B[k,n] -> out[n,k]
template <typename T>
void transpose(int64_t k, int64_t n, const T* b, T* out) {
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * k + i] = b[i * n + j];
}

}  // namespace actionbind
