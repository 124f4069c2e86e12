#pragma once

#include <cstdint>

#include "voxalign/common.hpp"

#ifndef VOXALIGN_NO_BLAS
extern "C" {
void cblas_sgemm(int order, int transA, int transB, int m, int n, int k,
                 float alpha, const float* A, int lda, const float* B, int ldb,
                 float beta, float* C, int ldc);
void cblas_dgemm(int order, int transA, int transB, int m, int n, int k,
                 double alpha, const double* A, int lda, const double* B,
                 int ldb, double beta, double* C, int ldc);
// Weak so the header still links against BLAS builds that lack the symbol.
void openblas_set_num_threads(int) __attribute__((weak));
}
#endif

namespace voxalign::detail {

#ifndef VOXALIGN_NO_BLAS
inline void pin_blas_threads() {
  static const bool done = [] {
    if (openblas_set_num_threads) openblas_set_num_threads(1);
    return true;
  }();
  (void)done;
}
#endif

// C = alpha * op(A) * op(B) + beta * C, row major.
// op(A) is m x k, op(B) is k x n, C is m x n.
template <class T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha,
          const T* A, const T* B, T beta, T* C) {
  const int64_t lda = trans_a ? m : k;
  const int64_t ldb = trans_b ? k : n;
  if (beta == T(0)) {
    for (int64_t i = 0; i < m * n; ++i) C[i] = T(0);
  } else if (beta != T(1)) {
    for (int64_t i = 0; i < m * n; ++i) C[i] *= beta;
  }
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      const T a = alpha * (trans_a ? A[p * lda + i] : A[i * lda + p]);
      if (a == T(0)) continue;
      const T* brow = trans_b ? nullptr : B + p * ldb;
      T* crow = C + i * n;
      if (trans_b) {
        for (int64_t j = 0; j < n; ++j) crow[j] += a * B[j * ldb + p];
      } else {
        for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
    }
  }
}

#ifndef VOXALIGN_NO_BLAS
// CblasRowMajor = 101, CblasNoTrans = 111, CblasTrans = 112.
template <>
inline void gemm<float>(bool trans_a, bool trans_b, int64_t m, int64_t n,
                        int64_t k, float alpha, const float* A, const float* B,
                        float beta, float* C) {
  pin_blas_threads();
  const int lda = static_cast<int>(trans_a ? m : k);
  const int ldb = static_cast<int>(trans_b ? k : n);
  cblas_sgemm(101, trans_a ? 112 : 111, trans_b ? 112 : 111,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k),
              alpha, A, lda, B, ldb, beta, C, static_cast<int>(n));
}

template <>
inline void gemm<double>(bool trans_a, bool trans_b, int64_t m, int64_t n,
                         int64_t k, double alpha, const double* A,
                         const double* B, double beta, double* C) {
  pin_blas_threads();
  const int lda = static_cast<int>(trans_a ? m : k);
  const int ldb = static_cast<int>(trans_b ? k : n);
  cblas_dgemm(101, trans_a ? 112 : 111, trans_b ? 112 : 111,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k),
              alpha, A, lda, B, ldb, beta, C, static_cast<int>(n));
}
#endif

}  // namespace voxalign::detail
