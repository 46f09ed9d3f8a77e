#ifndef WAVEGEN_BLAS_HPP
#define WAVEGEN_BLAS_HPP

#include <cblas.h>

namespace wavegen {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
// M, N, K are the dimensions after transposition; ld* are storage strides.
inline void blas_gemm(bool tA, bool tB, long M, long N, long K, float alpha, const float* A,
                      long lda, const float* B, long ldb, float beta, float* C, long ldc) {
  cblas_sgemm(CblasRowMajor, tA ? CblasTrans : CblasNoTrans, tB ? CblasTrans : CblasNoTrans,
              (int)M, (int)N, (int)K, alpha, A, (int)lda, B, (int)ldb, beta, C, (int)ldc);
}

inline void blas_gemm(bool tA, bool tB, long M, long N, long K, double alpha, const double* A,
                      long lda, const double* B, long ldb, double beta, double* C, long ldc) {
  cblas_dgemm(CblasRowMajor, tA ? CblasTrans : CblasNoTrans, tB ? CblasTrans : CblasNoTrans,
              (int)M, (int)N, (int)K, alpha, A, (int)lda, B, (int)ldb, beta, C, (int)ldc);
}

}  // namespace wavegen

#endif
