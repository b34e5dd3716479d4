#pragma once

#include <cblas.h>

// Thin row-major GEMM dispatch so the templated kernels can stay generic.

namespace cdcn::detail {

// C[m,n] = alpha * A[m,k] @ B[k,n] + beta * C
inline void gemm_nn(int m, int n, int k, float alpha, const float* a, const float* b,
                    float beta, float* c) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, alpha, a, k, b, n, beta, c, n);
}
inline void gemm_nn(int m, int n, int k, double alpha, const double* a, const double* b,
                    double beta, double* c) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, alpha, a, k, b, n, beta, c, n);
}

// C[m,n] = alpha * A[m,k] @ B[n,k]^T + beta * C
inline void gemm_nt(int m, int n, int k, float alpha, const float* a, const float* b,
                    float beta, float* c) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, n, k, alpha, a, k, b, k, beta, c, n);
}
inline void gemm_nt(int m, int n, int k, double alpha, const double* a, const double* b,
                    double beta, double* c) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, n, k, alpha, a, k, b, k, beta, c, n);
}

// C[m,n] = alpha * A[k,m]^T @ B[k,n] + beta * C
inline void gemm_tn(int m, int n, int k, float alpha, const float* a, const float* b,
                    float beta, float* c) {
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, m, n, k, alpha, a, m, b, n, beta, c, n);
}
inline void gemm_tn(int m, int n, int k, double alpha, const double* a, const double* b,
                    double beta, double* c) {
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, m, n, k, alpha, a, m, b, n, beta, c, n);
}

}  // namespace cdcn::detail
