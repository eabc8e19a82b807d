#pragma once

#include <cstddef>
#include <cstring>

#include "bodyadapt/tensor.hpp"
#include "bodyadapt/threading.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define BODYADAPT_GEMM_AVX2 1
#endif

namespace bodyadapt {

// C[M x N] (+)= A . B with a generalized A access pattern:
//   A(i, k) = A[i * a_row_stride + k * a_k_stride]
// B is row-major [K x N] with leading dimension ldb, C row-major with ldc.
//
// a_row_stride / a_k_stride cover, without copies:
//   plain row-major A            (lda, 1)
//   transposed A (A^T . B)       (1, lda)
//   sliding conv windows         (channels, 1)
//
// Every C element is accumulated over k in ascending order by exactly one
// thread, so results are reproducible bit-for-bit regardless of thread
// count. SIMD runs across the j (column) axis only.
namespace gemm_detail {

inline void rows_scalar(int i0, int i1, int N, int K, const float* A, std::ptrdiff_t ars,
                        std::ptrdiff_t aks, const float* B, int ldb, float* C, int ldc,
                        bool accumulate) {
    for (int i = i0; i < i1; ++i) {
        float* c = C + static_cast<std::ptrdiff_t>(i) * ldc;
        if (!accumulate) std::memset(c, 0, sizeof(float) * static_cast<std::size_t>(N));
        const float* a = A + static_cast<std::ptrdiff_t>(i) * ars;
        for (int k = 0; k < K; ++k) {
            float aik = a[static_cast<std::ptrdiff_t>(k) * aks];
            const float* b = B + static_cast<std::ptrdiff_t>(k) * ldb;
            for (int j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

#ifdef BODYADAPT_GEMM_AVX2

// 2 rows x 32 columns register tile, k innermost.
inline void tile_2x32(const float* a0, const float* a1, std::ptrdiff_t aks, const float* B, int ldb,
                      float* c0, float* c1, int K, bool accumulate) {
    __m256 r00, r01, r02, r03, r10, r11, r12, r13;
    if (accumulate) {
        r00 = _mm256_loadu_ps(c0);
        r01 = _mm256_loadu_ps(c0 + 8);
        r02 = _mm256_loadu_ps(c0 + 16);
        r03 = _mm256_loadu_ps(c0 + 24);
        r10 = _mm256_loadu_ps(c1);
        r11 = _mm256_loadu_ps(c1 + 8);
        r12 = _mm256_loadu_ps(c1 + 16);
        r13 = _mm256_loadu_ps(c1 + 24);
    } else {
        r00 = r01 = r02 = r03 = r10 = r11 = r12 = r13 = _mm256_setzero_ps();
    }
    const float* b = B;
    for (int k = 0; k < K; ++k, b += ldb) {
        __m256 b0 = _mm256_loadu_ps(b);
        __m256 b1 = _mm256_loadu_ps(b + 8);
        __m256 b2 = _mm256_loadu_ps(b + 16);
        __m256 b3 = _mm256_loadu_ps(b + 24);
        __m256 va0 = _mm256_set1_ps(a0[static_cast<std::ptrdiff_t>(k) * aks]);
        __m256 va1 = _mm256_set1_ps(a1[static_cast<std::ptrdiff_t>(k) * aks]);
        r00 = _mm256_fmadd_ps(va0, b0, r00);
        r01 = _mm256_fmadd_ps(va0, b1, r01);
        r02 = _mm256_fmadd_ps(va0, b2, r02);
        r03 = _mm256_fmadd_ps(va0, b3, r03);
        r10 = _mm256_fmadd_ps(va1, b0, r10);
        r11 = _mm256_fmadd_ps(va1, b1, r11);
        r12 = _mm256_fmadd_ps(va1, b2, r12);
        r13 = _mm256_fmadd_ps(va1, b3, r13);
    }
    _mm256_storeu_ps(c0, r00);
    _mm256_storeu_ps(c0 + 8, r01);
    _mm256_storeu_ps(c0 + 16, r02);
    _mm256_storeu_ps(c0 + 24, r03);
    _mm256_storeu_ps(c1, r10);
    _mm256_storeu_ps(c1 + 8, r11);
    _mm256_storeu_ps(c1 + 16, r12);
    _mm256_storeu_ps(c1 + 24, r13);
}

inline void tile_1x32(const float* a0, std::ptrdiff_t aks, const float* B, int ldb, float* c0, int K,
                      bool accumulate) {
    __m256 r0, r1, r2, r3;
    if (accumulate) {
        r0 = _mm256_loadu_ps(c0);
        r1 = _mm256_loadu_ps(c0 + 8);
        r2 = _mm256_loadu_ps(c0 + 16);
        r3 = _mm256_loadu_ps(c0 + 24);
    } else {
        r0 = r1 = r2 = r3 = _mm256_setzero_ps();
    }
    const float* b = B;
    for (int k = 0; k < K; ++k, b += ldb) {
        __m256 va = _mm256_set1_ps(a0[static_cast<std::ptrdiff_t>(k) * aks]);
        r0 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b), r0);
        r1 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b + 8), r1);
        r2 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b + 16), r2);
        r3 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b + 24), r3);
    }
    _mm256_storeu_ps(c0, r0);
    _mm256_storeu_ps(c0 + 8, r1);
    _mm256_storeu_ps(c0 + 16, r2);
    _mm256_storeu_ps(c0 + 24, r3);
}

inline void tile_1x8(const float* a0, std::ptrdiff_t aks, const float* B, int ldb, float* c0, int K,
                     bool accumulate) {
    __m256 r0 = accumulate ? _mm256_loadu_ps(c0) : _mm256_setzero_ps();
    const float* b = B;
    for (int k = 0; k < K; ++k, b += ldb) {
        __m256 va = _mm256_set1_ps(a0[static_cast<std::ptrdiff_t>(k) * aks]);
        r0 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b), r0);
    }
    _mm256_storeu_ps(c0, r0);
}

inline void rows_avx2(int i0, int i1, int N, int K, const float* A, std::ptrdiff_t ars,
                      std::ptrdiff_t aks, const float* B, int ldb, float* C, int ldc,
                      bool accumulate) {
    int n32 = N - N % 32;
    int n8 = N - (N - n32) % 8;
    int i = i0;
    for (; i + 1 < i1; i += 2) {
        const float* a0 = A + static_cast<std::ptrdiff_t>(i) * ars;
        const float* a1 = a0 + ars;
        float* c0 = C + static_cast<std::ptrdiff_t>(i) * ldc;
        float* c1 = c0 + ldc;
        int j = 0;
        for (; j < n32; j += 32) tile_2x32(a0, a1, aks, B + j, ldb, c0 + j, c1 + j, K, accumulate);
        for (; j < n8; j += 8) {
            tile_1x8(a0, aks, B + j, ldb, c0 + j, K, accumulate);
            tile_1x8(a1, aks, B + j, ldb, c1 + j, K, accumulate);
        }
        for (; j < N; ++j) {
            float s0 = accumulate ? c0[j] : 0.0f;
            float s1 = accumulate ? c1[j] : 0.0f;
            for (int k = 0; k < K; ++k) {
                float bkj = B[static_cast<std::ptrdiff_t>(k) * ldb + j];
                s0 += a0[static_cast<std::ptrdiff_t>(k) * aks] * bkj;
                s1 += a1[static_cast<std::ptrdiff_t>(k) * aks] * bkj;
            }
            c0[j] = s0;
            c1[j] = s1;
        }
    }
    for (; i < i1; ++i) {
        const float* a0 = A + static_cast<std::ptrdiff_t>(i) * ars;
        float* c0 = C + static_cast<std::ptrdiff_t>(i) * ldc;
        int j = 0;
        for (; j < n32; j += 32) tile_1x32(a0, aks, B + j, ldb, c0 + j, K, accumulate);
        for (; j < n8; j += 8) tile_1x8(a0, aks, B + j, ldb, c0 + j, K, accumulate);
        for (; j < N; ++j) {
            float s = accumulate ? c0[j] : 0.0f;
            for (int k = 0; k < K; ++k)
                s += a0[static_cast<std::ptrdiff_t>(k) * aks] *
                     B[static_cast<std::ptrdiff_t>(k) * ldb + j];
            c0[j] = s;
        }
    }
}

#endif  // BODYADAPT_GEMM_AVX2

inline void rows(int i0, int i1, int N, int K, const float* A, std::ptrdiff_t ars,
                 std::ptrdiff_t aks, const float* B, int ldb, float* C, int ldc, bool accumulate) {
#ifdef BODYADAPT_GEMM_AVX2
    rows_avx2(i0, i1, N, K, A, ars, aks, B, ldb, C, ldc, accumulate);
#else
    rows_scalar(i0, i1, N, K, A, ars, aks, B, ldb, C, ldc, accumulate);
#endif
}

}  // namespace gemm_detail

inline void gemm(int M, int N, int K, const float* A, std::ptrdiff_t a_row_stride,
                 std::ptrdiff_t a_k_stride, const float* B, int ldb, float* C, int ldc,
                 bool accumulate, bool parallel = false) {
    if (M <= 0 || N <= 0) return;
    if (K <= 0) {
        if (!accumulate)
            for (int i = 0; i < M; ++i)
                std::memset(C + static_cast<std::ptrdiff_t>(i) * ldc, 0,
                            sizeof(float) * static_cast<std::size_t>(N));
        return;
    }
    if (parallel && M >= 8) {
        parallel_for(static_cast<std::size_t>(M), [&](std::size_t b, std::size_t e) {
            gemm_detail::rows(static_cast<int>(b), static_cast<int>(e), N, K, A, a_row_stride,
                              a_k_stride, B, ldb, C, ldc, accumulate);
        });
    } else {
        gemm_detail::rows(0, M, N, K, A, a_row_stride, a_k_stride, B, ldb, C, ldc, accumulate);
    }
}

// C[M x N] (+)= A[M x K] . B[K x N], all row-major and dense.
inline void gemm_nn(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate,
                    bool parallel = false) {
    gemm(M, N, K, A, K, 1, B, N, C, N, accumulate, parallel);
}

// C[M x N] (+)= A^T . B with A[L x M], B[L x N] row-major (used for dW = X^T . dY).
inline void gemm_tn(int M, int N, int L, const float* A, const float* B, float* C, bool accumulate,
                    bool parallel = false) {
    gemm(M, N, L, A, 1, M, B, N, C, N, accumulate, parallel);
}

inline Tensor transposed(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose expects rank-2 tensor, got " + shape_str(a.shape()));
    int r = a.dim(0), c = a.dim(1);
    Tensor out({c, r});
    const float* src = a.data();
    float* dst = out.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) dst[static_cast<std::ptrdiff_t>(j) * r + i] = src[static_cast<std::ptrdiff_t>(i) * c + j];
    return out;
}

}  // namespace bodyadapt
