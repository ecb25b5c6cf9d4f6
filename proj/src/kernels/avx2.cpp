// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "madex/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace madex::kernels {
namespace {

// 4 rows x 8 columns register tile, accumulating over the full k range.
inline void tile_4x8(std::size_t k, const double* a, std::size_t lda, const double* b,
                     std::size_t ldb, double* c, std::size_t ldc) {
    __m256d c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
    __m256d c10 = _mm256_loadu_pd(c + ldc), c11 = _mm256_loadu_pd(c + ldc + 4);
    __m256d c20 = _mm256_loadu_pd(c + 2 * ldc), c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
    __m256d c30 = _mm256_loadu_pd(c + 3 * ldc), c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
    const double* a0 = a;
    const double* a1 = a + lda;
    const double* a2 = a + 2 * lda;
    const double* a3 = a + 3 * lda;
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
        const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
        __m256d x = _mm256_broadcast_sd(a0 + p);
        c00 = _mm256_fmadd_pd(x, b0, c00);
        c01 = _mm256_fmadd_pd(x, b1, c01);
        x = _mm256_broadcast_sd(a1 + p);
        c10 = _mm256_fmadd_pd(x, b0, c10);
        c11 = _mm256_fmadd_pd(x, b1, c11);
        x = _mm256_broadcast_sd(a2 + p);
        c20 = _mm256_fmadd_pd(x, b0, c20);
        c21 = _mm256_fmadd_pd(x, b1, c21);
        x = _mm256_broadcast_sd(a3 + p);
        c30 = _mm256_fmadd_pd(x, b0, c30);
        c31 = _mm256_fmadd_pd(x, b1, c31);
    }
    _mm256_storeu_pd(c, c00);
    _mm256_storeu_pd(c + 4, c01);
    _mm256_storeu_pd(c + ldc, c10);
    _mm256_storeu_pd(c + ldc + 4, c11);
    _mm256_storeu_pd(c + 2 * ldc, c20);
    _mm256_storeu_pd(c + 2 * ldc + 4, c21);
    _mm256_storeu_pd(c + 3 * ldc, c30);
    _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

inline void tile_1x8(std::size_t k, const double* a, const double* b, std::size_t ldb, double* c) {
    __m256d c0 = _mm256_loadu_pd(c), c1 = _mm256_loadu_pd(c + 4);
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d x = _mm256_broadcast_sd(a + p);
        c0 = _mm256_fmadd_pd(x, _mm256_loadu_pd(b + p * ldb), c0);
        c1 = _mm256_fmadd_pd(x, _mm256_loadu_pd(b + p * ldb + 4), c1);
    }
    _mm256_storeu_pd(c, c0);
    _mm256_storeu_pd(c + 4, c1);
}

inline void tile_1x4(std::size_t k, const double* a, const double* b, std::size_t ldb, double* c) {
    __m256d c0 = _mm256_loadu_pd(c);
    for (std::size_t p = 0; p < k; ++p)
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p), _mm256_loadu_pd(b + p * ldb), c0);
    _mm256_storeu_pd(c, c0);
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
        std::size_t i = 0;
        for (; i + 4 <= m; i += 4) tile_4x8(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
        for (; i < m; ++i) tile_1x8(k, a + i * lda, b + j, ldb, c + i * ldc + j);
    }
    for (; j + 4 <= n; j += 4)
        for (std::size_t i = 0; i < m; ++i) tile_1x4(k, a + i * lda, b + j, ldb, c + i * ldc + j);
    if (j < n) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a + i * lda;
            double* crow = c + i * ldc;
            for (std::size_t jj = j; jj < n; ++jj) {
                double s = crow[jj];
                for (std::size_t p = 0; p < k; ++p) s = std::fma(arow[p], b[p * ldb + jj], s);
                crow[jj] = s;
            }
        }
    }
}

void set_rows_avx2(double* c, std::size_t rows, std::size_t cols, const double* bias) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* crow = c + r * cols;
        std::size_t j = 0;
        for (; j + 4 <= cols; j += 4) _mm256_storeu_pd(crow + j, _mm256_loadu_pd(bias + j));
        for (; j < cols; ++j) crow[j] = bias[j];
    }
}

void column_sums_avx2(const double* a, std::size_t rows, std::size_t cols, double* out) {
    std::size_t j = 0;
    for (; j + 4 <= cols; j += 4) {
        __m256d s = _mm256_loadu_pd(out + j);
        for (std::size_t r = 0; r < rows; ++r) s = _mm256_add_pd(s, _mm256_loadu_pd(a + r * cols + j));
        _mm256_storeu_pd(out + j, s);
    }
    for (; j < cols; ++j)
        for (std::size_t r = 0; r < rows; ++r) out[j] += a[r * cols + j];
}

void relu_avx2(const double* in, double* out, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(in + i), zero));
    for (; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_mask_avx2(double* grad, const double* pre, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d keep = _mm256_cmp_pd(_mm256_loadu_pd(pre + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(grad + i, _mm256_and_pd(_mm256_loadu_pd(grad + i), keep));
    }
    for (; i < n; ++i)
        if (!(pre[i] > 0.0)) grad[i] = 0.0;
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
    }
    for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, _mm256_add_pd(s0, s1));
    double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void adam_avx2(double* param, const double* grad, double* m, double* v, std::size_t n,
               double step_size, double beta1, double beta2, double eps) {
    const __m256d b1 = _mm256_set1_pd(beta1), nb1 = _mm256_set1_pd(1.0 - beta1);
    const __m256d b2 = _mm256_set1_pd(beta2), nb2 = _mm256_set1_pd(1.0 - beta2);
    const __m256d step = _mm256_set1_pd(step_size), e = _mm256_set1_pd(eps);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d g = _mm256_loadu_pd(grad + i);
        const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(nb1, g));
        const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                         _mm256_mul_pd(nb2, _mm256_mul_pd(g, g)));
        _mm256_storeu_pd(m + i, mi);
        _mm256_storeu_pd(v + i, vi);
        const __m256d upd = _mm256_div_pd(_mm256_mul_pd(step, mi), _mm256_add_pd(_mm256_sqrt_pd(vi), e));
        _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), upd));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        param[i] -= step_size * m[i] / (std::sqrt(v[i]) + eps);
    }
}

}  // namespace

const KernelTable& avx2_table_impl() {
    static const KernelTable table{"avx2",          gemm_avx2, set_rows_avx2, column_sums_avx2,
                                   relu_avx2,       relu_mask_avx2, dot_avx2, adam_avx2};
    return table;
}

}  // namespace madex::kernels
