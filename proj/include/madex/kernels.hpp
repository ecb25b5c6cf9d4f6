#pragma once

// Dense arithmetic kernels behind surrogate training. Every kernel has a
// portable scalar reference implementation; an AVX2/FMA variant is picked at
// runtime when the CPU supports it. MADEX_SIMD=scalar forces the reference
// path.

#include <cstddef>
#include <string_view>

namespace madex::kernels {

struct KernelTable {
    std::string_view name;

    /// C[m x n] += A[m x k] * B[k x n], all row-major with explicit strides.
    void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc);

    /// Broadcasts `bias` (length cols) onto every row of C.
    void (*set_rows)(double* c, std::size_t rows, std::size_t cols, const double* bias);

    /// out[j] += sum_r A[r, j]
    void (*column_sums)(const double* a, std::size_t rows, std::size_t cols, double* out);

    /// out = max(in, 0)
    void (*relu)(const double* in, double* out, std::size_t n);

    /// grad[i] = 0 where pre[i] <= 0
    void (*relu_mask)(double* grad, const double* pre, std::size_t n);

    double (*dot)(const double* a, const double* b, std::size_t n);

    /// One Adam update over n parameters. `step_size` already folds in the
    /// bias corrections: lr * sqrt(1 - beta2^t) / (1 - beta1^t).
    void (*adam)(double* param, const double* grad, double* m, double* v, std::size_t n,
                 double step_size, double beta1, double beta2, double eps);
};

const KernelTable& scalar_table();

/// Null when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_table();

/// The table used by the library: AVX2 when available and not overridden.
const KernelTable& active();

}  // namespace madex::kernels
