#include "madex/kernels.hpp"

#include <cmath>

namespace madex::kernels {
namespace {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * ldc;
        const double* arow = a + i * lda;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = arow[p];
            const double* brow = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void set_rows_scalar(double* c, std::size_t rows, std::size_t cols, const double* bias) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) c[r * cols + j] = bias[j];
}

void column_sums_scalar(const double* a, std::size_t rows, std::size_t cols, double* out) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) out[j] += a[r * cols + j];
}

void relu_scalar(const double* in, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_mask_scalar(double* grad, const double* pre, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!(pre[i] > 0.0)) grad[i] = 0.0;
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void adam_scalar(double* param, const double* grad, double* m, double* v, std::size_t n,
                 double step_size, double beta1, double beta2, double eps) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        param[i] -= step_size * m[i] / (std::sqrt(v[i]) + eps);
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{"scalar",          gemm_scalar, set_rows_scalar,
                                   column_sums_scalar, relu_scalar, relu_mask_scalar,
                                   dot_scalar,         adam_scalar};
    return table;
}

}  // namespace madex::kernels
