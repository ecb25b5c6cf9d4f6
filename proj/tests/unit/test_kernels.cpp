#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "madex/kernels.hpp"

using namespace madex::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

// Rounding differs between the fma and mul+add paths; the bound scales with k.
double gemm_tol(std::size_t k) { return 1e-13 * static_cast<double>(k + 1) * 16.0; }

const KernelTable* simd() { return avx2_table(); }

}  // namespace

TEST(Kernels, ScalarGemmMatchesNaiveLoop) {
    std::mt19937_64 rng(1);
    const std::size_t m = 7, n = 5, k = 3;
    auto a = random_vec(m * k, rng), b = random_vec(k * n, rng), c = random_vec(m * n, rng);
    auto expect = c;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) expect[i * n + j] += a[i * k + p] * b[p * n + j];
    scalar_table().gemm(m, n, k, a.data(), k, b.data(), n, c.data(), n);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], expect[i], 1e-12);
}

TEST(Kernels, ActiveTableHonoursOverride) {
    // The override is read once; only check the reported name is one we know.
    const auto name = active().name;
    EXPECT_TRUE(name == "scalar" || name == "avx2") << name;
}

TEST(Kernels, Avx2GemmEquivalentOnOddShapes) {
    if (!simd()) GTEST_SKIP() << "no AVX2 on this CPU";
    std::mt19937_64 rng(2);
    for (std::size_t m : {1, 3, 4, 5, 9, 33})
        for (std::size_t n : {1, 4, 7, 8, 9, 17, 64})
            for (std::size_t k : {1, 2, 10, 65}) {
                // Padded strides exercise lda/ldb/ldc handling.
                const std::size_t lda = k + 3, ldb = n + 1, ldc = n + 2;
                auto a = random_vec(m * lda, rng), b = random_vec(k * ldb, rng), c0 = random_vec(m * ldc, rng);
                auto c1 = c0;
                scalar_table().gemm(m, n, k, a.data(), lda, b.data(), ldb, c0.data(), ldc);
                simd()->gemm(m, n, k, a.data(), lda, b.data(), ldb, c1.data(), ldc);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < ldc; ++j)
                        ASSERT_NEAR(c0[i * ldc + j], c1[i * ldc + j], gemm_tol(k))
                            << "m=" << m << " n=" << n << " k=" << k << " at " << i << "," << j;
            }
}

TEST(Kernels, Avx2ElementwiseKernelsEquivalent) {
    if (!simd()) GTEST_SKIP() << "no AVX2 on this CPU";
    std::mt19937_64 rng(3);
    for (std::size_t n : {0, 1, 3, 4, 5, 31, 64, 257}) {
        const auto in = random_vec(n, rng);
        std::vector<double> r0(n), r1(n);
        scalar_table().relu(in.data(), r0.data(), n);
        simd()->relu(in.data(), r1.data(), n);
        EXPECT_EQ(r0, r1);

        auto g0 = random_vec(n, rng);
        auto g1 = g0;
        scalar_table().relu_mask(g0.data(), in.data(), n);
        simd()->relu_mask(g1.data(), in.data(), n);
        EXPECT_EQ(g0, g1);

        const auto other = random_vec(n, rng);
        EXPECT_NEAR(scalar_table().dot(in.data(), other.data(), n), simd()->dot(in.data(), other.data(), n),
                    1e-12 * static_cast<double>(n + 1));
    }
}

TEST(Kernels, Avx2RowKernelsEquivalent) {
    if (!simd()) GTEST_SKIP() << "no AVX2 on this CPU";
    std::mt19937_64 rng(4);
    for (std::size_t rows : {1, 2, 7})
        for (std::size_t cols : {1, 4, 6, 13}) {
            const auto bias = random_vec(cols, rng);
            std::vector<double> c0(rows * cols), c1(rows * cols);
            scalar_table().set_rows(c0.data(), rows, cols, bias.data());
            simd()->set_rows(c1.data(), rows, cols, bias.data());
            EXPECT_EQ(c0, c1);

            const auto a = random_vec(rows * cols, rng);
            auto s0 = random_vec(cols, rng);
            auto s1 = s0;
            scalar_table().column_sums(a.data(), rows, cols, s0.data());
            simd()->column_sums(a.data(), rows, cols, s1.data());
            for (std::size_t j = 0; j < cols; ++j) EXPECT_NEAR(s0[j], s1[j], 1e-13 * rows);
        }
}

TEST(Kernels, Avx2AdamEquivalent) {
    if (!simd()) GTEST_SKIP() << "no AVX2 on this CPU";
    std::mt19937_64 rng(5);
    for (std::size_t n : {1, 3, 4, 9, 100}) {
        auto p0 = random_vec(n, rng), m0 = random_vec(n, rng), v0 = random_vec(n, rng);
        for (double& v : v0) v = std::abs(v);
        auto p1 = p0, m1 = m0, v1 = v0;
        for (int step = 0; step < 5; ++step) {
            const auto g = random_vec(n, rng);
            scalar_table().adam(p0.data(), g.data(), m0.data(), v0.data(), n, 1e-2, 0.9, 0.999, 1e-8);
            simd()->adam(p1.data(), g.data(), m1.data(), v1.data(), n, 1e-2, 0.9, 0.999, 1e-8);
        }
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_NEAR(p0[i], p1[i], 1e-12);
            EXPECT_NEAR(m0[i], m1[i], 1e-12);
            EXPECT_NEAR(v0[i], v1[i], 1e-12);
        }
    }
}

TEST(Kernels, AdamMatchesClosedFormFirstStep) {
    // From zero moments the first bias-corrected step is lr * g / (|g| + eps_hat).
    std::vector<double> p{1.0, -1.0}, g{0.5, -2.0}, m(2, 0.0), v(2, 0.0);
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double step_size = lr * std::sqrt(1 - b2) / (1 - b1);
    scalar_table().adam(p.data(), g.data(), m.data(), v.data(), 2, step_size, b1, b2, eps * std::sqrt(1 - b2));
    EXPECT_NEAR(p[0], 1.0 - lr * 0.5 / (0.5 + eps), 1e-15);
    EXPECT_NEAR(p[1], -1.0 + lr * 2.0 / (2.0 + eps), 1e-15);
}
