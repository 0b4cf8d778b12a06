// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <cblas.h>

#include "tinyforge/quant.hpp"

namespace tinyforge::kernels {

namespace {
constexpr std::int64_t kRowTile = 4;
constexpr std::int64_t kColTile = 512;

std::int32_t finish_acc(std::int64_t acc, bool check) {
    if (acc > std::numeric_limits<std::int32_t>::max() || acc < std::numeric_limits<std::int32_t>::min()) {
        if (check) throw ModelError("int32 accumulator overflow");
        return static_cast<std::int32_t>(static_cast<std::uint32_t>(acc));
    }
    return static_cast<std::int32_t>(acc);
}
} // namespace

void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b, float* c) {
    float acc[kRowTile][kColTile];
    for (std::int64_t i0 = 0; i0 < m; i0 += kRowTile) {
        const auto mi = std::min(kRowTile, m - i0);
        for (std::int64_t j0 = 0; j0 < n; j0 += kColTile) {
            const auto nj = std::min(kColTile, n - j0);
            for (std::int64_t r = 0; r < mi; ++r) std::fill(acc[r], acc[r] + nj, 0.0f);
            if (mi == kRowTile) {
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    const float a0 = a[(i0 + 0) * k + kk], a1 = a[(i0 + 1) * k + kk];
                    const float a2 = a[(i0 + 2) * k + kk], a3 = a[(i0 + 3) * k + kk];
                    const float* brow = b + kk * n + j0;
                    for (std::int64_t j = 0; j < nj; ++j) {
                        const float bv = brow[j];
                        acc[0][j] += a0 * bv;
                        acc[1][j] += a1 * bv;
                        acc[2][j] += a2 * bv;
                        acc[3][j] += a3 * bv;
                    }
                }
            } else {
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    const float* brow = b + kk * n + j0;
                    for (std::int64_t r = 0; r < mi; ++r) {
                        const float av = a[(i0 + r) * k + kk];
                        for (std::int64_t j = 0; j < nj; ++j) acc[r][j] += av * brow[j];
                    }
                }
            }
            for (std::int64_t r = 0; r < mi; ++r) std::copy(acc[r], acc[r] + nj, c + (i0 + r) * n + j0);
        }
    }
}

void gemm_blas(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b, float* c) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        std::fill(c, c + m * n, 0.0f);
        return;
    }
    if (n == 1) {
        cblas_sgemv(CblasRowMajor, CblasNoTrans, static_cast<int>(m), static_cast<int>(k), 1.0f, a,
                    static_cast<int>(k), b, 1, 0.0f, c, 1);
        return;
    }
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), 1.0f, a, static_cast<int>(k), b, static_cast<int>(n), 0.0f, c,
                static_cast<int>(n));
}

void gemm_crs(const CrsMatrix<float>& a, std::int64_t n, const float* b, float* c) {
    for (std::int64_t r = 0; r < a.rows; ++r) {
        float* crow = c + r * n;
        std::fill(crow, crow + n, 0.0f);
        for (auto e = a.row_ptr[r]; e < a.row_ptr[r + 1]; ++e) {
            const float av = a.values[e];
            const float* brow = b + static_cast<std::int64_t>(a.col_ind[e]) * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matvec(std::int64_t rows, std::int64_t cols, const float* w, const float* x, const float* bias, float* y) {
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* wr = w + r * cols;
        float acc = 0.0f;
        for (std::int64_t k = 0; k < cols; ++k) acc += wr[k] * x[k];
        y[r] = bias ? acc + bias[r] : acc;
    }
}

void qgemm(std::int64_t m, std::int64_t n, std::int64_t k, const std::uint8_t* a, const std::uint8_t* b,
           const std::int32_t* bias, const QuantGemm& q, std::uint8_t* c) {
    std::vector<std::int32_t> bs(static_cast<std::size_t>(k * n));
    for (std::int64_t i = 0; i < k * n; ++i) bs[i] = static_cast<std::int32_t>(b[i]) - q.zp_b;
    std::vector<std::int64_t> acc(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), bias ? bias[i] : 0);
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const std::int64_t av = static_cast<std::int32_t>(a[i * k + kk]) - q.zp_a;
            if (av == 0) continue;
            const std::int32_t* brow = bs.data() + kk * n;
            for (std::int64_t j = 0; j < n; ++j) acc[j] += av * brow[j];
        }
        for (std::int64_t j = 0; j < n; ++j) {
            c[i * n + j] = requantize(finish_acc(acc[j], q.check_overflow), q.multiplier, q.zp_c, q.clamp_min);
        }
    }
}

void qgemm_crs(const CrsMatrix<std::uint8_t>& a, std::int64_t n, const std::uint8_t* b, const std::int32_t* bias,
               const QuantGemm& q, std::uint8_t* c) {
    std::vector<std::int64_t> acc(static_cast<std::size_t>(n));
    for (std::int64_t r = 0; r < a.rows; ++r) {
        std::fill(acc.begin(), acc.end(), bias ? bias[r] : 0);
        for (auto e = a.row_ptr[r]; e < a.row_ptr[r + 1]; ++e) {
            const std::int64_t av = static_cast<std::int32_t>(a.values[e]) - q.zp_a;
            const std::uint8_t* brow = b + static_cast<std::int64_t>(a.col_ind[e]) * n;
            for (std::int64_t j = 0; j < n; ++j) acc[j] += av * (static_cast<std::int32_t>(brow[j]) - q.zp_b);
        }
        for (std::int64_t j = 0; j < n; ++j) {
            c[r * n + j] = requantize(finish_acc(acc[j], q.check_overflow), q.multiplier, q.zp_c, q.clamp_min);
        }
    }
}

void softmax(std::span<const float> x, std::span<float> y) {
    if (x.empty()) return;
    float mx = *std::max_element(x.begin(), x.end());
    float sum = 0.0f;
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = std::exp(x[i] - mx);
        sum += y[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) y[i] /= sum;
}

void batchnorm(const float* x, std::int64_t channels, std::int64_t spatial, const float* gamma, const float* beta,
               const float* mean, const float* var, double epsilon, float* y) {
    for (std::int64_t c = 0; c < channels; ++c) {
        const float inv = static_cast<float>(static_cast<double>(gamma[c]) / std::sqrt(static_cast<double>(var[c]) + epsilon));
        const float mu = mean[c], b = beta[c];
        for (std::int64_t i = 0; i < spatial; ++i) y[c * spatial + i] = (x[c * spatial + i] - mu) * inv + b;
    }
}

} // namespace tinyforge::kernels
