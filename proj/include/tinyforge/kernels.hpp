// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tinyforge/crs.hpp"
#include "tinyforge/tensor.hpp"

// Reference operator kernels. Float reductions accumulate strictly in index
// order from +0 so that dense, CRS and shrunk variants agree bit for bit.
namespace tinyforge::kernels {

struct ConvGeom {
    std::int64_t channels = 0, height = 0, width = 0;
    int kernel = 1, stride = 1, pad = 0;

    std::int64_t out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
    std::int64_t out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
    std::int64_t rows() const { return channels * kernel * kernel; }
    std::int64_t cols() const { return out_h() * out_w(); }
};

/// Unrolls a [C,H,W] input into a (C*K*K) x (Hout*Wout) row-major matrix.
/// Out-of-bounds taps read `pad_value` (0 for float, the zero point for u8).
template <typename T> void im2col(const T* in, const ConvGeom& g, T pad_value, T* out) {
    const auto oh = g.out_h(), ow = g.out_w();
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                T* row = out + ((c * g.kernel + ky) * g.kernel + kx) * oh * ow;
                for (std::int64_t y = 0; y < oh; ++y) {
                    std::int64_t iy = y * g.stride - g.pad + ky;
                    for (std::int64_t x = 0; x < ow; ++x) {
                        std::int64_t ix = x * g.stride - g.pad + kx;
                        bool inside = iy >= 0 && iy < g.height && ix >= 0 && ix < g.width;
                        row[y * ow + x] = inside ? in[(c * g.height + iy) * g.width + ix] : pad_value;
                    }
                }
            }
        }
    }
}

/// Scatter-add inverse of im2col, used by the trainer's backward pass.
template <typename T> void col2im(const T* col, const ConvGeom& g, T* in_grad) {
    const auto oh = g.out_h(), ow = g.out_w();
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                const T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * oh * ow;
                for (std::int64_t y = 0; y < oh; ++y) {
                    std::int64_t iy = y * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.height) continue;
                    for (std::int64_t x = 0; x < ow; ++x) {
                        std::int64_t ix = x * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= g.width) continue;
                        in_grad[(c * g.height + iy) * g.width + ix] += row[y * ow + x];
                    }
                }
            }
        }
    }
}

/// C (m x n) = A (m x k) * B (k x n), each C[i][j] summed over k in order.
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b, float* c);
/// Same product through the linked BLAS. Faster, but summation order is
/// the library's.
void gemm_blas(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b, float* c);
/// C (m x n) = A (m x k) * B (k x n) where A is CRS.
void gemm_crs(const CrsMatrix<float>& a, std::int64_t n, const float* b, float* c);

/// y = W x + b for W (rows x cols), dense.
void matvec(std::int64_t rows, std::int64_t cols, const float* w, const float* x, const float* bias, float* y);

struct QuantGemm {
    std::int32_t zp_a = 0, zp_b = 0, zp_c = 0;
    double multiplier = 1.0;
    std::int32_t clamp_min = 0;
    bool check_overflow = false;
};

/// u8 output (m x n) = requant(sum_k (A-zp_a)(B-zp_b) + bias[i]) for A (m x k), B (k x n).
void qgemm(std::int64_t m, std::int64_t n, std::int64_t k, const std::uint8_t* a, const std::uint8_t* b,
           const std::int32_t* bias, const QuantGemm& q, std::uint8_t* c);
void qgemm_crs(const CrsMatrix<std::uint8_t>& a, std::int64_t n, const std::uint8_t* b, const std::int32_t* bias,
               const QuantGemm& q, std::uint8_t* c);

template <typename T> void maxpool(const T* in, std::int64_t c, std::int64_t h, std::int64_t w, int pool, T* out) {
    const auto oh = h / pool, ow = w / pool;
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t y = 0; y < oh; ++y) {
            for (std::int64_t x = 0; x < ow; ++x) {
                T best = in[(ch * h + y * pool) * w + x * pool];
                for (int dy = 0; dy < pool; ++dy) {
                    for (int dx = 0; dx < pool; ++dx) {
                        T v = in[(ch * h + y * pool + dy) * w + x * pool + dx];
                        if (v > best) best = v;
                    }
                }
                out[(ch * oh + y) * ow + x] = best;
            }
        }
    }
}

void softmax(std::span<const float> x, std::span<float> y);

/// Per-channel affine normalization over [C, spatial].
void batchnorm(const float* x, std::int64_t channels, std::int64_t spatial, const float* gamma, const float* beta,
               const float* mean, const float* var, double epsilon, float* y);

} // namespace tinyforge::kernels
