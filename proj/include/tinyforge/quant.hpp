// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tinyforge/ir.hpp"

namespace tinyforge {

/// Round half away from zero. The one rounding rule used by every
/// quantized path, including the emitted runtime.
inline std::int64_t round_half_away(double x) { return static_cast<std::int64_t>(std::round(x)); }

inline std::uint8_t clamp_u8(std::int64_t v) {
    return static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
}

/// Scale and zero point for [min, max], widened to include 0. A range
/// collapsed at 0 yields scale 1, zero point 0.
QuantParams calibrate(double min, double max);
QuantParams calibrate(std::span<const float> values);

inline std::uint8_t quantize(double x, const QuantParams& q) {
    return clamp_u8(round_half_away(x / q.scale) + q.zero_point);
}

inline double dequantize(std::uint8_t v, const QuantParams& q) {
    return q.scale * (static_cast<std::int32_t>(v) - q.zero_point);
}

/// Quantize then dequantize, in float.
inline float fake_quantize(float x, const QuantParams& q) { return static_cast<float>(dequantize(quantize(x, q), q)); }

/// Real multiplier mapping an accumulator in units of s_a*s_b to units of s_c.
inline double requant_multiplier(double s_a, double s_b, double s_c) { return s_a * s_b / s_c; }

/// zp_c + round(m * acc), clamped to [lo, 255].
inline std::uint8_t requantize(std::int32_t acc, double m, std::int32_t zp_c, std::int32_t lo = 0) {
    auto v = static_cast<std::int64_t>(zp_c) + round_half_away(m * static_cast<double>(acc));
    if (v < lo) v = lo;
    return clamp_u8(v);
}

/// C = A (m x n) * B (n x p) in the full-integer scheme: int32 accumulation
/// of zero-point-corrected products, one real multiply per output.
std::vector<std::uint8_t> qmatmul(std::span<const std::uint8_t> a, const QuantParams& qa, std::span<const std::uint8_t> b,
                                  const QuantParams& qb, const QuantParams& qc, std::int64_t m, std::int64_t n,
                                  std::int64_t p);

/// Observed (min, max) per activation edge.
using RangeTable = std::map<std::string, std::pair<double, double>>;

/// Rewrites an f32 graph into integer form: Conv2D and Linear become
/// QLinearConv and QLinearMatMul, ReLU/MaxPool/Flatten run on u8 when their
/// input is quantized, and QuantizeLinear / DequantizeLinear bridges are
/// inserted around everything else. Graph input and output names are kept.
/// Throws PrerequisiteError when an edge that must be quantized has no range.
Graph convert_to_integer(const Graph& g, const RangeTable& ranges);

} // namespace tinyforge
