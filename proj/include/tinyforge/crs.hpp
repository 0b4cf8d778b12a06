// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tinyforge/error.hpp"
#include "tinyforge/tensor.hpp"

namespace tinyforge {

/// Compressed row storage of a 2-D matrix. "Zero" is the value passed to
/// crs_encode: exact 0 for float tensors, the zero point for u8 tensors.
template <typename T> struct CrsMatrix {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<T> values;
    std::vector<std::uint32_t> col_ind;
    std::vector<std::uint32_t> row_ptr;

    std::size_t nnz() const { return values.size(); }
    friend bool operator==(const CrsMatrix&, const CrsMatrix&) = default;
};

template <typename T> CrsMatrix<T> crs_encode(std::span<const T> dense, std::int64_t rows, std::int64_t cols, T zero = T{}) {
    if (static_cast<std::int64_t>(dense.size()) != rows * cols) throw ModelError("crs_encode: size does not match shape");
    CrsMatrix<T> m;
    m.rows = rows;
    m.cols = cols;
    m.row_ptr.reserve(static_cast<std::size_t>(rows) + 1);
    m.row_ptr.push_back(0);
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = dense.data() + r * cols;
        for (std::int64_t c = 0; c < cols; ++c) {
            if (row[c] != zero) {
                m.values.push_back(row[c]);
                m.col_ind.push_back(static_cast<std::uint32_t>(c));
            }
        }
        m.row_ptr.push_back(static_cast<std::uint32_t>(m.values.size()));
    }
    return m;
}

/// Throws ModelError unless the triplet is internally consistent.
template <typename T> void crs_check(const CrsMatrix<T>& m) {
    if (m.rows < 0 || m.cols < 0) throw ModelError("crs: negative dimension");
    if (m.row_ptr.size() != static_cast<std::size_t>(m.rows) + 1) throw ModelError("crs: row_ptr length is not rows+1");
    if (m.col_ind.size() != m.values.size()) throw ModelError("crs: col_ind and values lengths differ");
    if (m.row_ptr.front() != 0 || m.row_ptr.back() != m.values.size()) throw ModelError("crs: row_ptr bounds");
    for (std::int64_t r = 0; r < m.rows; ++r) {
        auto b = m.row_ptr[r], e = m.row_ptr[r + 1];
        if (b > e) throw ModelError("crs: row_ptr decreasing");
        for (auto k = b; k < e; ++k) {
            if (m.col_ind[k] >= m.cols) throw ModelError("crs: column index out of range");
            if (k > b && m.col_ind[k] <= m.col_ind[k - 1]) throw ModelError("crs: column indices not increasing");
        }
    }
}

template <typename T> std::vector<T> crs_decode(const CrsMatrix<T>& m, T zero = T{}) {
    crs_check(m);
    std::vector<T> dense(static_cast<std::size_t>(m.rows * m.cols), zero);
    for (std::int64_t r = 0; r < m.rows; ++r) {
        for (auto k = m.row_ptr[r]; k < m.row_ptr[r + 1]; ++k) dense[r * m.cols + m.col_ind[k]] = m.values[k];
    }
    return dense;
}

/// y = M x, accumulating each row left to right from 0. Matches a dense
/// sequential dot product bit for bit since skipped terms are exact zeros.
inline std::vector<float> crs_matvec(const CrsMatrix<float>& m, std::span<const float> x) {
    if (static_cast<std::int64_t>(x.size()) != m.cols) throw ModelError("crs_matvec: vector length does not match columns");
    std::vector<float> y(static_cast<std::size_t>(m.rows), 0.0f);
    for (std::int64_t r = 0; r < m.rows; ++r) {
        float acc = 0.0f;
        for (auto k = m.row_ptr[r]; k < m.row_ptr[r + 1]; ++k) acc += m.values[k] * x[m.col_ind[k]];
        y[r] = acc;
    }
    return y;
}

struct CrsCost {
    bool feasible = false;
    std::uint64_t dense_bytes = 0;
    std::uint64_t crs_bytes = 0;
    int index_bytes = 2; ///< width of one column index
};

inline int crs_index_bytes(std::int64_t cols) { return cols <= 65535 ? 2 : 4; }

/// CRS pays off iff its three arrays are strictly smaller than the dense tensor.
inline CrsCost crs_feasible(std::int64_t rows, std::int64_t cols, std::int64_t nnz, ElemType type) {
    CrsCost c;
    auto es = static_cast<std::uint64_t>(elem_size(type));
    c.index_bytes = crs_index_bytes(cols);
    c.dense_bytes = static_cast<std::uint64_t>(rows * cols) * es;
    c.crs_bytes = static_cast<std::uint64_t>(nnz) * (es + static_cast<std::uint64_t>(c.index_bytes)) +
                  static_cast<std::uint64_t>(rows + 1) * 4;
    c.feasible = c.crs_bytes < c.dense_bytes;
    return c;
}

/// Rows/cols of the matrix view of a parameter: conv weights (F,C,K,K)
/// become F x (C*K*K).
inline std::pair<std::int64_t, std::int64_t> matrix_view(const Shape& s) {
    if (s.size() < 2) throw ModelError("matrix view requires rank >= 2, got " + shape_str(s));
    return {s[0], numel(s) / s[0]};
}

} // namespace tinyforge
