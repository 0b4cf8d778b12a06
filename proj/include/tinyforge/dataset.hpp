// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tinyforge/tensor.hpp"

namespace tinyforge {

/// Labelled samples stored contiguously, one sample_shape block each.
struct Dataset {
    Shape sample_shape;
    int classes = 0;
    std::vector<float> features;
    std::vector<std::int32_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(numel(sample_shape)); }
    std::span<const float> sample(std::size_t i) const {
        return {features.data() + i * sample_size(), sample_size()};
    }
    Tensor input(std::size_t i) const;

    /// Throws ModelError if counts or labels are inconsistent.
    void check() const;
    /// The first `n` samples (all if n exceeds the size).
    Dataset head(std::size_t n) const;
    Dataset subset(std::span<const std::size_t> indices) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct Split {
    Dataset train;
    Dataset test;
};

/// `classes` isotropic Gaussian clusters in `dims` dimensions, centres
/// spread on a circle (or simplex-like ring) of radius `radius`, unit
/// variance. Samples are interleaved across classes then shuffled.
Dataset make_blobs(std::size_t n, int classes, std::uint64_t seed, int dims = 2, double radius = 3.0);

/// Last `round(test_fraction * n)` samples become the test set.
Split split(const Dataset& d, double test_fraction);

/// MNIST IDX pair (images magic 0x00000803, labels 0x00000801). Pixels are
/// scaled to [0, 1]; samples have shape [1, rows, cols].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Dataset cache in bundle form: `<stem>.json` header + `<stem>.bin`
/// (f32 features then i32 labels).
void save_dataset(const Dataset& d, const std::filesystem::path& p);
Dataset load_dataset(const std::filesystem::path& p);

} // namespace tinyforge
