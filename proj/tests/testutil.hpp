// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tinyforge/dataset.hpp"
#include "tinyforge/ir.hpp"
#include "tinyforge/presets.hpp"
#include "tinyforge/rng.hpp"

namespace tftest {

using namespace tinyforge;

/// Small conv net: conv -> bn -> relu -> conv -> relu -> pool -> flatten -> fc.
inline Graph small_cnn(std::uint64_t seed = 1, std::int64_t c1 = 4, std::int64_t c2 = 6) {
    GraphBuilder b("small", {1, 8, 8});
    auto x = b.conv(b.input(), c1, 3, 1, 1);
    x = b.batchnorm(x);
    x = b.relu(x);
    x = b.conv(x, c2, 3);
    x = b.relu(x);
    x = b.maxpool(x, 2);
    x = b.flatten(x);
    x = b.linear(x, 3);
    x = b.softmax(x);
    Graph g = b.finish({x});
    init_params(g, seed);
    return g;
}

/// Random images for small_cnn.
inline Dataset image_data(std::size_t n, std::uint64_t seed, Shape shape = {1, 8, 8}, int classes = 3) {
    Rng rng(seed);
    Dataset d;
    d.sample_shape = shape;
    d.classes = classes;
    d.features.resize(n * static_cast<std::size_t>(numel(shape)));
    for (auto& v : d.features) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<std::int32_t>(rng.below(classes)));
    return d;
}

/// Randomizes batch-norm statistics and affine terms so folding is non-trivial.
inline void randomize_bn(Graph& g, std::uint64_t seed) {
    Rng rng(seed);
    for (const auto& n : g.nodes) {
        if (n.kind != OpKind::BatchNorm) continue;
        auto& gamma = g.param(n.params[0]).values<float>();
        auto& beta = g.param(n.params[1]).values<float>();
        auto& mean = g.param(n.params[2]).values<float>();
        auto& var = g.param(n.params[3]).values<float>();
        for (auto& v : gamma) v = static_cast<float>(rng.uniform(0.5, 1.5));
        for (auto& v : beta) v = static_cast<float>(rng.uniform(-0.5, 0.5));
        for (auto& v : mean) v = static_cast<float>(rng.uniform(-0.5, 0.5));
        for (auto& v : var) v = static_cast<float>(rng.uniform(0.5, 2.0));
    }
}

/// Small random biases, so no ReLU input sits exactly on the kink.
inline void randomize_biases(Graph& g, std::uint64_t seed) {
    Rng rng(seed);
    for (const auto& n : g.nodes) {
        if (n.kind != OpKind::Conv2D && n.kind != OpKind::Linear) continue;
        for (auto& v : g.param(n.params[1]).values<float>()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    }
}

/// Fresh scratch directory in the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("tinyforge_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace tftest
