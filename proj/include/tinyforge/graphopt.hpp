// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "tinyforge/ir.hpp"

namespace tinyforge {

/// What a rewrite pass did: one line per applied rewrite, one per match it
/// had to leave alone.
struct PassReport {
    std::string pass;
    std::vector<std::string> applied;
    std::vector<std::string> skipped;
};

/// Absorbs every BatchNorm that is the only consumer of an f32 Conv2D or
/// Linear into that layer (computed in double, stored as f32). Other
/// BatchNorm nodes stay and are listed as skipped.
Graph fold_batchnorm(const Graph& g, PassReport* report = nullptr);

/// Removes u8 ReLU nodes that are the only consumer of a QLinearConv or
/// QLinearMatMul, raising the producer's clamp_min to the output zero point.
Graph fuse_relu(const Graph& g, PassReport* report = nullptr);

} // namespace tinyforge
