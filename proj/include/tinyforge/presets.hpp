// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tinyforge/ir.hpp"

namespace tinyforge {

/// Incremental graph construction with automatic node, edge and parameter
/// naming. Each call returns the name of the new output edge.
class GraphBuilder {
public:
    GraphBuilder(std::string model_name, const Shape& input_shape, std::string input_name = "input");

    const std::string& input() const { return graph_.inputs.front(); }
    const Shape& shape(const std::string& edge) const { return graph_.edge(edge).shape; }

    std::string conv(const std::string& in, std::int64_t filters, int kernel, int stride = 1, int pad = 0);
    std::string linear(const std::string& in, std::int64_t outputs);
    std::string batchnorm(const std::string& in, double epsilon = 1e-5);
    std::string relu(const std::string& in);
    std::string maxpool(const std::string& in, int pool);
    std::string flatten(const std::string& in);
    std::string add(const std::string& a, const std::string& b);
    std::string softmax(const std::string& in);

    /// Marks `outputs` as graph outputs and returns the validated graph.
    Graph finish(const std::vector<std::string>& outputs);

private:
    std::string next_name(const std::string& prefix);
    std::string push(Node n);

    Graph graph_;
    std::map<std::string, int> counters_;
};

/// Linear/ReLU chain over `sizes` (input width first), ending in Softmax.
Graph mlp_preset(const std::vector<std::int64_t>& sizes, const std::string& name = "mlp");
Graph lenet_preset();
Graph alexnet_preset();
/// Stem conv (3->64, k3, s2) then four two-conv residual blocks with
/// 1x1 projection shortcuts where the width changes.
Graph resnet_preset();

/// Looks up "lenet", "alexnet", "resnet" or "mlp" (2-32-32-2). Throws
/// UsageError on an unknown name.
Graph preset(const std::string& name);
std::vector<std::string> preset_names();

/// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases, identity
/// batch-norm statistics.
void init_params(Graph& g, std::uint64_t seed);

} // namespace tinyforge
