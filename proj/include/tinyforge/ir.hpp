// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tinyforge/tensor.hpp"

namespace tinyforge {

enum class OpKind {
    Conv2D,
    Linear,
    BatchNorm,
    MaxPool,
    ReLU,
    Softmax,
    QLinearConv,
    QLinearMatMul,
    QuantizeLinear,
    DequantizeLinear,
    Add,
    Flatten,
};

std::string_view to_string(OpKind k);
std::optional<OpKind> op_kind_from_string(std::string_view s);

/// Static arity and attribute signature of an operator kind.
struct OpSignature {
    int inputs;
    int params;
    bool conv_attrs; // kernel, stride, pad
    bool pool_attr;
    bool epsilon_attr;
    bool clamp_attr;
};

const OpSignature& signature(OpKind k);

struct Attributes {
    int kernel = 0;
    int stride = 0;
    int pad = 0;
    int pool = 0;
    double epsilon = 0.0;
    int clamp_min = 0; ///< lower output clamp of quantized producers (raised by ReLU fusion)

    friend bool operator==(const Attributes&, const Attributes&) = default;
};

struct Node {
    std::string name;
    OpKind kind = OpKind::ReLU;
    std::vector<std::string> inputs;  ///< activation edges
    std::vector<std::string> outputs; ///< activation edges
    std::vector<std::string> params;  ///< parameter tensor names, role by position
    Attributes attrs;

    friend bool operator==(const Node&, const Node&) = default;
};

/// Directed acyclic operator graph. Edges are named activation tensors;
/// parameters are static tensors attached to nodes by name.
struct Graph {
    std::string name = "model";
    std::vector<Node> nodes;
    std::map<std::string, TensorDesc> edges;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::map<std::string, ParamTensor> params;
    /// Free-form numeric annotations carried through the bundle (e.g. the
    /// weight count before structural pruning).
    std::map<std::string, double> meta;

    const Node* find_node(std::string_view node_name) const;
    Node* find_node(std::string_view node_name);
    std::optional<std::size_t> producer(std::string_view edge) const;
    std::vector<std::size_t> consumers(std::string_view edge) const;
    bool is_input(std::string_view edge) const;
    bool is_output(std::string_view edge) const;

    ParamTensor& param(const std::string& n);
    const ParamTensor& param(const std::string& n) const;
    const TensorDesc& edge(const std::string& n) const;

    /// Name not used by any edge, parameter or node, derived from `base`.
    std::string unique_name(const std::string& base) const;

    friend bool operator==(const Graph&, const Graph&) = default;
};

/// Structural checks: names resolve, arity and attributes match the op kind,
/// one producer per edge, parameter shapes and types are consistent, no cycles.
/// Throws ModelError naming the offending node.
void validate(const Graph& g);

/// Kahn's algorithm; ties are broken by position in `g.nodes`.
std::vector<std::size_t> toposort(const Graph& g);

/// Populates every edge descriptor from the declared graph input shapes.
void infer_shapes_inplace(Graph& g);

/// Sets the shape of the (single) graph input, then infers all edges.
Graph infer_shapes(Graph g, const Shape& input_shape);

/// Number of elements in the weight tensors of Conv2D / Linear style nodes.
std::int64_t weight_count(const Graph& g);
/// Same, excluding exact zeros (or zero points for u8 weights).
std::int64_t nonzero_weight_count(const Graph& g);

bool is_weight_layer(OpKind k);

} // namespace tinyforge
