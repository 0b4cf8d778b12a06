// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/graphopt.hpp"

#include <algorithm>
#include <cmath>

namespace tinyforge {

namespace {

/// Producer of `edge` if `edge` has exactly one consumer and is not a graph output.
const Node* sole_producer(const Graph& g, const std::string& edge) {
    if (g.is_output(edge) || g.is_input(edge) || g.consumers(edge).size() != 1) return nullptr;
    auto p = g.producer(edge);
    return p ? &g.nodes[*p] : nullptr;
}

/// Drops node `idx`, rewiring its producer to write the node's output edge.
void splice_out(Graph& g, std::size_t producer, std::size_t idx) {
    const auto old_edge = g.nodes[producer].outputs[0];
    g.nodes[producer].outputs[0] = g.nodes[idx].outputs[0];
    g.nodes.erase(g.nodes.begin() + static_cast<std::ptrdiff_t>(idx));
    g.edges.erase(old_edge);
}

std::size_t index_of(const Graph& g, const Node* n) { return static_cast<std::size_t>(n - g.nodes.data()); }

} // namespace

Graph fold_batchnorm(const Graph& g, PassReport* report) {
    validate(g);
    Graph out = g;
    PassReport rep{"fold_batchnorm", {}, {}};
    for (std::size_t i = 0; i < out.nodes.size();) {
        const Node& bn = out.nodes[i];
        if (bn.kind != OpKind::BatchNorm) {
            ++i;
            continue;
        }
        const Node* prod = sole_producer(out, bn.inputs[0]);
        if (!prod || (prod->kind != OpKind::Conv2D && prod->kind != OpKind::Linear) ||
            out.param(prod->params[0]).desc.type != ElemType::F32 ||
            out.param(prod->params[0]).desc.layout != Layout::Dense) {
            rep.skipped.push_back(bn.name + ": input is not the sole output of an f32 Conv2D/Linear");
            ++i;
            continue;
        }
        const auto& gamma = out.param(bn.params[0]).values<float>();
        const auto& beta = out.param(bn.params[1]).values<float>();
        const auto& mean = out.param(bn.params[2]).values<float>();
        const auto& var = out.param(bn.params[3]).values<float>();
        auto& w = out.param(prod->params[0]).values<float>();
        auto& b = out.param(prod->params[1]).values<float>();
        const auto channels = b.size();
        const auto per = w.size() / channels;
        for (std::size_t c = 0; c < channels; ++c) {
            const double k = static_cast<double>(gamma[c]) / std::sqrt(static_cast<double>(var[c]) + bn.attrs.epsilon);
            for (std::size_t j = 0; j < per; ++j) w[c * per + j] = static_cast<float>(w[c * per + j] * k);
            b[c] = static_cast<float>((static_cast<double>(b[c]) - mean[c]) * k + beta[c]);
        }
        rep.applied.push_back(bn.name + " folded into " + prod->name);
        for (const auto& p : bn.params) out.params.erase(p);
        const auto p_idx = index_of(out, prod);
        splice_out(out, p_idx, i);
    }
    infer_shapes_inplace(out);
    if (report) *report = std::move(rep);
    return out;
}

Graph fuse_relu(const Graph& g, PassReport* report) {
    validate(g);
    Graph out = g;
    PassReport rep{"fuse_relu", {}, {}};
    for (std::size_t i = 0; i < out.nodes.size();) {
        const Node& relu = out.nodes[i];
        if (relu.kind != OpKind::ReLU || out.edge(relu.inputs[0]).type != ElemType::U8) {
            ++i;
            continue;
        }
        const Node* prod = sole_producer(out, relu.inputs[0]);
        if (!prod || (prod->kind != OpKind::QLinearConv && prod->kind != OpKind::QLinearMatMul)) {
            rep.skipped.push_back(relu.name + ": input is not the sole output of a quantized conv/matmul");
            ++i;
            continue;
        }
        const auto zp = out.edge(prod->outputs[0]).quant->zero_point;
        const auto p_idx = index_of(out, prod);
        out.nodes[p_idx].attrs.clamp_min = std::max(out.nodes[p_idx].attrs.clamp_min, zp);
        rep.applied.push_back(relu.name + " fused into " + prod->name + " (clamp " + std::to_string(zp) + "..255)");
        splice_out(out, p_idx, i);
    }
    infer_shapes_inplace(out);
    if (report) *report = std::move(rep);
    return out;
}

} // namespace tinyforge
