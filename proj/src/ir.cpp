// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/ir.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <unordered_map>

namespace tinyforge {

namespace {

struct KindName {
    OpKind kind;
    std::string_view name;
};

constexpr std::array<KindName, 12> kKindNames{{
    {OpKind::Conv2D, "Conv2D"},
    {OpKind::Linear, "Linear"},
    {OpKind::BatchNorm, "BatchNorm"},
    {OpKind::MaxPool, "MaxPool"},
    {OpKind::ReLU, "ReLU"},
    {OpKind::Softmax, "Softmax"},
    {OpKind::QLinearConv, "QLinearConv"},
    {OpKind::QLinearMatMul, "QLinearMatMul"},
    {OpKind::QuantizeLinear, "QuantizeLinear"},
    {OpKind::DequantizeLinear, "DequantizeLinear"},
    {OpKind::Add, "Add"},
    {OpKind::Flatten, "Flatten"},
}};

[[noreturn]] void fail(const Node& n, const std::string& what) {
    throw ModelError("node '" + n.name + "' (" + std::string(to_string(n.kind)) + "): " + what);
}

void check_param(const Graph& g, const Node& n, std::size_t idx, ElemType type, std::size_t rank) {
    const auto& pname = n.params[idx];
    auto it = g.params.find(pname);
    if (it == g.params.end()) fail(n, "unknown parameter '" + pname + "'");
    const auto& p = it->second;
    if (p.desc.type != type) {
        fail(n, "parameter '" + pname + "' has type " + std::string(to_string(p.desc.type)) + ", expected " +
                    std::string(to_string(type)));
    }
    if (p.desc.shape.size() != rank) {
        fail(n, "parameter '" + pname + "' has shape " + shape_str(p.desc.shape) + ", expected rank " +
                    std::to_string(rank));
    }
}

const Shape& pshape(const Graph& g, const Node& n, std::size_t idx) { return g.params.at(n.params[idx]).desc.shape; }

} // namespace

std::string_view to_string(OpKind k) {
    for (const auto& kn : kKindNames) {
        if (kn.kind == k) return kn.name;
    }
    return "?";
}

std::optional<OpKind> op_kind_from_string(std::string_view s) {
    for (const auto& kn : kKindNames) {
        if (kn.name == s) return kn.kind;
    }
    return std::nullopt;
}

const OpSignature& signature(OpKind k) {
    //                                   in prm  conv   pool   eps    clamp
    static const OpSignature conv{1, 2, true, false, false, false};
    static const OpSignature qconv{1, 2, true, false, false, true};
    static const OpSignature linear{1, 2, false, false, false, false};
    static const OpSignature qlinear{1, 2, false, false, false, true};
    static const OpSignature bn{1, 4, false, false, true, false};
    static const OpSignature pool{1, 0, false, true, false, false};
    static const OpSignature unary{1, 0, false, false, false, false};
    static const OpSignature binary{2, 0, false, false, false, false};
    switch (k) {
    case OpKind::Conv2D: return conv;
    case OpKind::QLinearConv: return qconv;
    case OpKind::Linear: return linear;
    case OpKind::QLinearMatMul: return qlinear;
    case OpKind::BatchNorm: return bn;
    case OpKind::MaxPool: return pool;
    case OpKind::Add: return binary;
    default: return unary;
    }
}

bool is_weight_layer(OpKind k) {
    return k == OpKind::Conv2D || k == OpKind::Linear || k == OpKind::QLinearConv || k == OpKind::QLinearMatMul;
}

const Node* Graph::find_node(std::string_view node_name) const {
    for (const auto& n : nodes) {
        if (n.name == node_name) return &n;
    }
    return nullptr;
}

Node* Graph::find_node(std::string_view node_name) {
    return const_cast<Node*>(static_cast<const Graph*>(this)->find_node(node_name));
}

std::optional<std::size_t> Graph::producer(std::string_view edge_name) const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (const auto& o : nodes[i].outputs) {
            if (o == edge_name) return i;
        }
    }
    return std::nullopt;
}

std::vector<std::size_t> Graph::consumers(std::string_view edge_name) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (const auto& in : nodes[i].inputs) {
            if (in == edge_name) {
                out.push_back(i);
                break;
            }
        }
    }
    return out;
}

bool Graph::is_input(std::string_view e) const { return std::find(inputs.begin(), inputs.end(), e) != inputs.end(); }

bool Graph::is_output(std::string_view e) const {
    return std::find(outputs.begin(), outputs.end(), e) != outputs.end();
}

ParamTensor& Graph::param(const std::string& n) {
    auto it = params.find(n);
    if (it == params.end()) throw ModelError("unknown parameter '" + n + "'");
    return it->second;
}

const ParamTensor& Graph::param(const std::string& n) const { return const_cast<Graph*>(this)->param(n); }

const TensorDesc& Graph::edge(const std::string& n) const {
    auto it = edges.find(n);
    if (it == edges.end()) throw ModelError("edge '" + n + "' has no descriptor (run shape inference)");
    return it->second;
}

std::string Graph::unique_name(const std::string& base) const {
    auto used = [&](const std::string& s) {
        if (edges.count(s) || params.count(s) || find_node(s)) return true;
        for (const auto& n : nodes) {
            for (const auto& e : n.inputs) {
                if (e == s) return true;
            }
            for (const auto& e : n.outputs) {
                if (e == s) return true;
            }
        }
        return is_input(s) || is_output(s);
    };
    if (!used(base)) return base;
    for (int i = 1;; ++i) {
        auto candidate = base + "_" + std::to_string(i);
        if (!used(candidate)) return candidate;
    }
}

void validate(const Graph& g) {
    std::set<std::string> node_names;
    std::unordered_map<std::string, std::string> producer_of;
    for (const auto& in : g.inputs) {
        if (!producer_of.emplace(in, "<graph input>").second) {
            throw ModelError("graph input '" + in + "' declared twice");
        }
    }
    for (const auto& n : g.nodes) {
        if (n.name.empty()) throw ModelError("node with empty name");
        if (!node_names.insert(n.name).second) throw ModelError("duplicate node name '" + n.name + "'");
        for (const auto& o : n.outputs) {
            auto [it, fresh] = producer_of.emplace(o, n.name);
            if (!fresh) fail(n, "edge '" + o + "' already produced by '" + it->second + "'");
            if (g.params.count(o)) fail(n, "edge '" + o + "' collides with a parameter name");
        }
    }

    for (const auto& n : g.nodes) {
        const auto& sig = signature(n.kind);
        if (static_cast<int>(n.inputs.size()) != sig.inputs) {
            fail(n, "expects " + std::to_string(sig.inputs) + " input(s), got " + std::to_string(n.inputs.size()));
        }
        if (n.outputs.size() != 1) fail(n, "expects 1 output, got " + std::to_string(n.outputs.size()));
        if (static_cast<int>(n.params.size()) != sig.params) {
            fail(n, "expects " + std::to_string(sig.params) + " parameter(s), got " + std::to_string(n.params.size()));
        }

        const auto& a = n.attrs;
        if (sig.conv_attrs) {
            if (a.kernel <= 0 || a.stride <= 0 || a.pad < 0) fail(n, "kernel and stride must be positive, pad >= 0");
        } else if (a.kernel != 0 || a.stride != 0 || a.pad != 0) {
            fail(n, "kernel/stride/pad attributes are not valid for this op");
        }
        if (sig.pool_attr) {
            if (a.pool <= 0) fail(n, "pool size must be positive");
        } else if (a.pool != 0) {
            fail(n, "pool attribute is not valid for this op");
        }
        if (sig.epsilon_attr) {
            if (a.epsilon < 0.0) fail(n, "epsilon must be >= 0");
        } else if (a.epsilon != 0.0) {
            fail(n, "epsilon attribute is not valid for this op");
        }
        if (sig.clamp_attr) {
            if (a.clamp_min < 0 || a.clamp_min > 255) fail(n, "clamp_min must lie in [0,255]");
        } else if (a.clamp_min != 0) {
            fail(n, "clamp_min attribute is not valid for this op");
        }

        for (const auto& in : n.inputs) {
            if (!producer_of.count(in)) {
                if (g.params.count(in)) fail(n, "parameter '" + in + "' used as an activation input");
                fail(n, "input edge '" + in + "' is never produced (dangling edge)");
            }
        }

        for (const auto& pname : n.params) {
            auto it = g.params.find(pname);
            if (it == g.params.end()) fail(n, "unknown parameter '" + pname + "'");
        }
        switch (n.kind) {
        case OpKind::Conv2D:
        case OpKind::QLinearConv: {
            bool q = n.kind == OpKind::QLinearConv;
            check_param(g, n, 0, q ? ElemType::U8 : ElemType::F32, 4);
            check_param(g, n, 1, q ? ElemType::I32 : ElemType::F32, 1);
            const auto& w = pshape(g, n, 0);
            if (w[2] != a.kernel || w[3] != a.kernel) fail(n, "weight shape " + shape_str(w) + " disagrees with kernel");
            if (pshape(g, n, 1)[0] != w[0]) fail(n, "bias length does not match filter count");
            break;
        }
        case OpKind::Linear:
        case OpKind::QLinearMatMul: {
            bool q = n.kind == OpKind::QLinearMatMul;
            check_param(g, n, 0, q ? ElemType::U8 : ElemType::F32, 2);
            check_param(g, n, 1, q ? ElemType::I32 : ElemType::F32, 1);
            if (pshape(g, n, 1)[0] != pshape(g, n, 0)[0]) fail(n, "bias length does not match output count");
            break;
        }
        case OpKind::BatchNorm:
            for (std::size_t i = 0; i < 4; ++i) check_param(g, n, i, ElemType::F32, 1);
            for (std::size_t i = 1; i < 4; ++i) {
                if (pshape(g, n, i) != pshape(g, n, 0)) fail(n, "batch-norm parameter lengths differ");
            }
            for (float v : g.params.at(n.params[3]).values<float>()) {
                if (!(v >= 0.0f)) fail(n, "running variance must be >= 0");
            }
            break;
        default: break;
        }
    }

    for (const auto& [pname, p] : g.params) {
        if (p.desc.shape.empty()) throw ModelError("parameter '" + pname + "' has an empty shape");
        for (auto d : p.desc.shape) {
            if (d <= 0) throw ModelError("parameter '" + pname + "' has non-positive dimension");
        }
        if (data_type(p.data) != p.desc.type) throw ModelError("parameter '" + pname + "' data type mismatch");
        if (static_cast<std::int64_t>(data_size(p.data)) != numel(p.desc.shape)) {
            throw ModelError("parameter '" + pname + "' value count does not match shape " + shape_str(p.desc.shape));
        }
        if (p.desc.type == ElemType::U8 && !p.desc.quant) {
            throw ModelError("u8 parameter '" + pname + "' carries no quantization parameters");
        }
        if (p.desc.layout == Layout::Crs && p.desc.shape.size() != 2 && p.desc.shape.size() != 4) {
            throw ModelError("parameter '" + pname + "' uses CRS layout but is not matrix-shaped");
        }
    }

    for (const auto& o : g.outputs) {
        if (!producer_of.count(o)) throw ModelError("graph output '" + o + "' is never produced");
    }
    for (const auto& [ename, d] : g.edges) {
        if (d.type == ElemType::U8 && !d.quant) {
            throw ModelError("u8 edge '" + ename + "' carries no quantization parameters");
        }
    }

    (void)toposort(g);
}

std::vector<std::size_t> toposort(const Graph& g) {
    const std::size_t n = g.nodes.size();
    std::unordered_map<std::string, std::size_t> producer_of;
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& o : g.nodes[i].outputs) producer_of[o] = i;
    }
    std::vector<std::vector<std::size_t>> succ(n);
    std::vector<std::size_t> indegree(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::set<std::size_t> deps;
        for (const auto& in : g.nodes[i].inputs) {
            auto it = producer_of.find(in);
            if (it != producer_of.end()) deps.insert(it->second);
        }
        for (auto d : deps) {
            succ[d].push_back(i);
            ++indegree[i];
        }
    }
    std::set<std::size_t> ready;
    for (std::size_t i = 0; i < n; ++i) {
        if (indegree[i] == 0) ready.insert(i);
    }
    std::vector<std::size_t> order;
    order.reserve(n);
    while (!ready.empty()) {
        auto i = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(i);
        for (auto s : succ[i]) {
            if (--indegree[s] == 0) ready.insert(s);
        }
    }
    if (order.size() != n) {
        for (std::size_t i = 0; i < n; ++i) {
            if (indegree[i] != 0) throw ModelError("cycle detected involving node '" + g.nodes[i].name + "'");
        }
    }
    return order;
}

namespace {

void require_type(const Node& n, const TensorDesc& d, ElemType t, const std::string& edge) {
    if (d.type != t) {
        fail(n, "input '" + edge + "' is " + std::string(to_string(d.type)) + " but the op expects " +
                    std::string(to_string(t)) + " (missing quantize/dequantize bridge?)");
    }
}

std::int64_t conv_out_dim(const Node& n, std::int64_t in, int k, int s, int p) {
    std::int64_t padded = in + 2 * p;
    if (padded < k) fail(n, "kernel " + std::to_string(k) + " exceeds padded input extent " + std::to_string(padded));
    if (s > padded) fail(n, "stride " + std::to_string(s) + " exceeds padded input extent " + std::to_string(padded));
    std::int64_t out = (padded - k) / s + 1;
    if (out <= 0) fail(n, "inferred non-positive output dimension");
    return out;
}

} // namespace

void infer_shapes_inplace(Graph& g) {
    validate(g);
    std::map<std::string, TensorDesc> fresh;
    for (const auto& in : g.inputs) {
        auto it = g.edges.find(in);
        if (it == g.edges.end() || it->second.shape.empty()) {
            throw ModelError("graph input '" + in + "' has no declared shape");
        }
        for (auto d : it->second.shape) {
            if (d <= 0) throw ModelError("graph input '" + in + "' has non-positive dimension");
        }
        if (it->second.type == ElemType::U8 && !it->second.quant) {
            throw ModelError("u8 graph input '" + in + "' carries no quantization parameters");
        }
        fresh[in] = it->second;
    }

    for (auto idx : toposort(g)) {
        const Node& n = g.nodes[idx];
        const auto& in_name = n.inputs[0];
        const TensorDesc in = fresh.at(in_name);
        const auto& out_name = n.outputs[0];
        std::optional<QuantParams> prior;
        if (auto it = g.edges.find(out_name); it != g.edges.end()) prior = it->second.quant;

        TensorDesc out;
        out.quant = prior;
        switch (n.kind) {
        case OpKind::Conv2D:
        case OpKind::QLinearConv: {
            require_type(n, in, n.kind == OpKind::Conv2D ? ElemType::F32 : ElemType::U8, in_name);
            if (in.shape.size() != 3) fail(n, "expects a [C,H,W] input, got " + shape_str(in.shape));
            const auto& w = pshape(g, n, 0);
            if (w[1] != in.shape[0]) {
                fail(n, "input has " + std::to_string(in.shape[0]) + " channels, weight expects " + std::to_string(w[1]));
            }
            const auto& a = n.attrs;
            out.shape = {w[0], conv_out_dim(n, in.shape[1], a.kernel, a.stride, a.pad),
                         conv_out_dim(n, in.shape[2], a.kernel, a.stride, a.pad)};
            out.type = in.type;
            break;
        }
        case OpKind::Linear:
        case OpKind::QLinearMatMul: {
            require_type(n, in, n.kind == OpKind::Linear ? ElemType::F32 : ElemType::U8, in_name);
            const auto& w = pshape(g, n, 0);
            if (in.shape.size() != 1 || in.shape[0] != w[1]) {
                fail(n, "input " + shape_str(in.shape) + " does not match weight " + shape_str(w) +
                            " (Linear input size mismatch)");
            }
            out.shape = {w[0]};
            out.type = in.type;
            break;
        }
        case OpKind::BatchNorm: {
            require_type(n, in, ElemType::F32, in_name);
            if (in.shape.size() != 1 && in.shape.size() != 3) fail(n, "expects a [C] or [C,H,W] input");
            if (pshape(g, n, 0)[0] != in.shape[0]) fail(n, "channel count does not match batch-norm parameters");
            out.shape = in.shape;
            break;
        }
        case OpKind::MaxPool: {
            if (in.shape.size() != 3) fail(n, "expects a [C,H,W] input, got " + shape_str(in.shape));
            auto h = in.shape[1] / n.attrs.pool;
            auto w = in.shape[2] / n.attrs.pool;
            if (h <= 0 || w <= 0) fail(n, "pool size exceeds input extent");
            out.shape = {in.shape[0], h, w};
            out.type = in.type;
            out.quant = in.quant;
            break;
        }
        case OpKind::ReLU:
            out.shape = in.shape;
            out.type = in.type;
            if (in.type == ElemType::U8) out.quant = in.quant;
            break;
        case OpKind::Flatten:
            out.shape = {numel(in.shape)};
            out.type = in.type;
            if (in.type == ElemType::U8) out.quant = in.quant;
            break;
        case OpKind::Softmax:
            require_type(n, in, ElemType::F32, in_name);
            if (in.shape.size() != 1) fail(n, "expects a rank-1 input");
            out.shape = in.shape;
            break;
        case OpKind::Add: {
            require_type(n, in, ElemType::F32, in_name);
            const auto& other = fresh.at(n.inputs[1]);
            require_type(n, other, ElemType::F32, n.inputs[1]);
            if (other.shape != in.shape) fail(n, "operand shapes differ: " + shape_str(in.shape) + " vs " + shape_str(other.shape));
            out.shape = in.shape;
            break;
        }
        case OpKind::QuantizeLinear:
            require_type(n, in, ElemType::F32, in_name);
            out.shape = in.shape;
            out.type = ElemType::U8;
            break;
        case OpKind::DequantizeLinear:
            require_type(n, in, ElemType::U8, in_name);
            out.shape = in.shape;
            out.type = ElemType::F32;
            break;
        }
        if (out.type == ElemType::U8 && !out.quant) {
            fail(n, "u8 output '" + out_name + "' carries no quantization parameters");
        }
        fresh[out_name] = out;
    }
    g.edges = std::move(fresh);
}

Graph infer_shapes(Graph g, const Shape& input_shape) {
    if (g.inputs.size() != 1) throw ModelError("infer_shapes with one shape requires exactly one graph input");
    auto& desc = g.edges[g.inputs[0]];
    if (!desc.shape.empty() && desc.shape.size() != input_shape.size()) {
        throw ModelError("input shape " + shape_str(input_shape) + " does not match declared rank " +
                         std::to_string(desc.shape.size()));
    }
    desc.shape = input_shape;
    infer_shapes_inplace(g);
    return g;
}

std::int64_t weight_count(const Graph& g) {
    std::int64_t total = 0;
    for (const auto& n : g.nodes) {
        if (is_weight_layer(n.kind)) total += numel(g.param(n.params[0]).desc.shape);
    }
    return total;
}

std::int64_t nonzero_weight_count(const Graph& g) {
    std::int64_t total = 0;
    for (const auto& n : g.nodes) {
        if (!is_weight_layer(n.kind)) continue;
        const auto& p = g.param(n.params[0]);
        if (p.desc.type == ElemType::U8) {
            auto zp = static_cast<std::uint8_t>(p.desc.quant->zero_point);
            for (auto v : p.values<std::uint8_t>()) total += v != zp;
        } else {
            for (auto v : p.values<float>()) total += v != 0.0f;
        }
    }
    return total;
}

} // namespace tinyforge
