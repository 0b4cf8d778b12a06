// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/codegen.hpp"

#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>

#include "tinyforge/bytes.hpp"
#include "tinyforge/prune.hpp"

namespace tinyforge {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    if (s.find_first_of(".en") == std::string::npos) s += ".0";
    return s;
}

const char* ctype(ElemType t) {
    switch (t) {
    case ElemType::F32: return "float";
    case ElemType::U8: return "uint8_t";
    case ElemType::I32: return "int32_t";
    }
    return "void";
}

std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

/// Symbol tables shared by plan and source rendering.
struct Symbols {
    std::string prefix;
    std::map<std::string, std::size_t> param_index;
    std::vector<std::string> acts; // edge names in emission order
    std::map<std::string, std::size_t> act_index;
    std::map<std::string, std::size_t> conv_index;
    std::vector<std::string> convs;

    std::string param(const std::string& n) const { return "&" + prefix + "_p" + std::to_string(param_index.at(n)); }
    std::string act(const std::string& e) const { return "&" + prefix + "_a" + std::to_string(act_index.at(e)); }
};

Symbols make_symbols(const Graph& g, const PackedStream& stream, const std::string& prefix) {
    Symbols s;
    s.prefix = prefix;
    auto names = pack_order(g);
    if (names.size() != stream.entries.size()) {
        throw ModelError("weight stream has " + std::to_string(stream.entries.size()) + " tensors, model expects " +
                         std::to_string(names.size()));
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& e = stream.entries[i];
        const auto& p = g.param(names[i]);
        if (e.shape != p.desc.shape || e.type != p.desc.type) {
            throw ModelError("weight stream tensor " + std::to_string(i) + " does not match parameter '" + names[i] + "'");
        }
        s.param_index[names[i]] = i;
    }
    auto add_act = [&](const std::string& e) {
        if (s.act_index.emplace(e, s.acts.size()).second) s.acts.push_back(e);
    };
    for (const auto& in : g.inputs) add_act(in);
    for (auto i : toposort(g)) {
        const Node& n = g.nodes[i];
        for (const auto& o : n.outputs) add_act(o);
        if (n.kind == OpKind::Conv2D || n.kind == OpKind::QLinearConv) {
            s.conv_index[n.name] = s.convs.size();
            s.convs.push_back(n.name);
        }
    }
    return s;
}

std::string buffer(const Graph& g, const MemoryPlan& plan, const Symbols& sym, const std::string& edge) {
    if (g.is_input(edge)) return "input";
    if (g.is_output(edge)) return "output";
    auto it = plan.placements.find(edge);
    if (it == plan.placements.end()) throw ModelError("memory plan has no placement for edge '" + edge + "'");
    return "(" + std::string(ctype(g.edge(edge).type)) + "*)(" + sym.prefix + "_heap + " + std::to_string(it->second.offset) + ")";
}

std::string scratch(const Graph& g, const MemoryPlan& plan, const Symbols& sym, const Node& n) {
    auto it = plan.placements.find(scratch_name(n.name));
    if (it == plan.placements.end()) throw ModelError("memory plan has no scratch buffer for '" + n.name + "'");
    return "(" + std::string(ctype(g.edge(n.inputs[0]).type)) + "*)(" + sym.prefix + "_heap + " +
           std::to_string(it->second.offset) + ")";
}

EmitCall make_call(const Graph& g, const MemoryPlan& plan, const Symbols& sym, const Node& n) {
    EmitCall c;
    c.node = n.name;
    const bool u8_in = g.edge(n.inputs[0]).type == ElemType::U8;
    auto in = [&](std::size_t i = 0) { return buffer(g, plan, sym, n.inputs[i]); };
    auto out = [&] { return buffer(g, plan, sym, n.outputs[0]); };
    auto ain = sym.act(n.inputs[0]);
    auto aout = sym.act(n.outputs[0]);
    switch (n.kind) {
    case OpKind::Conv2D:
    case OpKind::QLinearConv:
        c.function = n.kind == OpKind::Conv2D ? "dnnrt_conv2d_f32" : "dnnrt_qlinear_conv_u8";
        c.args = {"payload", sym.param(n.params[0]), sym.param(n.params[1]),
                  "&" + sym.prefix + "_k" + std::to_string(sym.conv_index.at(n.name)), ain, in(), aout, out(),
                  scratch(g, plan, sym, n)};
        break;
    case OpKind::Linear:
        c.function = "dnnrt_linear_f32";
        c.args = {"payload", sym.param(n.params[0]), sym.param(n.params[1]), ain, in(), aout, out()};
        break;
    case OpKind::QLinearMatMul:
        c.function = "dnnrt_qlinear_matmul_u8";
        c.args = {"payload", sym.param(n.params[0]), sym.param(n.params[1]), std::to_string(n.attrs.clamp_min),
                  ain, in(), aout, out()};
        break;
    case OpKind::BatchNorm:
        c.function = "dnnrt_batchnorm_f32";
        c.args = {"payload", sym.param(n.params[0]), sym.param(n.params[1]), sym.param(n.params[2]),
                  sym.param(n.params[3]), fmt_double(n.attrs.epsilon), ain, in(), out()};
        break;
    case OpKind::MaxPool:
        c.function = u8_in ? "dnnrt_maxpool_u8" : "dnnrt_maxpool_f32";
        c.args = {ain, in(), std::to_string(n.attrs.pool), aout, out()};
        break;
    case OpKind::ReLU:
        c.function = u8_in ? "dnnrt_relu_u8" : "dnnrt_relu_f32";
        c.args = {ain, in(), out()};
        break;
    case OpKind::Softmax:
        c.function = "dnnrt_softmax_f32";
        c.args = {ain, in(), out()};
        break;
    case OpKind::Add:
        c.function = "dnnrt_add_f32";
        c.args = {ain, in(0), in(1), out()};
        break;
    case OpKind::Flatten:
        c.function = "dnnrt_flatten";
        c.args = {ain, in(), out()};
        break;
    case OpKind::QuantizeLinear:
        c.function = "dnnrt_quantize_linear";
        c.args = {ain, in(), aout, out()};
        break;
    case OpKind::DequantizeLinear:
        c.function = "dnnrt_dequantize_linear";
        c.args = {ain, in(), aout, out()};
        break;
    default: throw ModelError("no runtime implementation for " + std::string(to_string(n.kind)) + " node '" + n.name + "'");
    }
    return c;
}

std::string bytes_literal(const Bytes& b) {
    std::string s;
    s.reserve(b.size() * 6);
    char buf[8];
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (i % 16 == 0) s += "\n   ";
        std::snprintf(buf, sizeof buf, " 0x%02x,", b[i]);
        s += buf;
    }
    return s;
}

std::string act_dims(const Shape& s) {
    std::int64_t c = 1, h = 1, w = 1;
    if (s.size() == 1) c = s[0];
    else if (s.size() == 3) c = s[0], h = s[1], w = s[2];
    else throw ModelError("runtime activations must have rank 1 or 3, got " + shape_str(s));
    return std::to_string(c) + "u, " + std::to_string(h) + "u, " + std::to_string(w) + "u";
}

} // namespace

std::string sanitize_identifier(const std::string& name) {
    std::string s;
    for (char c : name) s += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    if (s.empty() || std::isdigit(static_cast<unsigned char>(s[0]))) s = "m_" + s;
    return s;
}

EmitPlan make_emit_plan(const Graph& g, const PackedStream& stream, const MemoryPlan& plan, const std::string& name) {
    validate(g);
    if (g.inputs.size() != 1 || g.outputs.size() != 1) {
        throw UsageError("code emission needs exactly one graph input and one output");
    }
    EmitPlan ep;
    ep.prefix = sanitize_identifier(name);
    ep.init_fn = ep.prefix + "_init";
    ep.infer_fn = ep.prefix + "_infer";
    ep.input_ctype = ctype(g.edge(g.inputs[0]).type);
    ep.output_ctype = ctype(g.edge(g.outputs[0]).type);
    ep.weight_bytes = stream.bytes.size();
    ep.heap_bytes = plan.peak;
    auto sym = make_symbols(g, stream, ep.prefix);
    for (auto i : toposort(g)) ep.calls.push_back(make_call(g, plan, sym, g.nodes[i]));
    return ep;
}

EmittedSources emit(const Graph& g, const PackedStream& stream, const MemoryPlan& plan, const std::string& name) {
    auto ep = make_emit_plan(g, stream, plan, name);
    auto sym = make_symbols(g, stream, ep.prefix);
    const auto& p = ep.prefix;
    const auto P = upper(p);
    const auto in_n = numel(g.edge(g.inputs[0]).shape);
    const auto out_n = numel(g.edge(g.outputs[0]).shape);
    EmittedSources out;

    std::ostringstream h;
    h << "/* Generated by tinyforge from model '" << g.name << "'. Do not edit. */\n"
      << "#ifndef " << P << "_MODEL_H\n#define " << P << "_MODEL_H\n\n"
      << "#include <stdint.h>\n\n#include \"dnnrt.h\"\n\n"
      << "#ifdef __cplusplus\nextern \"C\" {\n#endif\n\n"
      << "#define " << P << "_INPUT_SIZE " << in_n << "u\n"
      << "#define " << P << "_OUTPUT_SIZE " << out_n << "u\n"
      << "#define " << P << "_HEAP_BYTES " << ep.heap_bytes << "u\n"
      << "#define " << P << "_WEIGHT_BYTES " << ep.weight_bytes << "u\n\n"
      << "extern const uint8_t " << p << "_weights[" << ep.weight_bytes << "];\n\n"
      << "/* Checks the weight stream header. Call once before " << ep.infer_fn << ". */\n"
      << "dnnrt_status " << ep.init_fn << "(void);\n\n"
      << "/* One inference. All intermediate tensors share one static buffer, so\n"
      << "   calls must not overlap (not reentrant). */\n"
      << "dnnrt_status " << ep.infer_fn << "(const " << ep.input_ctype << "* input, " << ep.output_ctype
      << "* output);\n\n"
      << "#ifdef __cplusplus\n}\n#endif\n\n#endif\n";
    out.header = h.str();

    std::ostringstream d;
    d << "/* Generated by tinyforge. Weight stream, " << ep.weight_bytes << " bytes. */\n"
      << "#include \"model.h\"\n\n"
      << "const uint8_t " << p << "_weights[" << ep.weight_bytes << "] DNNRT_ALIGNED(4) = {"
      << bytes_literal(stream.bytes) << "\n};\n";
    out.data = d.str();

    std::ostringstream c;
    c << "/* Generated by tinyforge from model '" << g.name << "'. Do not edit. */\n"
      << "#include \"model.h\"\n\n";
    for (std::size_t i = 0; i < stream.entries.size(); ++i) {
        const auto& e = stream.entries[i];
        std::uint32_t dims[4] = {0, 0, 0, 0};
        for (std::size_t k = 0; k < e.shape.size(); ++k) dims[k] = static_cast<std::uint32_t>(e.shape[k]);
        c << "static const dnnrt_param " << p << "_p" << i << " = {" << e.offset << "u, " << e.nbytes << "u, "
          << int(e.type) << ", " << int(e.layout) << ", " << e.shape.size() << ", " << int(e.index_bytes) << ", {"
          << dims[0] << "u, " << dims[1] << "u, " << dims[2] << "u, " << dims[3] << "u}, " << e.nnz << "u, " << e.rows
          << "u, " << e.cols << "u, " << e.col_ind_offset << "u, " << e.row_ptr_offset << "u, "
          << fmt_double(e.quant ? e.quant->scale : 0.0) << ", " << (e.quant ? e.quant->zero_point : 0)
          << "}; /* " << e.name << " */\n";
    }
    if (!stream.entries.empty()) c << "\n";
    for (std::size_t i = 0; i < sym.acts.size(); ++i) {
        const auto& desc = g.edge(sym.acts[i]);
        c << "static const dnnrt_act " << p << "_a" << i << " = {" << int(desc.type) << ", " << act_dims(desc.shape)
          << ", " << fmt_double(desc.quant ? desc.quant->scale : 0.0) << ", "
          << (desc.quant ? desc.quant->zero_point : 0) << "}; /* " << sym.acts[i] << " */\n";
    }
    c << "\n";
    for (std::size_t i = 0; i < sym.convs.size(); ++i) {
        const auto& a = g.find_node(sym.convs[i])->attrs;
        c << "static const dnnrt_conv_attrs " << p << "_k" << i << " = {" << a.kernel << ", " << a.stride << ", "
          << a.pad << ", " << a.clamp_min << "}; /* " << sym.convs[i] << " */\n";
    }
    if (!sym.convs.empty()) c << "\n";
    if (ep.heap_bytes > 0) c << "static uint8_t " << p << "_heap[" << ep.heap_bytes << "] DNNRT_ALIGNED(4);\n\n";
    c << "dnnrt_status " << ep.init_fn << "(void) {\n"
      << "    return dnnrt_stream_check(" << p << "_weights, " << ep.weight_bytes << "u);\n}\n\n"
      << "dnnrt_status " << ep.infer_fn << "(const " << ep.input_ctype << "* input, " << ep.output_ctype
      << "* output) {\n"
      << "    const uint8_t* payload = " << p << "_weights + " << stream.payload_offset() << "u;\n"
      << "    (void)payload;\n";
    for (const auto& call : ep.calls) {
        c << "    DNNRT_CHECK(" << call.function << "(";
        for (std::size_t i = 0; i < call.args.size(); ++i) c << (i ? ", " : "") << call.args[i];
        c << ")); /* " << call.node << " */\n";
    }
    c << "    return DNNRT_OK;\n}\n";
    out.source = c.str();
    return out;
}

void write_sources(const std::filesystem::path& dir, const EmittedSources& src, bool with_runtime_header) {
    write_text(dir / "model.h", src.header);
    write_text(dir / "model.c", src.source);
    write_text(dir / "model_data.c", src.data);
    if (with_runtime_header) write_text(dir / "dnnrt.h", runtime_header());
}

nlohmann::json emit_report(const Graph& g, const PackedStream& stream, const MemoryPlan& plan) {
    using nlohmann::json;
    json r;
    r["model"] = g.name;
    r["flash_bytes"] = stream.bytes.size();
    r["sram_overhead_bytes"] = 0;
    r["sram_bytes"] = plan.peak;
    r["peak_bytes"] = plan.peak;
    r["naive_bytes"] = plan.naive;
    const auto current = weight_count(g);
    r["params_before"] = g.meta.count("baseline_weight_count")
                             ? static_cast<std::int64_t>(g.meta.at("baseline_weight_count"))
                             : current;
    r["params_after"] = current;
    r["nonzero_params"] = nonzero_weight_count(g);
    r["realized_sparsity"] = realized_sparsity(g);
    json layers = json::array();
    for (const auto& e : stream.entries) {
        if (!e.crs_candidate) continue;
        layers.push_back({{"param", e.name},
                          {"type", std::string(to_string(e.type))},
                          {"rows", e.cost.dense_bytes ? matrix_view(e.shape).first : 0},
                          {"cols", e.cost.dense_bytes ? matrix_view(e.shape).second : 0},
                          {"dense_bytes", e.cost.dense_bytes},
                          {"crs_bytes", e.cost.crs_bytes},
                          {"crs_feasible", e.cost.feasible},
                          {"layout", std::string(to_string(e.layout))}});
    }
    r["layers"] = std::move(layers);
    json tensors = json::array();
    for (const auto& e : stream.entries) {
        tensors.push_back({{"name", e.name}, {"offset", e.offset}, {"nbytes", e.nbytes},
                           {"layout", std::string(to_string(e.layout))}});
    }
    r["weights"] = std::move(tensors);
    json buffers = json::array();
    for (const auto& [name, p] : plan.placements) {
        buffers.push_back({{"name", name}, {"offset", p.offset}, {"size", p.size}, {"alloc_op", p.alloc_op},
                           {"release_op", p.release_op}});
    }
    r["buffers"] = std::move(buffers);
    return r;
}

} // namespace tinyforge
