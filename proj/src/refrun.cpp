// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/refrun.hpp"

#include <algorithm>

#include "tinyforge/kernels.hpp"
#include "tinyforge/quant.hpp"

namespace tinyforge {

namespace {

[[noreturn]] void fail(const Node& n, const std::string& what) {
    throw ModelError("node '" + n.name + "' (" + std::string(to_string(n.kind)) + "): " + what);
}

const QuantParams& quant_of(const Graph& g, const Node& n, const std::string& edge) {
    const auto& d = g.edge(edge);
    if (!d.quant) fail(n, "edge '" + edge + "' carries no quantization parameters");
    return *d.quant;
}

bool is_int_compute(OpKind k) {
    return k == OpKind::QLinearConv || k == OpKind::QLinearMatMul || k == OpKind::QuantizeLinear ||
           k == OpKind::DequantizeLinear;
}

void check_strict(const Graph& g) {
    // Float work is allowed only ahead of the first QuantizeLinear fed by a
    // graph input and in a trailing Softmax after the final dequantize.
    for (const auto& n : g.nodes) {
        if (is_int_compute(n.kind)) {
            if (n.kind == OpKind::QuantizeLinear && !g.is_input(n.inputs[0])) {
                fail(n, "strict integer mode: requantization through float inside the graph");
            }
            if (n.kind == OpKind::DequantizeLinear) {
                for (auto c : g.consumers(n.outputs[0])) {
                    const auto& cn = g.nodes[c];
                    if (cn.kind != OpKind::Softmax || !g.is_output(cn.outputs[0])) {
                        fail(n, "strict integer mode: dequantized value feeds '" + cn.name + "'");
                    }
                }
            }
            continue;
        }
        if (n.kind == OpKind::Softmax) {
            auto p = g.producer(n.inputs[0]);
            if (p && g.nodes[*p].kind == OpKind::DequantizeLinear && g.is_output(n.outputs[0])) continue;
        }
        if ((n.kind == OpKind::ReLU || n.kind == OpKind::MaxPool || n.kind == OpKind::Flatten) &&
            g.edge(n.inputs[0]).type == ElemType::U8) {
            continue;
        }
        fail(n, "strict integer mode: float operator in integer graph");
    }
}

template <typename T> Tensor make(Shape s, std::vector<T> v) { return Tensor(std::move(s), std::move(v)); }

} // namespace

Interpreter::Interpreter(const Graph& g, RunOptions opts) : g_(&g), opts_(opts) {
    validate(g);
    for (const auto& n : g.nodes) {
        for (const auto& e : n.inputs) (void)g.edge(e);
        for (const auto& e : n.outputs) (void)g.edge(e);
    }
    for (const auto& e : g.inputs) (void)g.edge(e);
    if (opts_.strict_integer) check_strict(g);
    order_ = toposort(g);
    prepared_.resize(g.nodes.size());
    for (std::size_t pos = 0; pos < order_.size(); ++pos) {
        const auto& n = g.nodes[order_[pos]];
        for (const auto& e : n.inputs) last_use_[e] = pos;
    }
    if (opts_.crs == RunOptions::Crs::Dense) return;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const auto& n = g.nodes[i];
        if (!is_weight_layer(n.kind)) continue;
        const auto& w = g.param(n.params[0]);
        auto [rows, cols] = matrix_view(w.desc.shape);
        if (w.desc.type == ElemType::F32) {
            auto m = crs_encode<float>(w.values<float>(), rows, cols, 0.0f);
            if (opts_.crs == RunOptions::Crs::All || crs_feasible(rows, cols, m.nnz(), ElemType::F32).feasible) {
                prepared_[i].crs_f32 = std::move(m);
            }
        } else {
            auto zp = static_cast<std::uint8_t>(w.desc.quant->zero_point);
            auto m = crs_encode<std::uint8_t>(w.values<std::uint8_t>(), rows, cols, zp);
            if (opts_.crs == RunOptions::Crs::All || crs_feasible(rows, cols, m.nnz(), ElemType::U8).feasible) {
                prepared_[i].crs_u8 = std::move(m);
            }
        }
    }
}

Tensor Interpreter::eval_node(std::size_t idx, const std::map<std::string, Tensor>& values) const {
    const Graph& g = *g_;
    const Node& n = g.nodes[idx];
    const Tensor& x = values.at(n.inputs[0]);
    const TensorDesc& out_desc = g.edge(n.outputs[0]);
    const auto& shape = x.shape;
    const bool blas = opts_.backend == RunOptions::Backend::Blas;

    switch (n.kind) {
    case OpKind::Conv2D: {
        const auto& w = g.param(n.params[0]);
        const auto& b = g.param(n.params[1]).values<float>();
        kernels::ConvGeom geo{shape[0], shape[1], shape[2], n.attrs.kernel, n.attrs.stride, n.attrs.pad};
        const auto filters = w.desc.shape[0];
        std::vector<float> col(static_cast<std::size_t>(geo.rows() * geo.cols()));
        kernels::im2col(x.values<float>().data(), geo, 0.0f, col.data());
        std::vector<float> y(static_cast<std::size_t>(filters * geo.cols()));
        if (prepared_[idx].crs_f32) kernels::gemm_crs(*prepared_[idx].crs_f32, geo.cols(), col.data(), y.data());
        else if (blas) kernels::gemm_blas(filters, geo.cols(), geo.rows(), w.values<float>().data(), col.data(), y.data());
        else kernels::gemm(filters, geo.cols(), geo.rows(), w.values<float>().data(), col.data(), y.data());
        for (std::int64_t f = 0; f < filters; ++f) {
            for (std::int64_t p = 0; p < geo.cols(); ++p) y[f * geo.cols() + p] += b[f];
        }
        return make(out_desc.shape, std::move(y));
    }
    case OpKind::Linear: {
        const auto& w = g.param(n.params[0]);
        const auto& b = g.param(n.params[1]).values<float>();
        const auto rows = w.desc.shape[0], cols = w.desc.shape[1];
        std::vector<float> y(static_cast<std::size_t>(rows));
        if (prepared_[idx].crs_f32 || blas) {
            if (prepared_[idx].crs_f32) kernels::gemm_crs(*prepared_[idx].crs_f32, 1, x.values<float>().data(), y.data());
            else kernels::gemm_blas(rows, 1, cols, w.values<float>().data(), x.values<float>().data(), y.data());
            for (std::int64_t r = 0; r < rows; ++r) y[r] += b[r];
        } else {
            kernels::matvec(rows, cols, w.values<float>().data(), x.values<float>().data(), b.data(), y.data());
        }
        return make(out_desc.shape, std::move(y));
    }
    case OpKind::QLinearConv:
    case OpKind::QLinearMatMul: {
        const auto& w = g.param(n.params[0]);
        const auto& b = g.param(n.params[1]).values<std::int32_t>();
        const auto& qx = quant_of(g, n, n.inputs[0]);
        const auto& qy = quant_of(g, n, n.outputs[0]);
        const auto& qw = *w.desc.quant;
        kernels::QuantGemm q;
        q.zp_a = qw.zero_point;
        q.zp_b = qx.zero_point;
        q.zp_c = qy.zero_point;
        q.multiplier = requant_multiplier(qx.scale, qw.scale, qy.scale);
        q.clamp_min = n.attrs.clamp_min;
        q.check_overflow = opts_.strict_integer;
#ifndef NDEBUG
        q.check_overflow = true;
#endif
        const auto filters = w.desc.shape[0];
        const std::uint8_t* src = x.values<std::uint8_t>().data();
        std::vector<std::uint8_t> col;
        std::int64_t k = w.desc.shape[1], cols = 1;
        if (n.kind == OpKind::QLinearConv) {
            kernels::ConvGeom geo{shape[0], shape[1], shape[2], n.attrs.kernel, n.attrs.stride, n.attrs.pad};
            col.resize(static_cast<std::size_t>(geo.rows() * geo.cols()));
            kernels::im2col(src, geo, static_cast<std::uint8_t>(qx.zero_point), col.data());
            src = col.data();
            k = geo.rows();
            cols = geo.cols();
        }
        std::vector<std::uint8_t> y(static_cast<std::size_t>(filters * cols));
        if (prepared_[idx].crs_u8) kernels::qgemm_crs(*prepared_[idx].crs_u8, cols, src, b.data(), q, y.data());
        else kernels::qgemm(filters, cols, k, w.values<std::uint8_t>().data(), src, b.data(), q, y.data());
        return make(out_desc.shape, std::move(y));
    }
    case OpKind::BatchNorm: {
        std::vector<float> y(x.size());
        kernels::batchnorm(x.values<float>().data(), shape[0], numel(shape) / shape[0],
                           g.param(n.params[0]).values<float>().data(), g.param(n.params[1]).values<float>().data(),
                           g.param(n.params[2]).values<float>().data(), g.param(n.params[3]).values<float>().data(),
                           n.attrs.epsilon, y.data());
        return make(out_desc.shape, std::move(y));
    }
    case OpKind::MaxPool: {
        const int p = n.attrs.pool;
        if (x.type() == ElemType::U8) {
            std::vector<std::uint8_t> y(static_cast<std::size_t>(numel(out_desc.shape)));
            kernels::maxpool(x.values<std::uint8_t>().data(), shape[0], shape[1], shape[2], p, y.data());
            return make(out_desc.shape, std::move(y));
        }
        std::vector<float> y(static_cast<std::size_t>(numel(out_desc.shape)));
        kernels::maxpool(x.values<float>().data(), shape[0], shape[1], shape[2], p, y.data());
        return make(out_desc.shape, std::move(y));
    }
    case OpKind::ReLU: {
        if (x.type() == ElemType::U8) {
            auto zp = static_cast<std::uint8_t>(quant_of(g, n, n.inputs[0]).zero_point);
            auto y = x.values<std::uint8_t>();
            for (auto& v : y) v = std::max(v, zp);
            return make(out_desc.shape, std::move(y));
        }
        auto y = x.values<float>();
        for (auto& v : y) v = v < 0.0f ? 0.0f : v;
        return make(out_desc.shape, std::move(y));
    }
    case OpKind::Flatten: return Tensor(out_desc.shape, x.data);
    case OpKind::Softmax: {
        std::vector<float> y(x.size());
        kernels::softmax(x.values<float>(), y);
        return make(out_desc.shape, std::move(y));
    }
    case OpKind::Add: {
        const auto& a = x.values<float>();
        const auto& b = values.at(n.inputs[1]).values<float>();
        std::vector<float> y(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
        return make(out_desc.shape, std::move(y));
    }
    case OpKind::QuantizeLinear: {
        const auto& q = quant_of(g, n, n.outputs[0]);
        const auto& a = x.values<float>();
        std::vector<std::uint8_t> y(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) y[i] = quantize(a[i], q);
        return make(out_desc.shape, std::move(y));
    }
    case OpKind::DequantizeLinear: {
        const auto& q = quant_of(g, n, n.inputs[0]);
        const auto& a = x.values<std::uint8_t>();
        std::vector<float> y(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) y[i] = static_cast<float>(dequantize(a[i], q));
        return make(out_desc.shape, std::move(y));
    }
    }
    fail(n, "unsupported operator");
}

void Interpreter::execute(const Tensor& input, std::map<std::string, Tensor>& values, bool keep_all) const {
    const Graph& g = *g_;
    if (g.inputs.size() != 1) throw ModelError("interpreter expects a single graph input");
    const auto& in_desc = g.edge(g.inputs[0]);
    if (input.shape != in_desc.shape || input.type() != in_desc.type) {
        throw ModelError("input " + shape_str(input.shape) + " " + std::string(to_string(input.type())) +
                         " does not match graph input " + shape_str(in_desc.shape) + " " +
                         std::string(to_string(in_desc.type)));
    }
    values[g.inputs[0]] = input;
    for (std::size_t pos = 0; pos < order_.size(); ++pos) {
        const auto idx = order_[pos];
        const auto& n = g.nodes[idx];
        for (const auto& e : n.inputs) {
            const auto& t = values.at(e);
            if (t.type() != g.edge(e).type) {
                fail(n, "input '" + e + "' holds " + std::string(to_string(t.type())) + " values, expected " +
                            std::string(to_string(g.edge(e).type)));
            }
        }
        values[n.outputs[0]] = eval_node(idx, values);
        if (keep_all) continue;
        for (const auto& e : n.inputs) {
            if (last_use_.at(e) == pos && !g.is_output(e)) values.erase(e);
        }
    }
}

Tensor Interpreter::run(const Tensor& input) const {
    if (g_->outputs.empty()) throw ModelError("graph has no outputs");
    std::map<std::string, Tensor> values;
    execute(input, values, false);
    return values.at(g_->outputs[0]);
}

std::map<std::string, Tensor> Interpreter::trace(const Tensor& input) const {
    std::map<std::string, Tensor> values;
    execute(input, values, true);
    return values;
}

Tensor run(const Graph& g, const Tensor& input, RunOptions opts) { return Interpreter(g, opts).run(input); }

std::map<std::string, Tensor> trace(const Graph& g, const Tensor& input, RunOptions opts) {
    return Interpreter(g, opts).trace(input);
}

std::size_t argmax(const Tensor& t) {
    return std::visit(
        [](const auto& v) -> std::size_t {
            if (v.empty()) throw ModelError("argmax of an empty tensor");
            return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
        },
        t.data);
}

EvalResult evaluate(const Graph& g, const Dataset& data, RunOptions opts) {
    Interpreter it(g, opts);
    EvalResult r;
    r.per_class.resize(static_cast<std::size_t>(std::max(data.classes, 0)));
    r.predictions.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto pred = argmax(it.run(data.input(i)));
        auto label = static_cast<std::size_t>(data.labels[i]);
        r.predictions.push_back(pred);
        if (label >= r.per_class.size()) r.per_class.resize(label + 1);
        ++r.per_class[label].total;
        if (pred == label) {
            ++r.correct;
            ++r.per_class[label].correct;
        }
    }
    r.total = data.size();
    r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
    return r;
}

double argmax_agreement(const Graph& a, const Graph& b, const Dataset& data) {
    if (data.size() == 0) return 1.0;
    auto pa = evaluate(a, data).predictions;
    auto pb = evaluate(b, data).predictions;
    std::size_t same = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) same += pa[i] == pb[i];
    return static_cast<double>(same) / static_cast<double>(pa.size());
}

} // namespace tinyforge
