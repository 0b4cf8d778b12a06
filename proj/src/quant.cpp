// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/quant.hpp"

#include <algorithm>
#include <limits>
#include <set>

namespace tinyforge {

QuantParams calibrate(double min, double max) {
    if (!std::isfinite(min) || !std::isfinite(max) || min > max) {
        throw ModelError("calibrate: invalid range [" + std::to_string(min) + ", " + std::to_string(max) + "]");
    }
    QuantParams q;
    q.min = std::min(min, 0.0);
    q.max = std::max(max, 0.0);
    if (q.max - q.min == 0.0) {
        q.scale = 1.0;
        q.zero_point = 0;
        return q;
    }
    q.scale = (q.max - q.min) / 255.0;
    q.zero_point = clamp_u8(round_half_away(-q.min / q.scale));
    return q;
}

QuantParams calibrate(std::span<const float> values) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (float v : values) {
        if (!std::isfinite(v)) continue;
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
    }
    if (lo > hi) throw ModelError("calibrate: no finite values");
    return calibrate(lo, hi);
}

std::vector<std::uint8_t> qmatmul(std::span<const std::uint8_t> a, const QuantParams& qa, std::span<const std::uint8_t> b,
                                  const QuantParams& qb, const QuantParams& qc, std::int64_t m, std::int64_t n,
                                  std::int64_t p) {
    if (m < 0 || n < 0 || p < 0 || static_cast<std::int64_t>(a.size()) != m * n ||
        static_cast<std::int64_t>(b.size()) != n * p) {
        throw ModelError("qmatmul: dimension mismatch");
    }
    const double mult = requant_multiplier(qa.scale, qb.scale, qc.scale);
    std::vector<std::uint8_t> c(static_cast<std::size_t>(m * p));
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < p; ++j) {
            std::int64_t acc = 0;
            for (std::int64_t k = 0; k < n; ++k) {
                acc += (static_cast<std::int32_t>(a[i * n + k]) - qa.zero_point) *
                       (static_cast<std::int32_t>(b[k * p + j]) - qb.zero_point);
            }
            if (acc > std::numeric_limits<std::int32_t>::max() || acc < std::numeric_limits<std::int32_t>::min()) {
                throw ModelError("qmatmul: int32 accumulator overflow");
            }
            c[i * p + j] = requantize(static_cast<std::int32_t>(acc), mult, qc.zero_point);
        }
    }
    return c;
}

namespace {

class Converter {
public:
    Converter(const Graph& src, const RangeTable& ranges) : src_(src), ranges_(ranges) {
        for (const auto& [e, d] : src.edges) taken_.insert(e);
        for (const auto& [p, t] : src.params) taken_.insert(p);
        for (const auto& n : src.nodes) taken_.insert(n.name);
        for (const auto& e : src.inputs) taken_.insert(e);
        for (const auto& e : src.outputs) taken_.insert(e);
    }

    Graph run() {
        out_.name = src_.name;
        out_.meta = src_.meta;
        out_.inputs = src_.inputs;
        out_.outputs = src_.outputs;
        for (const auto& in : src_.inputs) {
            out_.edges[in] = src_.edge(in);
            if (src_.edge(in).type == ElemType::U8) u8_[in] = in;
            else f32_[in] = in;
        }
        for (auto idx : toposort(src_)) convert(src_.nodes[idx]);
        for (const auto& o : src_.outputs) {
            if (f32_.count(o) && f32_[o] == o) continue;
            if (u8_.count(o) && u8_[o] == o) continue;
            need_f32(o);
        }
        infer_shapes_inplace(out_);
        return std::move(out_);
    }

private:
    std::string fresh(const std::string& base) {
        if (!taken_.count(base)) {
            taken_.insert(base);
            return base;
        }
        for (int i = 1;; ++i) {
            auto c = base + "_" + std::to_string(i);
            if (!taken_.count(c)) {
                taken_.insert(c);
                return c;
            }
        }
    }

    QuantParams range_of(const std::string& e) const {
        auto it = ranges_.find(e);
        if (it == ranges_.end()) throw PrerequisiteError("no calibration range recorded for edge '" + e + "'");
        return calibrate(it->second.first, it->second.second);
    }

    std::string need_u8(const std::string& e) {
        if (auto it = u8_.find(e); it != u8_.end()) return it->second;
        auto src = need_f32(e);
        auto name = fresh(e + "_q");
        Node n;
        n.name = name;
        n.kind = OpKind::QuantizeLinear;
        n.inputs = {src};
        n.outputs = {name};
        out_.nodes.push_back(n);
        TensorDesc d;
        d.type = ElemType::U8;
        d.quant = range_of(e);
        out_.edges[name] = d;
        u8_[e] = name;
        return name;
    }

    std::string need_f32(const std::string& e) {
        if (auto it = f32_.find(e); it != f32_.end()) return it->second;
        auto it = u8_.find(e);
        if (it == u8_.end()) throw ModelError("edge '" + e + "' has no converted producer");
        // A dequantized graph output takes the original name.
        auto name = src_.is_output(e) ? e : fresh(e + "_dq");
        Node n;
        n.name = fresh(e + "_dequant");
        n.kind = OpKind::DequantizeLinear;
        n.inputs = {it->second};
        n.outputs = {name};
        out_.nodes.push_back(n);
        f32_[e] = name;
        return name;
    }

    std::string u8_output(const std::string& y) {
        auto name = src_.is_output(y) ? fresh(y + "_q") : y;
        u8_[y] = name;
        return name;
    }

    void copy_params(const Node& n) {
        for (const auto& p : n.params) out_.params[p] = src_.param(p);
    }

    void convert(const Node& n) {
        const auto& x = n.inputs[0];
        const auto& y = n.outputs[0];
        switch (n.kind) {
        case OpKind::Conv2D:
        case OpKind::Linear: {
            auto xin = need_u8(x);
            const auto qx = *out_.edges.at(xin).quant;
            const auto& w = src_.param(n.params[0]);
            const auto& b = src_.param(n.params[1]);
            auto qw = calibrate(w.values<float>());
            std::vector<std::uint8_t> wq;
            wq.reserve(w.values<float>().size());
            for (float v : w.values<float>()) wq.push_back(quantize(v, qw));
            const double sb = qx.scale * qw.scale;
            std::vector<std::int32_t> bq;
            for (float v : b.values<float>()) {
                auto r = round_half_away(v / sb);
                r = std::clamp<std::int64_t>(r, std::numeric_limits<std::int32_t>::min(),
                                             std::numeric_limits<std::int32_t>::max());
                bq.push_back(static_cast<std::int32_t>(r));
            }
            TensorDesc wd{w.desc.shape, ElemType::U8, Layout::Dense, qw};
            TensorDesc bd{b.desc.shape, ElemType::I32, Layout::Dense, QuantParams{sb, 0, 0.0, 0.0}};
            out_.params[n.params[0]] = ParamTensor(wd, std::move(wq));
            out_.params[n.params[1]] = ParamTensor(bd, std::move(bq));

            Node q = n;
            q.kind = n.kind == OpKind::Conv2D ? OpKind::QLinearConv : OpKind::QLinearMatMul;
            q.inputs = {xin};
            auto name = u8_output(y);
            q.outputs = {name};
            q.attrs.clamp_min = 0;
            out_.nodes.push_back(q);
            TensorDesc yd;
            yd.type = ElemType::U8;
            yd.quant = range_of(y);
            out_.edges[name] = yd;
            return;
        }
        case OpKind::ReLU:
        case OpKind::MaxPool:
        case OpKind::Flatten: {
            bool quantized = u8_.count(x) || ranges_.count(x);
            Node q = n;
            if (quantized) {
                q.inputs = {need_u8(x)};
                q.outputs = {u8_output(y)};
                TensorDesc yd;
                yd.type = ElemType::U8;
                yd.quant = out_.edges.at(q.inputs[0]).quant;
                out_.edges[q.outputs[0]] = yd;
            } else {
                q.inputs = {need_f32(x)};
                q.outputs = {y};
                f32_[y] = y;
            }
            out_.nodes.push_back(q);
            return;
        }
        case OpKind::BatchNorm:
        case OpKind::Add:
        case OpKind::Softmax: {
            Node q = n;
            for (auto& in : q.inputs) in = need_f32(in);
            q.outputs = {y};
            f32_[y] = y;
            copy_params(n);
            out_.nodes.push_back(q);
            return;
        }
        default:
            throw ModelError("node '" + n.name + "': graph is already quantized (" + std::string(to_string(n.kind)) + ")");
        }
    }

    const Graph& src_;
    const RangeTable& ranges_;
    Graph out_;
    std::set<std::string> taken_;
    std::map<std::string, std::string> f32_; // original edge -> f32 edge in out_
    std::map<std::string, std::string> u8_;  // original edge -> u8 edge in out_
};

} // namespace

Graph convert_to_integer(const Graph& g, const RangeTable& ranges) {
    validate(g);
    return Converter(g, ranges).run();
}

} // namespace tinyforge
