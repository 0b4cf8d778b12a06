// SPDX-License-Identifier: Apache-2.0
// Batched forward/backward network used by the trainer. Not installed.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <cblas.h>

#include "tinyforge/ir.hpp"
#include "tinyforge/kernels.hpp"
#include "tinyforge/quant.hpp"

namespace tinyforge::detail {

// C (m x n) = op(A) * op(B) (+ C if accumulate), row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
          bool accumulate) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (!accumulate) std::fill(c, c + m * n, T(0));
        return;
    }
    const auto ta = trans_a ? CblasTrans : CblasNoTrans;
    const auto tb = trans_b ? CblasTrans : CblasNoTrans;
    const int lda = static_cast<int>(trans_a ? m : k);
    const int ldb = static_cast<int>(trans_b ? k : n);
    const T beta = accumulate ? T(1) : T(0);
    if constexpr (std::is_same_v<T, float>) {
        cblas_sgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a, lda,
                    b, ldb, beta, c, static_cast<int>(n));
    } else {
        cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a, lda,
                    b, ldb, beta, c, static_cast<int>(n));
    }
}

struct ForwardMode {
    bool training = true;       ///< batch statistics in BatchNorm
    bool update_running = true; ///< update BatchNorm running stats and fake-quant ranges
};

template <typename T> class Network {
public:
    explicit Network(const Graph& g) {
        validate(g);
        if (g.inputs.size() != 1 || g.outputs.size() != 1) {
            throw ModelError("training requires exactly one graph input and one output");
        }
        auto order = toposort(g);
        auto edge_id = [&](const std::string& e) {
            auto [it, fresh] = ids_.emplace(e, static_cast<int>(shapes_.size()));
            if (fresh) {
                shapes_.push_back(g.edge(e).shape);
                names_.push_back(e);
            }
            return it->second;
        };
        input_ = edge_id(g.inputs[0]);
        if (g.edge(g.inputs[0]).type != ElemType::F32) throw ModelError("training requires an f32 graph input");

        std::string logits = g.outputs[0];
        for (auto idx : order) {
            const Node& n = g.nodes[idx];
            if (n.kind == OpKind::Softmax) {
                if (!g.is_output(n.outputs[0])) {
                    throw ModelError("node '" + n.name + "': Softmax is supported only as the output head");
                }
                logits = n.inputs[0];
                continue;
            }
            switch (n.kind) {
            case OpKind::Conv2D:
            case OpKind::Linear:
            case OpKind::BatchNorm:
            case OpKind::MaxPool:
            case OpKind::ReLU:
            case OpKind::Flatten:
            case OpKind::Add: break;
            default:
                throw ModelError("node '" + n.name + "': operator " + std::string(to_string(n.kind)) +
                                 " is not supported in training mode");
            }
            Op op;
            op.kind = n.kind;
            op.name = n.name;
            for (const auto& e : n.inputs) op.in.push_back(edge_id(e));
            op.out = edge_id(n.outputs[0]);
            op.params = n.params;
            op.attrs = n.attrs;
            ops_.push_back(std::move(op));
        }
        logits_ = edge_id(logits);
        if (shapes_[logits_].size() != 1) throw ModelError("logits edge '" + logits + "' must be rank 1");

        for (const auto& op : ops_) {
            for (std::size_t i = 0; i < op.params.size(); ++i) {
                const auto& p = g.param(op.params[i]);
                if (p.desc.type != ElemType::F32) throw ModelError("training requires f32 parameters");
                const auto& src = p.template values<float>();
                values_[op.params[i]] = std::vector<T>(src.begin(), src.end());
                bool trainable = op.kind != OpKind::BatchNorm || i < 2;
                if (trainable) trainable_.push_back(op.params[i]);
            }
        }
        for (const auto& name : trainable_) grads_[name].assign(values_[name].size(), T(0));
    }

    std::size_t classes() const { return static_cast<std::size_t>(shapes_[logits_][0]); }
    std::size_t input_size() const { return static_cast<std::size_t>(numel(shapes_[input_])); }
    const std::vector<std::string>& trainable() const { return trainable_; }
    std::map<std::string, std::vector<T>>& values() { return values_; }
    std::map<std::string, std::vector<T>>& grads() { return grads_; }

    void set_fake_quant(bool on) { fake_quant_ = on; }
    bool fake_quant() const { return fake_quant_; }
    const RangeTable& ranges() const { return ranges_; }
    void set_ranges(RangeTable r) { ranges_ = std::move(r); }

    /// Forward pass over `batch` samples laid out contiguously in `x`.
    void forward(const T* x, std::size_t batch, ForwardMode mode) {
        batch_ = batch;
        act_.assign(shapes_.size(), {});
        auto in_n = input_size();
        act_[input_].assign(x, x + batch * in_n);
        if (fake_quant_) fake_quant_edge(input_, mode);
        weff_.clear();
        for (auto& op : ops_) {
            switch (op.kind) {
            case OpKind::Conv2D: conv_forward(op); break;
            case OpKind::Linear: linear_forward(op); break;
            case OpKind::BatchNorm: bn_forward(op, mode); break;
            case OpKind::MaxPool: pool_forward(op); break;
            case OpKind::ReLU: {
                auto& y = act_[op.out];
                y = act_[op.in[0]];
                for (auto& v : y) v = v < T(0) ? T(0) : v;
                break;
            }
            case OpKind::Flatten: act_[op.out] = act_[op.in[0]]; break;
            case OpKind::Add: {
                auto& y = act_[op.out];
                y = act_[op.in[0]];
                const auto& b = act_[op.in[1]];
                for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
                break;
            }
            default: break;
            }
            if (fake_quant_ && (op.kind == OpKind::Conv2D || op.kind == OpKind::Linear || op.kind == OpKind::Add ||
                                op.kind == OpKind::BatchNorm)) {
                fake_quant_edge(op.out, mode);
            }
        }
    }

    /// Per-sample cross-entropy after forward(); fills param gradients of
    /// the batch-mean loss.
    std::vector<double> backward(const std::int32_t* labels) {
        const auto c = classes();
        const auto& z = act_[logits_];
        std::vector<double> losses(batch_);
        grad_.assign(shapes_.size(), {});
        auto& dz = grad_buf(logits_);
        for (std::size_t b = 0; b < batch_; ++b) {
            const T* zb = z.data() + b * c;
            T mx = *std::max_element(zb, zb + c);
            double sum = 0.0;
            for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(zb[j] - mx));
            const auto y = static_cast<std::size_t>(labels[b]);
            double log_p = static_cast<double>(zb[y] - mx) - std::log(sum);
            losses[b] = -log_p;
            for (std::size_t j = 0; j < c; ++j) {
                double p = std::exp(static_cast<double>(zb[j] - mx)) / sum;
                dz[b * c + j] = static_cast<T>((p - (j == y ? 1.0 : 0.0)) / static_cast<double>(batch_));
            }
        }
        for (auto& [name, g] : grads_) std::fill(g.begin(), g.end(), T(0));
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            auto& op = *it;
            if (grad_[op.out].empty()) continue;
            switch (op.kind) {
            case OpKind::Conv2D: conv_backward(op); break;
            case OpKind::Linear: linear_backward(op); break;
            case OpKind::BatchNorm: bn_backward(op); break;
            case OpKind::MaxPool: pool_backward(op); break;
            case OpKind::ReLU: {
                const auto& x = act_[op.in[0]];
                const auto& dy = grad_[op.out];
                auto& dx = grad_buf(op.in[0]);
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    if (x[i] > T(0)) dx[i] += dy[i];
                }
                break;
            }
            case OpKind::Flatten: {
                const auto& dy = grad_[op.out];
                auto& dx = grad_buf(op.in[0]);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                break;
            }
            case OpKind::Add: {
                for (int in : op.in) {
                    const auto& dy = grad_[op.out];
                    auto& dx = grad_buf(in);
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                }
                break;
            }
            default: break;
            }
        }
        return losses;
    }

    /// Mean loss over the batch, forward only.
    double loss(const T* x, const std::int32_t* labels, std::size_t batch, ForwardMode mode) {
        forward(x, batch, mode);
        const auto c = classes();
        const auto& z = act_[logits_];
        double total = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const T* zb = z.data() + b * c;
            T mx = *std::max_element(zb, zb + c);
            double sum = 0.0;
            for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(zb[j] - mx));
            total += std::log(sum) - static_cast<double>(zb[labels[b]] - mx);
        }
        return total / static_cast<double>(batch);
    }

private:
    struct Op {
        OpKind kind;
        std::string name;
        std::vector<int> in;
        int out = 0;
        std::vector<std::string> params;
        Attributes attrs;
        std::vector<std::int32_t> argmax;     // MaxPool
        std::vector<T> xhat, inv_std;         // BatchNorm
    };

    std::vector<T>& grad_buf(int edge) {
        auto& g = grad_[edge];
        if (g.empty()) g.assign(act_[edge].size(), T(0));
        return g;
    }

    const std::vector<T>& weight(const Op& op) {
        const auto& w = values_.at(op.params[0]);
        if (!fake_quant_) return w;
        auto& wq = weff_[op.params[0]];
        if (wq.empty()) {
            std::vector<float> tmp(w.begin(), w.end());
            auto q = calibrate(tmp);
            wq.resize(w.size());
            for (std::size_t i = 0; i < w.size(); ++i) wq[i] = static_cast<T>(fake_quantize(static_cast<float>(w[i]), q));
        }
        return wq;
    }

    void fake_quant_edge(int edge, ForwardMode mode) {
        auto& v = act_[edge];
        if (v.empty()) return;
        const auto& key = names_[edge];
        auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
        double lo = static_cast<double>(*lo_it), hi = static_cast<double>(*hi_it);
        auto it = ranges_.find(key);
        if (mode.update_running) {
            if (it == ranges_.end()) {
                it = ranges_.emplace(key, std::make_pair(lo, hi)).first;
            } else {
                it->second.first = 0.9 * it->second.first + 0.1 * lo;
                it->second.second = 0.9 * it->second.second + 0.1 * hi;
            }
        }
        if (it == ranges_.end()) return;
        auto q = calibrate(it->second.first, it->second.second);
        for (auto& x : v) x = static_cast<T>(fake_quantize(static_cast<float>(x), q));
    }

    kernels::ConvGeom geom(const Op& op) const {
        const auto& s = shapes_[op.in[0]];
        return {s[0], s[1], s[2], op.attrs.kernel, op.attrs.stride, op.attrs.pad};
    }

    void conv_forward(Op& op) {
        const auto g = geom(op);
        const auto& w = weight(op);
        const auto& b = values_.at(op.params[1]);
        const auto filters = shapes_[op.out][0];
        const auto in_n = static_cast<std::size_t>(numel(shapes_[op.in[0]]));
        const auto out_n = static_cast<std::size_t>(numel(shapes_[op.out]));
        auto& y = act_[op.out];
        y.assign(batch_ * out_n, T(0));
        std::vector<T> col(static_cast<std::size_t>(g.rows() * g.cols()));
        for (std::size_t s = 0; s < batch_; ++s) {
            kernels::im2col(act_[op.in[0]].data() + s * in_n, g, T(0), col.data());
            T* ys = y.data() + s * out_n;
            gemm<T>(false, false, filters, g.cols(), g.rows(), w.data(), col.data(), ys, false);
            for (std::int64_t f = 0; f < filters; ++f) {
                for (std::int64_t p = 0; p < g.cols(); ++p) ys[f * g.cols() + p] += b[f];
            }
        }
    }

    void conv_backward(Op& op) {
        const auto g = geom(op);
        const auto& w = weight(op);
        const auto filters = shapes_[op.out][0];
        const auto in_n = static_cast<std::size_t>(numel(shapes_[op.in[0]]));
        const auto out_n = static_cast<std::size_t>(numel(shapes_[op.out]));
        auto& dw = grads_.at(op.params[0]);
        auto& db = grads_.at(op.params[1]);
        auto& dx = grad_buf(op.in[0]);
        const auto& dy = grad_[op.out];
        std::vector<T> col(static_cast<std::size_t>(g.rows() * g.cols()));
        std::vector<T> dcol(col.size());
        for (std::size_t s = 0; s < batch_; ++s) {
            const T* dys = dy.data() + s * out_n;
            kernels::im2col(act_[op.in[0]].data() + s * in_n, g, T(0), col.data());
            gemm<T>(false, true, filters, g.rows(), g.cols(), dys, col.data(), dw.data(), true);
            for (std::int64_t f = 0; f < filters; ++f) {
                T acc = 0;
                for (std::int64_t p = 0; p < g.cols(); ++p) acc += dys[f * g.cols() + p];
                db[f] += acc;
            }
            gemm<T>(true, false, g.rows(), g.cols(), filters, w.data(), dys, dcol.data(), false);
            kernels::col2im(dcol.data(), g, dx.data() + s * in_n);
        }
    }

    void linear_forward(Op& op) {
        const auto& w = weight(op);
        const auto& b = values_.at(op.params[1]);
        const auto out = shapes_[op.out][0], in = shapes_[op.in[0]][0];
        auto& y = act_[op.out];
        y.assign(batch_ * static_cast<std::size_t>(out), T(0));
        gemm<T>(false, true, static_cast<std::int64_t>(batch_), out, in, act_[op.in[0]].data(), w.data(), y.data(), false);
        for (std::size_t s = 0; s < batch_; ++s) {
            for (std::int64_t o = 0; o < out; ++o) y[s * out + o] += b[o];
        }
    }

    void linear_backward(Op& op) {
        const auto& w = weight(op);
        const auto out = shapes_[op.out][0], in = shapes_[op.in[0]][0];
        const auto& dy = grad_[op.out];
        auto& dw = grads_.at(op.params[0]);
        auto& db = grads_.at(op.params[1]);
        gemm<T>(true, false, out, in, static_cast<std::int64_t>(batch_), dy.data(), act_[op.in[0]].data(), dw.data(), true);
        for (std::size_t s = 0; s < batch_; ++s) {
            for (std::int64_t o = 0; o < out; ++o) db[o] += dy[s * out + o];
        }
        auto& dx = grad_buf(op.in[0]);
        gemm<T>(false, false, static_cast<std::int64_t>(batch_), in, out, dy.data(), w.data(), dx.data(), true);
    }

    void bn_forward(Op& op, ForwardMode mode) {
        const auto& s = shapes_[op.in[0]];
        const auto ch = s[0];
        const auto spatial = numel(s) / ch;
        const auto per = static_cast<std::size_t>(numel(s));
        const auto& gamma = values_.at(op.params[0]);
        const auto& beta = values_.at(op.params[1]);
        auto& mean = values_.at(op.params[2]);
        auto& var = values_.at(op.params[3]);
        const auto& x = act_[op.in[0]];
        auto& y = act_[op.out];
        y.assign(x.size(), T(0));
        op.xhat.assign(x.size(), T(0));
        op.inv_std.assign(static_cast<std::size_t>(ch), T(0));
        const double eps = op.attrs.epsilon;
        const double count = static_cast<double>(batch_) * static_cast<double>(spatial);
        for (std::int64_t c = 0; c < ch; ++c) {
            double mu, v;
            if (mode.training) {
                double sum = 0.0;
                for (std::size_t b = 0; b < batch_; ++b) {
                    for (std::int64_t i = 0; i < spatial; ++i) sum += static_cast<double>(x[b * per + c * spatial + i]);
                }
                mu = sum / count;
                double sq = 0.0;
                for (std::size_t b = 0; b < batch_; ++b) {
                    for (std::int64_t i = 0; i < spatial; ++i) {
                        double d = static_cast<double>(x[b * per + c * spatial + i]) - mu;
                        sq += d * d;
                    }
                }
                v = sq / count;
                if (mode.update_running) {
                    double unbiased = count > 1.0 ? v * count / (count - 1.0) : v;
                    mean[c] = static_cast<T>(0.9 * static_cast<double>(mean[c]) + 0.1 * mu);
                    var[c] = static_cast<T>(0.9 * static_cast<double>(var[c]) + 0.1 * unbiased);
                }
            } else {
                mu = static_cast<double>(mean[c]);
                v = static_cast<double>(var[c]);
            }
            const T inv = static_cast<T>(1.0 / std::sqrt(v + eps));
            op.inv_std[c] = inv;
            for (std::size_t b = 0; b < batch_; ++b) {
                for (std::int64_t i = 0; i < spatial; ++i) {
                    auto k = b * per + c * spatial + i;
                    T xh = static_cast<T>(x[k] - static_cast<T>(mu)) * inv;
                    op.xhat[k] = xh;
                    y[k] = gamma[c] * xh + beta[c];
                }
            }
        }
    }

    void bn_backward(Op& op) {
        const auto& s = shapes_[op.in[0]];
        const auto ch = s[0];
        const auto spatial = numel(s) / ch;
        const auto per = static_cast<std::size_t>(numel(s));
        const auto& gamma = values_.at(op.params[0]);
        auto& dgamma = grads_.at(op.params[0]);
        auto& dbeta = grads_.at(op.params[1]);
        const auto& dy = grad_[op.out];
        auto& dx = grad_buf(op.in[0]);
        const double count = static_cast<double>(batch_) * static_cast<double>(spatial);
        for (std::int64_t c = 0; c < ch; ++c) {
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (std::size_t b = 0; b < batch_; ++b) {
                for (std::int64_t i = 0; i < spatial; ++i) {
                    auto k = b * per + c * spatial + i;
                    sum_dy += static_cast<double>(dy[k]);
                    sum_dy_xh += static_cast<double>(dy[k]) * static_cast<double>(op.xhat[k]);
                }
            }
            dgamma[c] += static_cast<T>(sum_dy_xh);
            dbeta[c] += static_cast<T>(sum_dy);
            const double g = static_cast<double>(gamma[c]) * static_cast<double>(op.inv_std[c]);
            for (std::size_t b = 0; b < batch_; ++b) {
                for (std::int64_t i = 0; i < spatial; ++i) {
                    auto k = b * per + c * spatial + i;
                    double v = g * (static_cast<double>(dy[k]) - sum_dy / count -
                                    static_cast<double>(op.xhat[k]) * sum_dy_xh / count);
                    dx[k] += static_cast<T>(v);
                }
            }
        }
    }

    void pool_forward(Op& op) {
        const auto& s = shapes_[op.in[0]];
        const auto& o = shapes_[op.out];
        const int p = op.attrs.pool;
        const auto in_n = static_cast<std::size_t>(numel(s));
        const auto out_n = static_cast<std::size_t>(numel(o));
        const auto& x = act_[op.in[0]];
        auto& y = act_[op.out];
        y.assign(batch_ * out_n, T(0));
        op.argmax.assign(batch_ * out_n, 0);
        for (std::size_t b = 0; b < batch_; ++b) {
            for (std::int64_t c = 0; c < o[0]; ++c) {
                for (std::int64_t oy = 0; oy < o[1]; ++oy) {
                    for (std::int64_t ox = 0; ox < o[2]; ++ox) {
                        std::int64_t best = (c * s[1] + oy * p) * s[2] + ox * p;
                        for (int dy = 0; dy < p; ++dy) {
                            for (int dx = 0; dx < p; ++dx) {
                                std::int64_t k = (c * s[1] + oy * p + dy) * s[2] + ox * p + dx;
                                if (x[b * in_n + k] > x[b * in_n + best]) best = k;
                            }
                        }
                        auto oi = b * out_n + (c * o[1] + oy) * o[2] + ox;
                        y[oi] = x[b * in_n + best];
                        op.argmax[oi] = static_cast<std::int32_t>(best);
                    }
                }
            }
        }
    }

    void pool_backward(Op& op) {
        const auto in_n = static_cast<std::size_t>(numel(shapes_[op.in[0]]));
        const auto out_n = static_cast<std::size_t>(numel(shapes_[op.out]));
        const auto& dy = grad_[op.out];
        auto& dx = grad_buf(op.in[0]);
        for (std::size_t b = 0; b < batch_; ++b) {
            for (std::size_t i = 0; i < out_n; ++i) dx[b * in_n + op.argmax[b * out_n + i]] += dy[b * out_n + i];
        }
    }

    std::map<std::string, int> ids_;
    std::vector<Shape> shapes_;
    std::vector<std::string> names_;
    std::vector<Op> ops_;
    int input_ = 0;
    int logits_ = 0;
    std::size_t batch_ = 0;
    std::vector<std::vector<T>> act_;
    std::vector<std::vector<T>> grad_;
    std::map<std::string, std::vector<T>> values_;
    std::map<std::string, std::vector<T>> grads_;
    std::map<std::string, std::vector<T>> weff_;
    std::vector<std::string> trainable_;
    bool fake_quant_ = false;
    RangeTable ranges_;
};

} // namespace tinyforge::detail
