// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/trainer.hpp"

#include <cmath>
#include <numeric>

#include "network.hpp"
#include "tinyforge/refrun.hpp"
#include "tinyforge/rng.hpp"

namespace tinyforge {

using detail::ForwardMode;
using detail::Network;

void TrainConfig::check() const {
    if (!(lr >= 0.0)) throw UsageError("learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
    if (batch_size == 0) throw UsageError("batch size must be positive");
    if (epochs < 0) throw UsageError("epochs must be >= 0");
}

MaskSet masks_from_zeros(const Graph& g) {
    MaskSet m;
    for (const auto& n : g.nodes) {
        if (n.kind != OpKind::Conv2D && n.kind != OpKind::Linear) continue;
        const auto& w = g.param(n.params[0]).values<float>();
        std::vector<std::uint8_t> keep(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) keep[i] = w[i] != 0.0f;
        m[n.params[0]] = std::move(keep);
    }
    return m;
}

struct Session::Impl {
    Graph graph;
    Network<float> net;
    const Dataset& train;
    TrainConfig cfg;
    MaskSet masks;
    std::map<std::string, std::vector<float>> velocity;
    bool dirty = true;

    Impl(const Graph& g, const Dataset& d, const TrainConfig& c) : graph(g), net(g), train(d), cfg(c) {
        for (const auto& name : net.trainable()) velocity[name].assign(net.values().at(name).size(), 0.0f);
    }

    void sync() {
        if (!dirty) return;
        for (auto& [name, v] : net.values()) graph.param(name).values<float>() = v;
        dirty = false;
    }

    void apply_mask(const std::string& name) {
        const auto& keep = masks.at(name);
        auto& v = net.values().at(name);
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!keep[i]) v[i] = 0.0f;
        }
        if (auto it = velocity.find(name); it != velocity.end()) {
            for (std::size_t i = 0; i < keep.size(); ++i) {
                if (!keep[i]) it->second[i] = 0.0f;
            }
        }
        dirty = true;
    }

    std::vector<float> gather(const Dataset& d, std::span<const std::size_t> idx) const {
        std::vector<float> x;
        x.reserve(idx.size() * d.sample_size());
        for (auto i : idx) {
            auto s = d.sample(i);
            x.insert(x.end(), s.begin(), s.end());
        }
        return x;
    }
};

const Graph& Session::graph() {
    impl_->sync();
    return impl_->graph;
}
const Dataset& Session::train_data() const { return impl_->train; }
const TrainConfig& Session::config() const { return impl_->cfg; }
int Session::total_epochs() const { return impl_->cfg.epochs; }
const MaskSet& Session::masks() const { return impl_->masks; }

void Session::set_mask(const std::string& param, std::vector<std::uint8_t> keep) {
    auto it = impl_->net.values().find(param);
    if (it == impl_->net.values().end()) throw ModelError("cannot mask unknown parameter '" + param + "'");
    if (keep.size() != it->second.size()) throw ModelError("mask size does not match parameter '" + param + "'");
    impl_->masks[param] = std::move(keep);
    impl_->apply_mask(param);
}

std::map<std::string, std::vector<float>> Session::gradients(const Dataset& batch) {
    if (batch.size() == 0) throw UsageError("gradient batch is empty");
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto x = impl_->gather(batch, idx);
    impl_->net.forward(x.data(), batch.size(), ForwardMode{true, false});
    impl_->net.backward(batch.labels.data());
    return impl_->net.grads();
}

void Session::enable_fake_quant(bool on) { impl_->net.set_fake_quant(on); }
const RangeTable& Session::fake_quant_ranges() const { return impl_->net.ranges(); }

TrainResult train(const Graph& g, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                  std::span<TrainHook* const> hooks, const MaskSet& masks) {
    cfg.check();
    train_set.check();
    Session::Impl impl(g, train_set, cfg);
    if (train_set.sample_size() != impl.net.input_size()) {
        throw ModelError("dataset samples have " + std::to_string(train_set.sample_size()) +
                         " values, graph input expects " + std::to_string(impl.net.input_size()));
    }
    if (static_cast<std::size_t>(train_set.classes) > impl.net.classes()) {
        throw ModelError("dataset has more classes than the model outputs");
    }
    Session session(impl);
    for (const auto& [name, keep] : masks) session.set_mask(name, keep);

    for (auto* h : hooks) h->on_train_begin(session);
    for (auto* h : hooks) h->on_epoch(0, session);

    TrainResult result;
    Rng rng(cfg.seed);
    const auto n = train_set.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> sample_loss(n, 0.0);
    std::vector<std::int32_t> labels;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            auto end = std::min(n, start + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            auto x = impl.gather(train_set, idx);
            labels.clear();
            for (auto i : idx) labels.push_back(train_set.labels[i]);
            impl.net.forward(x.data(), idx.size(), ForwardMode{true, true});
            auto losses = impl.net.backward(labels.data());
            for (std::size_t b = 0; b < idx.size(); ++b) sample_loss[idx[b]] = losses[b];
            for (const auto& name : impl.net.trainable()) {
                auto& grad = impl.net.grads().at(name);
                if (auto m = impl.masks.find(name); m != impl.masks.end()) {
                    for (std::size_t i = 0; i < grad.size(); ++i) {
                        if (!m->second[i]) grad[i] = 0.0f;
                    }
                }
                auto& w = impl.net.values().at(name);
                auto& v = impl.velocity.at(name);
                sgd_momentum_step<float>(w, grad, v, cfg.lr, cfg.momentum);
            }
            for (const auto& [name, keep] : impl.masks) impl.apply_mask(name);
            impl.dirty = true;
        }
        double total = 0.0;
        for (double l : sample_loss) total += l;
        double mean = n ? total / static_cast<double>(n) : 0.0;
        if (!std::isfinite(mean)) throw ModelError("loss became NaN in epoch " + std::to_string(epoch));
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = mean;
        if (test_set) m.test_accuracy = evaluate(session.graph(), *test_set).accuracy;
        result.history.push_back(m);
        for (auto* h : hooks) h->on_epoch(epoch, session);
    }
    for (auto* h : hooks) h->on_train_end(session);

    result.graph = session.graph();
    result.masks = impl.masks;
    result.ranges = impl.net.ranges();
    if (test_set) result.final_accuracy = evaluate(result.graph, *test_set).accuracy;
    return result;
}

std::map<std::string, std::vector<float>> compute_gradients(const Graph& g, const Dataset& batch) {
    Network<float> net(g);
    if (batch.size() == 0) throw UsageError("gradient batch is empty");
    net.forward(batch.features.data(), batch.size(), ForwardMode{true, false});
    net.backward(batch.labels.data());
    return net.grads();
}

GradCheckResult grad_check(const Graph& g, const Dataset& data, double epsilon) {
    Network<double> net(g);
    if (data.size() == 0) throw UsageError("grad_check needs at least one sample");
    std::vector<double> x(data.features.begin(), data.features.end());
    const ForwardMode mode{true, false};
    net.forward(x.data(), data.size(), mode);
    net.backward(data.labels.data());

    GradCheckResult r;
    for (const auto& name : net.trainable()) {
        r.analytic[name] = net.grads().at(name);
        auto& v = net.values().at(name);
        auto& num = r.numeric[name];
        num.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double saved = v[i];
            v[i] = saved + epsilon;
            double lp = net.loss(x.data(), data.labels.data(), data.size(), mode);
            v[i] = saved - epsilon;
            double lm = net.loss(x.data(), data.labels.data(), data.size(), mode);
            v[i] = saved;
            num[i] = (lp - lm) / (2.0 * epsilon);
        }
        // Central differences carry roughly loss * 1e-16 / epsilon of rounding
        // noise; differences below that floor count as agreement. Biases that
        // feed batch-norm have an exact zero gradient and hit this.
        const double floor = 1e-14 / epsilon;
        const auto& an = r.analytic[name];
        for (std::size_t i = 0; i < v.size(); ++i) {
            double a = std::abs(an[i]), b = std::abs(num[i]);
            if (std::abs(an[i] - num[i]) <= floor) continue;
            r.max_rel_error = std::max(r.max_rel_error, std::abs(an[i] - num[i]) / std::max(a, b));
        }
    }
    return r;
}

} // namespace tinyforge
