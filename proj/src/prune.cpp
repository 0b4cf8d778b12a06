// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/prune.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include "tinyforge/refrun.hpp"
#include "tinyforge/rng.hpp"

namespace tinyforge {

namespace {

constexpr const char* kBaselineKey = "baseline_weight_count";

std::int64_t prune_count(double s, std::int64_t total) {
    auto k = static_cast<std::int64_t>(std::ceil(s * static_cast<double>(total) - 1e-9));
    return std::clamp<std::int64_t>(k, 0, total);
}

const Node& weight_node(const Graph& g, const std::string& name) {
    const Node* n = g.find_node(name);
    if (!n) throw ModelError("unknown node '" + name + "'");
    if (n->kind != OpKind::Conv2D && n->kind != OpKind::Linear) {
        throw ModelError("node '" + name + "' is not a Conv2D or Linear layer");
    }
    return *n;
}

/// Moves previously pruned items to the front, keeping rank order otherwise.
std::vector<std::size_t> prior_first(std::vector<std::size_t> order, const std::function<bool(std::size_t)>& was_pruned) {
    std::stable_partition(order.begin(), order.end(), was_pruned);
    return order;
}

/// One step of channel propagation: the edges reached from `edge` and the
/// endpoints that consume the pruned channels.
struct Reach {
    std::vector<std::size_t> passthrough; // ReLU / MaxPool / BatchNorm / Flatten nodes
    std::vector<std::size_t> endpoints;   // Conv2D / Linear consuming the channels
};

Reach propagate(const Graph& g, const Node& from) {
    Reach r;
    std::vector<std::string> frontier{from.outputs[0]};
    while (!frontier.empty()) {
        auto e = frontier.back();
        frontier.pop_back();
        if (g.is_output(e)) {
            throw ModelError("structural pruning of '" + from.name + "' would change graph output '" + e + "'");
        }
        for (auto c : g.consumers(e)) {
            const Node& n = g.nodes[c];
            switch (n.kind) {
            case OpKind::ReLU:
            case OpKind::MaxPool:
            case OpKind::BatchNorm:
            case OpKind::Flatten:
                r.passthrough.push_back(c);
                frontier.push_back(n.outputs[0]);
                break;
            case OpKind::Conv2D:
            case OpKind::Linear: r.endpoints.push_back(c); break;
            default:
                throw ModelError("structural pruning of '" + from.name + "' reaches " + std::string(to_string(n.kind)) +
                                 " node '" + n.name + "', which cannot absorb removed channels");
            }
        }
    }
    return r;
}

template <typename T> std::vector<T> take_rows(const std::vector<T>& v, std::int64_t row_len, const std::vector<std::int64_t>& rows) {
    std::vector<T> out;
    out.reserve(rows.size() * static_cast<std::size_t>(row_len));
    for (auto r : rows) out.insert(out.end(), v.begin() + r * row_len, v.begin() + (r + 1) * row_len);
    return out;
}

/// Keeps column blocks `cols` (each `block` wide) of a rows x (ncols*block) matrix.
std::vector<float> take_col_blocks(const std::vector<float>& v, std::int64_t rows, std::int64_t ncols, std::int64_t block,
                                   const std::vector<std::int64_t>& cols) {
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(rows) * cols.size() * static_cast<std::size_t>(block));
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* row = v.data() + r * ncols * block;
        for (auto c : cols) out.insert(out.end(), row + c * block, row + (c + 1) * block);
    }
    return out;
}

} // namespace

void PruneSchedule::check() const {
    if (!(0.0 <= s_i && s_i <= s_f && s_f <= 1.0)) throw UsageError("prune schedule needs 0 <= s_i <= s_f <= 1");
    if (n < 1) throw UsageError("prune schedule step count n must be >= 1");
    if (dt < 1) throw UsageError("prune schedule step width dt must be >= 1");
    if (t0 < 0) throw UsageError("prune schedule start t0 must be >= 0");
}

Heuristic heuristic_from_string(const std::string& s) {
    if (s == "level") return Heuristic::Level;
    if (s == "random") return Heuristic::Random;
    if (s == "l1") return Heuristic::L1;
    if (s == "l2") return Heuristic::L2;
    if (s == "gradient") return Heuristic::Gradient;
    if (s == "activation-zeros" || s == "activation") return Heuristic::ActivationZeros;
    throw UsageError("unknown heuristic '" + s + "' (level, random, l1, l2, gradient, activation-zeros)");
}

std::string to_string(Heuristic h) {
    switch (h) {
    case Heuristic::Level: return "level";
    case Heuristic::Random: return "random";
    case Heuristic::L1: return "l1";
    case Heuristic::L2: return "l2";
    case Heuristic::Gradient: return "gradient";
    case Heuristic::ActivationZeros: return "activation-zeros";
    }
    return "?";
}

PruneSchedule::Kind schedule_kind_from_string(const std::string& s) {
    if (s == "agp") return PruneSchedule::Kind::Agp;
    if (s == "one-shot" || s == "oneshot") return PruneSchedule::Kind::OneShot;
    throw UsageError("unknown prune schedule '" + s + "' (agp, one-shot)");
}

std::string to_string(PruneSchedule::Kind k) { return k == PruneSchedule::Kind::Agp ? "agp" : "one-shot"; }

PruneMode prune_mode_from_string(const std::string& s) {
    if (s == "element") return PruneMode::Element;
    if (s == "structural") return PruneMode::Structural;
    throw UsageError("unknown prune mode '" + s + "' (element, structural)");
}

std::string to_string(PruneMode m) { return m == PruneMode::Element ? "element" : "structural"; }

double agp_sparsity(const PruneSchedule& s, int t) {
    if (t < s.t0) return s.s_i;
    const int steps = std::min(s.n, (t - s.t0) / s.dt);
    const double frac = static_cast<double>(steps) / static_cast<double>(s.n);
    const double r = 1.0 - frac;
    return s.s_f + (s.s_i - s.s_f) * r * r * r;
}

std::optional<double> schedule_target(const PruneSchedule& s, int t) {
    if (s.kind == PruneSchedule::Kind::OneShot) {
        if (t == s.t0) return s.s_f;
        return std::nullopt;
    }
    if (t < s.t0 || (t - s.t0) % s.dt != 0 || (t - s.t0) / s.dt > s.n) return std::nullopt;
    return agp_sparsity(s, t);
}

std::vector<std::size_t> rank_elements(std::span<const float> w, Heuristic h, std::uint64_t seed) {
    std::vector<std::size_t> order(w.size());
    std::iota(order.begin(), order.end(), 0);
    switch (h) {
    case Heuristic::Level:
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return std::abs(w[a]) < std::abs(w[b]); });
        return order;
    case Heuristic::Random: {
        Rng rng(seed);
        rng.shuffle(order);
        return order;
    }
    default:
        throw UsageError("heuristic '" + to_string(h) + "' ranks structures, not elements");
    }
}

std::vector<std::size_t> rank_by_score(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    return order;
}

std::vector<double> structure_scores(const Graph& g, const std::string& node, Heuristic h, const Calibration& cal) {
    const Node& n = weight_node(g, node);
    const auto& wp = g.param(n.params[0]);
    const auto& w = wp.values<float>();
    const auto filters = wp.desc.shape[0];
    const auto per = static_cast<std::int64_t>(w.size()) / filters;
    std::vector<double> score(static_cast<std::size_t>(filters), 0.0);

    switch (h) {
    case Heuristic::Level:
    case Heuristic::L1:
        for (std::int64_t f = 0; f < filters; ++f) {
            for (std::int64_t i = 0; i < per; ++i) score[f] += std::abs(static_cast<double>(w[f * per + i]));
        }
        break;
    case Heuristic::L2:
        for (std::int64_t f = 0; f < filters; ++f) {
            for (std::int64_t i = 0; i < per; ++i) score[f] += static_cast<double>(w[f * per + i]) * w[f * per + i];
            score[f] = std::sqrt(score[f]);
        }
        break;
    case Heuristic::Random: {
        Rng rng(cal.seed ^ std::hash<std::string>{}(node));
        for (auto& s : score) s = rng.uniform();
        break;
    }
    case Heuristic::Gradient: {
        std::map<std::string, std::vector<float>> computed;
        const auto* grads = cal.gradients;
        if (!grads) {
            if (!cal.batch) throw UsageError("gradient heuristic needs a calibration batch");
            computed = compute_gradients(g, *cal.batch);
            grads = &computed;
        }
        const auto& gw = grads->at(n.params[0]);
        for (std::int64_t f = 0; f < filters; ++f) {
            for (std::int64_t i = 0; i < per; ++i) {
                score[f] += std::abs(static_cast<double>(w[f * per + i]) * gw[f * per + i]);
            }
            score[f] /= static_cast<double>(per);
        }
        break;
    }
    case Heuristic::ActivationZeros: {
        if (!cal.batch || cal.batch->size() == 0) throw UsageError("activation-zeros heuristic needs a calibration batch");
        // Follow BatchNorm / ReLU to the post-activation edge.
        std::string edge = n.outputs[0];
        for (;;) {
            auto cons = g.consumers(edge);
            if (cons.size() != 1) break;
            const Node& c = g.nodes[cons[0]];
            if (c.kind != OpKind::BatchNorm && c.kind != OpKind::ReLU) break;
            edge = c.outputs[0];
            if (c.kind == OpKind::ReLU) break;
        }
        Interpreter it(g);
        std::vector<double> zeros(static_cast<std::size_t>(filters), 0.0);
        std::size_t per_channel = 0;
        for (std::size_t s = 0; s < cal.batch->size(); ++s) {
            auto values = it.trace(cal.batch->input(s));
            const auto& a = values.at(edge).values<float>();
            per_channel = a.size() / static_cast<std::size_t>(filters);
            for (std::int64_t f = 0; f < filters; ++f) {
                for (std::size_t i = 0; i < per_channel; ++i) zeros[f] += a[f * per_channel + i] == 0.0f;
            }
        }
        const double total = static_cast<double>(per_channel * cal.batch->size());
        for (std::int64_t f = 0; f < filters; ++f) score[f] = 1.0 - zeros[f] / total;
        break;
    }
    }
    return score;
}

std::vector<std::size_t> rank_structures(const Graph& g, const std::string& node, Heuristic h, const Calibration& cal) {
    return rank_by_score(structure_scores(g, node, h, cal));
}

MaskSet element_masks(const Graph& g, double sparsity, Heuristic h, const MaskSet& prior, std::uint64_t seed) {
    if (h != Heuristic::Level && h != Heuristic::Random) {
        throw UsageError("heuristic '" + to_string(h) + "' applies to structural pruning only");
    }
    if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw UsageError("sparsity must lie in [0, 1]");
    MaskSet out;
    std::uint64_t layer = 0;
    for (const auto& n : g.nodes) {
        if (n.kind != OpKind::Conv2D && n.kind != OpKind::Linear) continue;
        const auto& name = n.params[0];
        const auto& w = g.param(name).values<float>();
        const auto* old = prior.count(name) ? &prior.at(name) : nullptr;
        auto order = prior_first(rank_elements(w, h, seed + layer++),
                                 [&](std::size_t i) { return old && !(*old)[i]; });
        auto k = prune_count(sparsity, static_cast<std::int64_t>(w.size()));
        if (old) k = std::max<std::int64_t>(k, std::count(old->begin(), old->end(), std::uint8_t{0}));
        std::vector<std::uint8_t> keep(w.size(), 1);
        for (std::int64_t i = 0; i < k; ++i) keep[order[i]] = 0;
        out[name] = std::move(keep);
    }
    return out;
}

Graph apply_element_mask(const Graph& g, const MaskSet& masks) {
    Graph out = g;
    for (const auto& [name, keep] : masks) {
        auto& v = out.param(name).values<float>();
        if (keep.size() != v.size()) throw ModelError("mask size does not match parameter '" + name + "'");
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!keep[i]) v[i] = 0.0f;
        }
    }
    return out;
}

bool structurally_prunable(const Graph& g, const std::string& node) {
    try {
        const Node& n = weight_node(g, node);
        auto r = propagate(g, n);
        return !r.endpoints.empty();
    } catch (const ModelError&) {
        return false;
    }
}

KeepLists structure_keep_lists(const Graph& g, double sparsity, Heuristic h, const Calibration& cal,
                               const KeepLists& prior) {
    if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw UsageError("sparsity must lie in [0, 1]");
    std::map<std::string, std::vector<float>> grads;
    Calibration c = cal;
    if (h == Heuristic::Gradient && !c.gradients) {
        if (!c.batch) throw UsageError("gradient heuristic needs a calibration batch");
        grads = compute_gradients(g, *c.batch);
        c.gradients = &grads;
    }
    KeepLists out;
    for (const auto& n : g.nodes) {
        if ((n.kind != OpKind::Conv2D && n.kind != OpKind::Linear) || !structurally_prunable(g, n.name)) continue;
        const auto filters = g.param(n.params[0]).desc.shape[0];
        std::set<std::int64_t> kept_before;
        const auto* old = prior.count(n.name) ? &prior.at(n.name) : nullptr;
        if (old) kept_before.insert(old->begin(), old->end());
        auto order = prior_first(rank_structures(g, n.name, h, c), [&](std::size_t i) {
            return old && !kept_before.count(static_cast<std::int64_t>(i));
        });
        auto r = std::min(prune_count(sparsity, filters), filters - 1);
        if (old) r = std::max<std::int64_t>(r, filters - static_cast<std::int64_t>(old->size()));
        std::vector<std::int64_t> keep;
        for (auto i = static_cast<std::size_t>(r); i < order.size(); ++i) keep.push_back(static_cast<std::int64_t>(order[i]));
        std::sort(keep.begin(), keep.end());
        out[n.name] = std::move(keep);
    }
    return out;
}

MaskSet structure_masks(const Graph& g, const KeepLists& keep) {
    MaskSet out;
    for (const auto& [name, kept] : keep) {
        const Node& n = weight_node(g, name);
        const auto& w = g.param(n.params[0]);
        const auto filters = w.desc.shape[0];
        const auto per = numel(w.desc.shape) / filters;
        std::vector<std::uint8_t> rows(static_cast<std::size_t>(filters), 0);
        for (auto k : kept) {
            if (k < 0 || k >= filters) throw ModelError("keep index out of range for '" + name + "'");
            rows[k] = 1;
        }
        std::vector<std::uint8_t> wm(static_cast<std::size_t>(filters * per));
        for (std::int64_t f = 0; f < filters; ++f) std::fill(wm.begin() + f * per, wm.begin() + (f + 1) * per, rows[f]);
        auto merge = [&](const std::string& p, const std::vector<std::uint8_t>& m) {
            auto& dst = out[p];
            if (dst.empty()) dst = m;
            else for (std::size_t i = 0; i < m.size(); ++i) dst[i] = dst[i] && m[i];
        };
        merge(n.params[0], wm);
        merge(n.params[1], rows);
        for (auto c : propagate(g, n).passthrough) {
            const Node& bn = g.nodes[c];
            if (bn.kind != OpKind::BatchNorm) continue;
            merge(bn.params[0], rows);
            merge(bn.params[1], rows);
        }
    }
    return out;
}

Graph shrink_structures(const Graph& g, const KeepLists& keep) {
    Graph out = g;
    if (keep.empty()) return out;
    struct ColumnCut {
        std::size_t node;
        std::vector<std::int64_t> channels;
        std::int64_t block;
    };
    std::vector<ColumnCut> cuts;

    for (const auto& [name, kept] : keep) {
        const Node& n = weight_node(g, name);
        const auto& w = g.param(n.params[0]);
        if (w.desc.type != ElemType::F32) throw ModelError("shrink_structures supports f32 layers only");
        const auto filters = w.desc.shape[0];
        if (kept.empty()) throw ModelError("keep-list would empty layer '" + name + "'");
        for (std::size_t i = 0; i < kept.size(); ++i) {
            if (kept[i] < 0 || kept[i] >= filters || (i && kept[i] <= kept[i - 1])) {
                throw ModelError("keep-list of '" + name + "' must be strictly increasing indices below " +
                                 std::to_string(filters));
            }
        }
        auto reach = propagate(g, n);
        if (reach.endpoints.empty()) throw ModelError("structures of '" + name + "' have no consuming layer");

        const auto per = numel(w.desc.shape) / filters;
        auto& ow = out.param(n.params[0]);
        ow.values<float>() = take_rows(w.values<float>(), per, kept);
        ow.desc.shape[0] = static_cast<std::int64_t>(kept.size());
        auto& ob = out.param(n.params[1]);
        ob.values<float>() = take_rows(g.param(n.params[1]).values<float>(), 1, kept);
        ob.desc.shape[0] = static_cast<std::int64_t>(kept.size());

        for (auto c : reach.passthrough) {
            const Node& pn = g.nodes[c];
            if (pn.kind != OpKind::BatchNorm) continue;
            for (const auto& p : pn.params) {
                auto& op = out.param(p);
                op.values<float>() = take_rows(g.param(p).values<float>(), 1, kept);
                op.desc.shape[0] = static_cast<std::int64_t>(kept.size());
            }
        }
        for (auto e : reach.endpoints) {
            const Node& en = g.nodes[e];
            const auto& in_shape = g.edge(en.inputs[0]).shape;
            // A Linear behind Flatten sees each channel as a block of H*W columns.
            std::int64_t block = 1;
            if (en.kind == OpKind::Linear) block = in_shape[0] / filters;
            cuts.push_back({e, kept, block});
        }
    }

    for (const auto& cut : cuts) {
        const Node& en = out.nodes[cut.node];
        auto& w = out.param(en.params[0]);
        const auto rows = w.desc.shape[0];
        if (en.kind == OpKind::Conv2D) {
            const auto channels = w.desc.shape[1];
            const auto block = w.desc.shape[2] * w.desc.shape[3];
            w.values<float>() = take_col_blocks(w.values<float>(), rows, channels, block, cut.channels);
            w.desc.shape[1] = static_cast<std::int64_t>(cut.channels.size());
        } else {
            const auto ncols = w.desc.shape[1] / cut.block;
            w.values<float>() = take_col_blocks(w.values<float>(), rows, ncols, cut.block, cut.channels);
            w.desc.shape[1] = static_cast<std::int64_t>(cut.channels.size()) * cut.block;
        }
    }

    if (!out.meta.count(kBaselineKey)) out.meta[kBaselineKey] = static_cast<double>(weight_count(g));
    infer_shapes_inplace(out);
    return out;
}

PruneHook::PruneHook(PruneSchedule sched, PruneMode mode, Heuristic h, std::uint64_t seed, std::size_t calibration_samples)
    : sched_(sched), mode_(mode), heuristic_(h), seed_(seed), calib_n_(calibration_samples) {
    sched_.check();
    if (mode_ == PruneMode::Element && h != Heuristic::Level && h != Heuristic::Random) {
        throw UsageError("heuristic '" + to_string(h) + "' applies to structural pruning only");
    }
}

void PruneHook::on_epoch(int t, Session& s) {
    auto target = schedule_target(sched_, t);
    if (!target || *target <= current_ || *target <= 0.0) return;
    const Graph& g = s.graph();
    if (mode_ == PruneMode::Element) {
        for (auto& [name, keep] : element_masks(g, *target, heuristic_, s.masks(), seed_)) s.set_mask(name, std::move(keep));
    } else {
        Dataset batch = s.train_data().head(calib_n_);
        Calibration cal;
        cal.batch = &batch;
        cal.seed = seed_;
        keep_ = structure_keep_lists(g, *target, heuristic_, cal, keep_);
        for (auto& [name, keep] : structure_masks(g, keep_)) s.set_mask(name, std::move(keep));
    }
    current_ = *target;
    ++events_;
}

double realized_sparsity(const Graph& g) {
    double ref = g.meta.count(kBaselineKey) ? g.meta.at(kBaselineKey) : static_cast<double>(weight_count(g));
    if (ref <= 0.0) return 0.0;
    return 1.0 - static_cast<double>(nonzero_weight_count(g)) / ref;
}

} // namespace tinyforge
