// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/memplan.hpp"

#include <algorithm>
#include <set>

#include "tinyforge/bytes.hpp"
#include "tinyforge/kernels.hpp"

namespace tinyforge {

std::size_t LifetimeTable::add_op(std::string name) {
    ops.push_back(std::move(name));
    alloc.emplace_back();
    release.emplace_back();
    return ops.size() - 1;
}

LifetimeTable lifetimes(const Graph& g, const std::vector<std::size_t>& order) {
    LifetimeTable t;
    std::map<std::string, std::size_t> produced_at, last_use;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const Node& n = g.nodes.at(order[k]);
        t.add_op(n.name);
        for (const auto& in : n.inputs) {
            if (!g.is_input(in) && !g.is_output(in)) {
                if (!produced_at.count(in)) throw ModelError("edge '" + in + "' is read by '" + n.name + "' before it is produced");
                last_use[in] = k;
            }
        }
        for (const auto& out : n.outputs) {
            if (g.is_input(out) || g.is_output(out)) continue;
            produced_at[out] = k;
            t.alloc[k].push_back(out);
        }
    }
    for (const auto& [edge, k] : produced_at) {
        auto it = last_use.find(edge);
        if (it == last_use.end()) throw ModelError("dead edge '" + edge + "': produced but never read");
        t.release[it->second].push_back(edge);
    }
    // Release lists follow allocation order for stable output.
    for (auto& r : t.release) {
        std::sort(r.begin(), r.end(), [&](const std::string& a, const std::string& b) {
            return produced_at[a] < produced_at[b] || (produced_at[a] == produced_at[b] && a < b);
        });
    }
    return t;
}

MemoryPlan first_fit_plan(const LifetimeTable& table, const std::map<std::string, std::size_t>& sizes) {
    MemoryPlan plan;
    // Live regions keyed by offset.
    std::multimap<std::size_t, std::string> live;
    for (std::size_t k = 0; k < table.size(); ++k) {
        for (const auto& name : table.alloc[k]) {
            auto sz = sizes.find(name);
            if (sz == sizes.end()) throw ModelError("no size given for buffer '" + name + "'");
            if (plan.placements.count(name)) throw ModelError("buffer '" + name + "' allocated twice");
            Placement p;
            p.size = align_up(sz->second, 4);
            p.alloc_op = k;
            p.release_op = table.size();
            std::size_t cursor = 0;
            for (const auto& [off, other] : live) {
                if (off >= cursor && off - cursor >= p.size) break;
                cursor = std::max(cursor, plan.placements.at(other).end());
            }
            p.offset = cursor;
            plan.naive += p.size;
            plan.peak = std::max(plan.peak, p.end());
            live.emplace(p.offset, name);
            plan.placements[name] = p;
        }
        std::size_t occ = 0;
        for (const auto& [off, name] : live) occ = std::max(occ, plan.placements.at(name).end());
        plan.occupancy.push_back(occ);
        for (const auto& name : table.release[k]) {
            auto pit = plan.placements.find(name);
            if (pit == plan.placements.end()) throw ModelError("buffer '" + name + "' released before allocation");
            pit->second.release_op = k;
            auto range = live.equal_range(pit->second.offset);
            for (auto it = range.first; it != range.second; ++it) {
                if (it->second == name) {
                    live.erase(it);
                    break;
                }
            }
        }
    }
    if (!live.empty()) throw ModelError("buffer '" + live.begin()->second + "' is never released");
    return plan;
}

PlanCheck verify_plan(const MemoryPlan& plan, const LifetimeTable& table) {
    PlanCheck r;
    auto fail = [&](std::string msg, std::optional<std::size_t> op = {}, std::string a = {}, std::string b = {}) {
        r.ok = false;
        r.message = std::move(msg);
        r.op = op;
        r.first = std::move(a);
        r.second = std::move(b);
        return r;
    };
    std::map<std::string, std::size_t> alloc_at, release_at;
    for (std::size_t k = 0; k < table.size(); ++k) {
        for (const auto& a : table.alloc[k]) alloc_at[a] = k;
        for (const auto& a : table.release[k]) release_at[a] = k;
    }
    for (const auto& [name, k] : alloc_at) {
        if (!plan.placements.count(name)) return fail("buffer '" + name + "' is not placed", k, name);
        if (!release_at.count(name)) return fail("buffer '" + name + "' is never released", k, name);
        if (release_at[name] < k) return fail("buffer '" + name + "' is released before it is allocated", k, name);
    }
    std::size_t max_end = 0;
    for (const auto& [name, p] : plan.placements) {
        if (!alloc_at.count(name)) return fail("placed buffer '" + name + "' is not in the lifetime table", {}, name);
        if (p.offset % 4) return fail("buffer '" + name + "' is not 4-byte aligned", {}, name);
        max_end = std::max(max_end, p.offset + p.size);
    }
    for (std::size_t k = 0; k < table.size(); ++k) {
        std::vector<std::pair<std::string, const Placement*>> live;
        for (const auto& [name, a] : alloc_at) {
            if (a <= k && release_at[name] >= k) live.emplace_back(name, &plan.placements.at(name));
        }
        for (std::size_t i = 0; i < live.size(); ++i) {
            for (std::size_t j = i + 1; j < live.size(); ++j) {
                const auto& a = *live[i].second;
                const auto& b = *live[j].second;
                if (a.size && b.size && a.offset < b.offset + b.size && b.offset < a.offset + a.size) {
                    return fail("'" + live[i].first + "' and '" + live[j].first + "' overlap while operator " +
                                    std::to_string(k) + " runs",
                                k, live[i].first, live[j].first);
                }
            }
        }
    }
    if (plan.peak != max_end) {
        return fail("peak " + std::to_string(plan.peak) + " differs from the highest occupied end " +
                    std::to_string(max_end));
    }
    return r;
}

std::string scratch_name(const std::string& node) { return node + ":im2col"; }

std::map<std::string, std::size_t> buffer_sizes(const Graph& g) {
    std::map<std::string, std::size_t> sizes;
    for (const auto& [name, d] : g.edges) {
        if (g.is_input(name) || g.is_output(name)) continue;
        sizes[name] = static_cast<std::size_t>(numel(d.shape)) * elem_size(d.type);
    }
    for (const auto& n : g.nodes) {
        if (n.kind != OpKind::Conv2D && n.kind != OpKind::QLinearConv) continue;
        const auto& in = g.edge(n.inputs[0]);
        kernels::ConvGeom geo{in.shape[0], in.shape[1], in.shape[2], n.attrs.kernel, n.attrs.stride, n.attrs.pad};
        sizes[scratch_name(n.name)] = static_cast<std::size_t>(geo.rows() * geo.cols()) * elem_size(in.type);
    }
    return sizes;
}

LifetimeTable graph_lifetimes(const Graph& g) {
    auto order = toposort(g);
    auto t = lifetimes(g, order);
    for (std::size_t k = 0; k < order.size(); ++k) {
        const Node& n = g.nodes[order[k]];
        if (n.kind != OpKind::Conv2D && n.kind != OpKind::QLinearConv) continue;
        t.alloc[k].push_back(scratch_name(n.name));
        t.release[k].push_back(scratch_name(n.name));
    }
    return t;
}

MemoryPlan plan_memory(const Graph& g) {
    validate(g);
    return first_fit_plan(graph_lifetimes(g), buffer_sizes(g));
}

nlohmann::json plan_to_json(const MemoryPlan& plan, const LifetimeTable& table) {
    nlohmann::json j;
    j["peak_bytes"] = plan.peak;
    j["naive_bytes"] = plan.naive;
    j["ops"] = table.ops;
    j["occupancy"] = plan.occupancy;
    auto& buffers = j["buffers"] = nlohmann::json::array();
    for (const auto& [name, p] : plan.placements) {
        buffers.push_back({{"name", name}, {"offset", p.offset}, {"size", p.size}, {"alloc_op", p.alloc_op},
                           {"release_op", p.release_op}});
    }
    return j;
}

MemoryPlan plan_from_json(const nlohmann::json& j) {
    try {
        MemoryPlan plan;
        plan.peak = j.at("peak_bytes").get<std::size_t>();
        plan.naive = j.at("naive_bytes").get<std::size_t>();
        plan.occupancy = j.at("occupancy").get<std::vector<std::size_t>>();
        for (const auto& b : j.at("buffers")) {
            Placement p;
            p.offset = b.at("offset").get<std::size_t>();
            p.size = b.at("size").get<std::size_t>();
            p.alloc_op = b.at("alloc_op").get<std::size_t>();
            p.release_op = b.at("release_op").get<std::size_t>();
            plan.placements[b.at("name").get<std::string>()] = p;
        }
        return plan;
    } catch (const nlohmann::json::exception& e) {
        throw ModelError(std::string("malformed plan file: ") + e.what());
    }
}

} // namespace tinyforge
