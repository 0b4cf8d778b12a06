// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/qat.hpp"

#include <algorithm>

#include "tinyforge/refrun.hpp"

namespace tinyforge {

RangeTable observe_ranges(const Graph& g, const Dataset& data, std::size_t max_samples) {
    const auto n = std::min(max_samples, data.size());
    if (n == 0) throw UsageError("range calibration needs at least one sample");
    Interpreter it(g);
    RangeTable r;
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& [edge, t] : it.trace(data.input(i))) {
            if (t.type() != ElemType::F32) continue;
            const auto& v = t.values<float>();
            if (v.empty()) continue;
            auto [lo, hi] = std::minmax_element(v.begin(), v.end());
            auto [pos, fresh] = r.emplace(edge, std::make_pair(double(*lo), double(*hi)));
            if (!fresh) {
                pos->second.first = std::min(pos->second.first, double(*lo));
                pos->second.second = std::max(pos->second.second, double(*hi));
            }
        }
    }
    return r;
}

Graph quantize_ppq(const Graph& g, const Dataset& calib, std::size_t max_samples) {
    return convert_to_integer(g, observe_ranges(g, calib, max_samples));
}

QatResult quantize_qat(const Graph& g, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                       std::span<TrainHook* const> hooks, const MaskSet& masks) {
    QatHook qat;
    std::vector<TrainHook*> all(hooks.begin(), hooks.end());
    all.insert(all.begin(), &qat);
    QatResult r;
    r.trained = train(g, train_set, test_set, cfg, all, masks);
    r.quantized = convert_to_integer(r.trained.graph, qat.ranges());
    return r;
}

} // namespace tinyforge
