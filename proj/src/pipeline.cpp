// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/pipeline.hpp"

#include <cstdio>

#include "tinyforge/memplan.hpp"
#include "tinyforge/pack.hpp"
#include "tinyforge/presets.hpp"
#include "tinyforge/qat.hpp"
#include "tinyforge/refrun.hpp"

namespace tinyforge {

QuantMode quant_mode_from_string(const std::string& s) {
    if (s == "f32" || s == "none") return QuantMode::F32;
    if (s == "ppq") return QuantMode::Ppq;
    if (s == "qat") return QuantMode::Qat;
    throw UsageError("unknown quantization mode '" + s + "' (f32, ppq, qat)");
}

std::string to_string(QuantMode m) {
    switch (m) {
    case QuantMode::F32: return "f32";
    case QuantMode::Ppq: return "ppq";
    case QuantMode::Qat: return "qat";
    }
    return "?";
}

PruneRun prune_and_retrain(const Graph& g, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                           const PruneSchedule& sched, PruneMode mode, Heuristic h) {
    PruneHook hook(sched, mode, h, cfg.seed);
    TrainHook* hooks[] = {&hook};
    PruneRun r;
    r.trained = train(g, train_set, test_set, cfg, hooks, masks_from_zeros(g));
    r.events = hook.events();
    r.graph = mode == PruneMode::Structural ? shrink_structures(r.trained.graph, hook.keep_lists()) : r.trained.graph;
    return r;
}

Graph quantize_graph(const Graph& g, QuantMode mode, const Dataset& train_set, const TrainConfig& cfg,
                     std::size_t calib_samples) {
    switch (mode) {
    case QuantMode::F32: return g;
    case QuantMode::Ppq: return quantize_ppq(g, train_set, calib_samples);
    case QuantMode::Qat: return quantize_qat(g, train_set, nullptr, cfg, {}, masks_from_zeros(g)).quantized;
    }
    return g;
}

Graph optimize_graph(const Graph& g, std::vector<PassReport>* reports) {
    PassReport a, b;
    Graph out = fuse_relu(fold_batchnorm(g, &a), &b);
    if (reports) {
        reports->push_back(std::move(a));
        reports->push_back(std::move(b));
    }
    return out;
}

Footprint footprint(const Graph& g) {
    Footprint f;
    f.flash_bytes = pack(g).bytes.size();
    f.sram_bytes = plan_memory(g).peak;
    return f;
}

std::vector<SweepRow> run_sweep(const SweepConfig& cfg, const std::function<void(const SweepRow&)>& on_row) {
    for (double t : cfg.targets) {
        if (!(t >= 0.0 && t <= 1.0)) throw UsageError("sweep targets must lie in [0, 1]");
    }
    std::vector<SweepRow> rows;
    for (auto seed : cfg.seeds) {
        auto data = split(make_blobs(cfg.samples, cfg.classes, seed), cfg.test_fraction);
        std::vector<std::int64_t> sizes{2};
        sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
        sizes.push_back(cfg.classes);
        Graph g = mlp_preset(sizes, "sweep");
        init_params(g, seed);
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        Graph baseline = train(g, data.train, nullptr, tc).graph;

        for (auto mode : cfg.modes) {
            for (auto h : cfg.heuristics) {
                if (mode == PruneMode::Element && h != Heuristic::Level && h != Heuristic::Random) continue;
                for (double target : cfg.targets) {
                    Graph pruned = baseline;
                    if (target > 0.0) {
                        PruneSchedule s;
                        s.kind = PruneSchedule::Kind::Agp;
                        s.s_f = target;
                        s.n = cfg.prune_steps;
                        TrainConfig rc = tc;
                        rc.epochs = cfg.retrain_epochs;
                        pruned = prune_and_retrain(baseline, data.train, nullptr, rc, s, mode, h).graph;
                    }
                    for (auto q : cfg.quant) {
                        TrainConfig qc = tc;
                        qc.epochs = cfg.qat_epochs;
                        Graph final_graph = optimize_graph(quantize_graph(pruned, q, data.train, qc, cfg.calib_samples));
                        auto fp = footprint(final_graph);
                        SweepRow row;
                        row.seed = seed;
                        row.mode = mode;
                        row.heuristic = h;
                        row.quant = q;
                        row.target = target;
                        row.realized_sparsity = realized_sparsity(final_graph);
                        row.accuracy = evaluate(final_graph, data.test).accuracy;
                        row.flash_bytes = fp.flash_bytes;
                        row.sram_bytes = fp.sram_bytes;
                        if (on_row) on_row(row);
                        rows.push_back(row);
                    }
                }
            }
        }
    }
    return rows;
}

std::string sweep_csv_header() {
    return "seed,mode,heuristic,quant,target,realized_sparsity,accuracy,flash_bytes,sram_bytes";
}

std::string to_csv(const SweepRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu,%s,%s,%s,%.4g,%.6f,%.6f,%zu,%zu", static_cast<unsigned long long>(r.seed),
                  to_string(r.mode).c_str(), to_string(r.heuristic).c_str(), to_string(r.quant).c_str(), r.target,
                  r.realized_sparsity, r.accuracy, r.flash_bytes, r.sram_bytes);
    return buf;
}

} // namespace tinyforge
