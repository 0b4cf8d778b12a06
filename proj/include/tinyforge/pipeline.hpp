// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tinyforge/dataset.hpp"
#include "tinyforge/graphopt.hpp"
#include "tinyforge/prune.hpp"
#include "tinyforge/trainer.hpp"

namespace tinyforge {

enum class QuantMode { F32, Ppq, Qat };
QuantMode quant_mode_from_string(const std::string& s);
std::string to_string(QuantMode m);

/// Retrains `g` under a pruning schedule. Structural mode returns the
/// physically shrunk graph.
struct PruneRun {
    Graph graph;
    TrainResult trained;
    int events = 0;
};
PruneRun prune_and_retrain(const Graph& g, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                           const PruneSchedule& sched, PruneMode mode, Heuristic h);

/// F32 returns `g` unchanged. PPQ calibrates on the first `calib_samples`
/// training samples; QAT retrains for cfg.epochs with the zeros of `g`
/// pinned, so sparsity survives quantization.
Graph quantize_graph(const Graph& g, QuantMode mode, const Dataset& train_set, const TrainConfig& cfg,
                     std::size_t calib_samples = 256);

/// BatchNorm folding on float layers, then ReLU fusion on quantized ones.
Graph optimize_graph(const Graph& g, std::vector<PassReport>* reports = nullptr);

struct Footprint {
    std::size_t flash_bytes = 0; ///< packed weight stream length
    std::size_t sram_bytes = 0;  ///< planned activation peak
};
Footprint footprint(const Graph& g);

struct SweepConfig {
    std::vector<std::uint64_t> seeds{0};
    std::vector<PruneMode> modes{PruneMode::Element, PruneMode::Structural};
    std::vector<Heuristic> heuristics{Heuristic::Level};
    std::vector<QuantMode> quant{QuantMode::F32, QuantMode::Ppq};
    std::vector<double> targets{0.0, 0.5, 0.75, 0.9, 0.95, 0.99};
    std::vector<std::int64_t> hidden{128, 128};
    std::size_t samples = 1000;
    int classes = 2;
    double test_fraction = 0.2;
    TrainConfig train{0.01, 0.9, 32, 10, 0};
    int prune_steps = 5;     ///< AGP steps, one per epoch from t = 0
    int retrain_epochs = 10; ///< total epochs of the pruning run
    int qat_epochs = 3;
    std::size_t calib_samples = 256;
};

struct SweepRow {
    std::uint64_t seed = 0;
    PruneMode mode = PruneMode::Element;
    Heuristic heuristic = Heuristic::Level;
    QuantMode quant = QuantMode::F32;
    double target = 0.0;
    double realized_sparsity = 0.0;
    double accuracy = 0.0;
    std::size_t flash_bytes = 0;
    std::size_t sram_bytes = 0;
};

/// Seeds x modes x heuristics x targets x quant modes on an MLP over
/// Gaussian blobs. Heuristics that do not apply to a mode are skipped.
std::vector<SweepRow> run_sweep(const SweepConfig& cfg, const std::function<void(const SweepRow&)>& on_row = {});

std::string sweep_csv_header();
std::string to_csv(const SweepRow& r);

} // namespace tinyforge
