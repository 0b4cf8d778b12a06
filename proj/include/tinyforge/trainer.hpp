// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tinyforge/dataset.hpp"
#include "tinyforge/ir.hpp"
#include "tinyforge/quant.hpp"

namespace tinyforge {

struct TrainConfig {
    double lr = 1e-3;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    int epochs = 10;
    std::uint64_t seed = 0;

    /// Throws UsageError on out-of-range values.
    void check() const;
};

/// Keep flags per parameter tensor (1 = trainable value, 0 = pinned at 0).
using MaskSet = std::map<std::string, std::vector<std::uint8_t>>;

/// Masks for every Conv2D / Linear weight, marking its current zeros.
MaskSet masks_from_zeros(const Graph& g);

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0; ///< mean per-sample loss, summed in sample order
    double test_accuracy = 0.0;
};

struct TrainResult {
    Graph graph;
    std::vector<EpochMetrics> history;
    /// Accuracy of `graph` on the test set as computed by refrun::evaluate.
    double final_accuracy = 0.0;
    MaskSet masks;
    RangeTable ranges; ///< fake-quantization ranges, if enabled
};

class Session;

/// Callbacks around the training loop. `on_epoch(t)` fires once before
/// training (t = 0) and after each completed epoch t.
class TrainHook {
public:
    virtual ~TrainHook() = default;
    virtual void on_train_begin(Session&) {}
    virtual void on_epoch(int, Session&) {}
    virtual void on_train_end(Session&) {}
};

/// The trainer's view handed to hooks.
class Session {
public:
    struct Impl;
    explicit Session(Impl& impl) : impl_(&impl) {}

    /// Current parameters as a graph (copied out of the training network).
    const Graph& graph();
    const Dataset& train_data() const;
    const TrainConfig& config() const;
    int total_epochs() const;

    const MaskSet& masks() const;
    /// Installs `keep` for `param`: masked values and their momentum are
    /// zeroed now and after every optimizer step.
    void set_mask(const std::string& param, std::vector<std::uint8_t> keep);

    /// Gradients of the mean loss over `batch` for every trainable tensor,
    /// without touching parameters or running statistics.
    std::map<std::string, std::vector<float>> gradients(const Dataset& batch);

    /// Fake-quantize weights and activations in the forward pass.
    void enable_fake_quant(bool on);
    const RangeTable& fake_quant_ranges() const;

private:
    Impl* impl_;
};

TrainResult train(const Graph& g, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                  std::span<TrainHook* const> hooks = {}, const MaskSet& masks = {});

/// Gradients of the mean cross-entropy over `batch` (batch statistics for
/// BatchNorm).
std::map<std::string, std::vector<float>> compute_gradients(const Graph& g, const Dataset& batch);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::map<std::string, std::vector<double>> analytic;
    std::map<std::string, std::vector<double>> numeric;
};

/// Analytic gradients (double precision) against central differences with
/// step `epsilon`. Relative error |a-n| / max(|a|,|n|), skipping pairs whose
/// absolute difference is under the rounding floor 1e-14 / epsilon.
GradCheckResult grad_check(const Graph& g, const Dataset& data, double epsilon = 1e-4);

/// v <- m*v + g; w <- w - lr*v.
template <typename T> void sgd_momentum_step(std::span<T> w, std::span<const T> g, std::span<T> v, double lr, double m) {
    for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = static_cast<T>(m * v[i] + g[i]);
        w[i] = static_cast<T>(w[i] - lr * v[i]);
    }
}

} // namespace tinyforge
