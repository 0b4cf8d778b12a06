// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "tinyforge/dataset.hpp"
#include "tinyforge/quant.hpp"
#include "tinyforge/trainer.hpp"

namespace tinyforge {

/// Min/max of every f32 edge over the first `max_samples` samples.
RangeTable observe_ranges(const Graph& g, const Dataset& data, std::size_t max_samples = 256);

/// Post-training quantization: observe ranges on `calib`, then convert.
Graph quantize_ppq(const Graph& g, const Dataset& calib, std::size_t max_samples = 256);

/// Turns on fake quantization for the whole run and keeps the learned
/// activation ranges when training ends.
class QatHook : public TrainHook {
public:
    void on_train_begin(Session& s) override { s.enable_fake_quant(true); }
    void on_train_end(Session& s) override { ranges_ = s.fake_quant_ranges(); }
    const RangeTable& ranges() const { return ranges_; }

private:
    RangeTable ranges_;
};

struct QatResult {
    TrainResult trained; ///< f32 weights after quantization-aware training
    Graph quantized;
};

/// Quantization-aware training followed by conversion with the learned
/// ranges. `hooks` run alongside the fake-quantization hook.
QatResult quantize_qat(const Graph& g, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                       std::span<TrainHook* const> hooks = {}, const MaskSet& masks = {});

} // namespace tinyforge
