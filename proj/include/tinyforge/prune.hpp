// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tinyforge/dataset.hpp"
#include "tinyforge/ir.hpp"
#include "tinyforge/trainer.hpp"

namespace tinyforge {

struct PruneSchedule {
    enum class Kind { OneShot, Agp };
    Kind kind = Kind::Agp;
    double s_i = 0.0;
    double s_f = 0.5;
    int t0 = 0;
    int n = 1;
    int dt = 1;

    /// Throws UsageError unless 0 <= s_i <= s_f <= 1, n >= 1, dt >= 1, t0 >= 0.
    void check() const;
};

enum class Heuristic { Level, Random, L1, L2, Gradient, ActivationZeros };
enum class PruneMode { Element, Structural };

Heuristic heuristic_from_string(const std::string& s);
std::string to_string(Heuristic h);
PruneSchedule::Kind schedule_kind_from_string(const std::string& s);
std::string to_string(PruneSchedule::Kind k);
PruneMode prune_mode_from_string(const std::string& s);
std::string to_string(PruneMode m);

/// Target sparsity at epoch t. t is clamped down to the last step boundary
/// and into [t0, t0 + n*dt]; before t0 the result is s_i.
double agp_sparsity(const PruneSchedule& s, int t);

/// Sparsity requested at epoch t by either schedule kind, or nullopt if
/// the schedule does not act at t.
std::optional<double> schedule_target(const PruneSchedule& s, int t);

/// Element indices from least to most important. Level ranks by |w|;
/// Random is a seeded permutation. Ties keep lower indices first.
std::vector<std::size_t> rank_elements(std::span<const float> w, Heuristic h, std::uint64_t seed = 0);

/// Orders structures by ascending score (ties: lower index first).
std::vector<std::size_t> rank_by_score(std::span<const double> scores);

/// Calibration inputs needed by the data-driven heuristics.
struct Calibration {
    const Dataset* batch = nullptr;
    /// Precomputed gradients per parameter; computed from `batch` if absent.
    const std::map<std::string, std::vector<float>>* gradients = nullptr;
    std::uint64_t seed = 0;
};

/// Importance score of each output structure (conv filter or linear row) of
/// a weight node; higher means more important.
std::vector<double> structure_scores(const Graph& g, const std::string& node, Heuristic h, const Calibration& cal);

/// Structure order for `node`, least important first.
std::vector<std::size_t> rank_structures(const Graph& g, const std::string& node, Heuristic h, const Calibration& cal);

/// Per-tensor keep masks with ceil(s * numel) entries pruned from every
/// Conv2D / Linear weight. Entries already pruned in `prior` are pruned
/// first, so masks only grow. Biases are never pruned.
MaskSet element_masks(const Graph& g, double sparsity, Heuristic h, const MaskSet& prior = {},
                      std::uint64_t seed = 0);

/// Writes zeros where masks are 0.
Graph apply_element_mask(const Graph& g, const MaskSet& masks);

/// Kept output structures per weight node.
using KeepLists = std::map<std::string, std::vector<std::int64_t>>;

/// True if removing outputs of `node` can be propagated to every consumer.
bool structurally_prunable(const Graph& g, const std::string& node);

/// Removes ceil(s * F) structures (at most F-1) from every prunable weight
/// node. Structures removed in `prior` go first.
KeepLists structure_keep_lists(const Graph& g, double sparsity, Heuristic h, const Calibration& cal,
                               const KeepLists& prior = {});

/// Zeroes removed structures, their biases and any directly following
/// batch-norm gain and shift, leaving shapes intact.
MaskSet structure_masks(const Graph& g, const KeepLists& keep);

/// Physically removes the structures and propagates the channel removal
/// through ReLU, MaxPool, BatchNorm and Flatten into the consuming
/// Conv2D / Linear. Throws ModelError if propagation reaches a graph
/// output, an Add or a Softmax, or if a keep-list is empty.
Graph shrink_structures(const Graph& g, const KeepLists& keep);

/// Hook that prunes on the schedule during training. Element mode installs
/// masks; structural mode masks whole structures, to be shrunk afterwards
/// with keep_lists().
class PruneHook : public TrainHook {
public:
    PruneHook(PruneSchedule sched, PruneMode mode, Heuristic h, std::uint64_t seed = 0,
              std::size_t calibration_samples = 64);

    void on_epoch(int t, Session& s) override;

    int events() const { return events_; }
    const KeepLists& keep_lists() const { return keep_; }
    double current_target() const { return current_; }

private:
    PruneSchedule sched_;
    PruneMode mode_;
    Heuristic heuristic_;
    std::uint64_t seed_;
    std::size_t calib_n_;
    int events_ = 0;
    double current_ = 0.0;
    KeepLists keep_;
};

/// 1 - (nonzero weights / reference weight count). The reference is the
/// count recorded before structural pruning, if any.
double realized_sparsity(const Graph& g);

} // namespace tinyforge
