// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyforge/ir.hpp"

namespace tinyforge {

/// Allocation and release lists per operator, in execution order.
struct LifetimeTable {
    std::vector<std::string> ops;
    std::vector<std::vector<std::string>> alloc;
    std::vector<std::vector<std::string>> release;

    std::size_t size() const { return ops.size(); }
    /// Appends an operator with empty lists and returns its index.
    std::size_t add_op(std::string name);
};

/// Edges are allocated at their producer and released at their last
/// consumer in `order`. Graph inputs and outputs are caller buffers and do
/// not appear. Throws ModelError on an edge nobody reads.
LifetimeTable lifetimes(const Graph& g, const std::vector<std::size_t>& order);

struct Placement {
    std::size_t offset = 0;
    std::size_t size = 0; ///< rounded up to 4 bytes
    std::size_t alloc_op = 0;
    std::size_t release_op = 0;

    std::size_t end() const { return offset + size; }
    friend bool operator==(const Placement&, const Placement&) = default;
};

struct MemoryPlan {
    std::map<std::string, Placement> placements;
    std::size_t peak = 0;
    std::size_t naive = 0;               ///< sum of all sizes
    std::vector<std::size_t> occupancy;  ///< highest occupied end while each operator runs
    friend bool operator==(const MemoryPlan&, const MemoryPlan&) = default;
};

/// Walks the operators in order. Each operator's allocations go to the
/// lowest offset gap between live regions that fits (or after the last
/// live region); its releases are freed once it has run, so an operator
/// never overwrites its own inputs. Sizes are rounded up to 4.
MemoryPlan first_fit_plan(const LifetimeTable& table, const std::map<std::string, std::size_t>& sizes);

struct PlanCheck {
    bool ok = true;
    std::string message;
    std::optional<std::size_t> op;
    std::string first;
    std::string second;
};

/// Independent check: regions live at the same operator must not overlap,
/// every table entry must be placed, and peak must equal the highest end.
PlanCheck verify_plan(const MemoryPlan& plan, const LifetimeTable& table);

/// Name of the im2col scratch buffer of a convolution node.
std::string scratch_name(const std::string& node);

/// Byte size of every planned buffer of `g`: intermediate edges and one
/// im2col scratch buffer per convolution.
std::map<std::string, std::size_t> buffer_sizes(const Graph& g);

/// lifetimes() over the toposort, plus convolution scratch buffers that
/// live only during their operator.
LifetimeTable graph_lifetimes(const Graph& g);

MemoryPlan plan_memory(const Graph& g);

/// Plan file contents: peak, naive sum, operator names and buffer placements.
nlohmann::json plan_to_json(const MemoryPlan& plan, const LifetimeTable& table);
/// Inverse of plan_to_json. Throws ModelError on missing fields.
MemoryPlan plan_from_json(const nlohmann::json& j);

} // namespace tinyforge
