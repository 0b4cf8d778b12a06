// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyforge/ir.hpp"
#include "tinyforge/memplan.hpp"
#include "tinyforge/pack.hpp"

namespace tinyforge {

/// One runtime call in the emitted inference function.
struct EmitCall {
    std::string node;
    std::string function;
    std::vector<std::string> args;
};

struct EmitPlan {
    std::string prefix; ///< identifier prefix for every emitted symbol
    std::string init_fn;
    std::string infer_fn;
    std::string input_ctype;
    std::string output_ctype;
    std::size_t weight_bytes = 0;
    std::size_t heap_bytes = 0;
    std::vector<EmitCall> calls; ///< in toposort order, one per node
};

struct EmittedSources {
    std::string header; ///< model.h
    std::string source; ///< model.c
    std::string data;   ///< model_data.c
};

/// C identifier prefix for a model name: non-alphanumerics become '_', and
/// "m_" is prepended if the result is empty or starts with a digit.
std::string sanitize_identifier(const std::string& name);

/// Builds the call sequence. Throws UsageError unless the graph has exactly
/// one input and one output, and ModelError if the stream or plan do not
/// belong to `g`.
EmitPlan make_emit_plan(const Graph& g, const PackedStream& stream, const MemoryPlan& plan, const std::string& name);

EmittedSources emit(const Graph& g, const PackedStream& stream, const MemoryPlan& plan, const std::string& name);

/// Writes model.h, model.c, model_data.c (and dnnrt.h if `with_runtime_header`).
void write_sources(const std::filesystem::path& dir, const EmittedSources& src, bool with_runtime_header = true);

/// Contents of runtime/dnnrt.h as shipped with the library.
const std::string& runtime_header();

/// Flash and SRAM figures, parameter counts, CRS choices and buffer offsets.
nlohmann::json emit_report(const Graph& g, const PackedStream& stream, const MemoryPlan& plan);

} // namespace tinyforge
