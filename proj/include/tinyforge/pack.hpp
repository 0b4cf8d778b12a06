// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tinyforge/bytes.hpp"
#include "tinyforge/crs.hpp"
#include "tinyforge/ir.hpp"

namespace tinyforge {

// Weight stream layout (all little-endian):
//   header      20 bytes   "TFWS" u16 version u16 flags u32 count u32 payload_offset u32 payload_size
//   descriptors 64 bytes each, see StreamEntry
//   payload     tensors at 4-aligned offsets relative to payload start
inline constexpr std::uint16_t kStreamVersion = 1;
inline constexpr std::size_t kStreamHeaderBytes = 20;
inline constexpr std::size_t kDescriptorBytes = 64;
inline constexpr std::size_t kStreamAlign = 4;

/// One tensor in the stream. Offsets are relative to the payload.
struct StreamEntry {
    std::string name; ///< not stored; recovered from pack order
    std::uint32_t offset = 0;
    std::uint32_t nbytes = 0;
    ElemType type = ElemType::F32;
    Layout layout = Layout::Dense;
    Shape shape;
    std::uint8_t index_bytes = 0; ///< CRS column index width (2 or 4), 0 if dense
    std::uint32_t nnz = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint32_t col_ind_offset = 0;
    std::uint32_t row_ptr_offset = 0;
    std::optional<QuantParams> quant; ///< scale and zero point only
    CrsCost cost;                     ///< both candidate sizes (weights only)
    bool crs_candidate = false;

    friend bool operator==(const StreamEntry&, const StreamEntry&) = default;
};

struct PackedStream {
    Bytes bytes;
    std::vector<StreamEntry> entries;

    std::size_t payload_offset() const { return kStreamHeaderBytes + entries.size() * kDescriptorBytes; }
    const StreamEntry* find(const std::string& name) const;
};

struct PackOptions {
    enum class Crs { Auto, Never, Always };
    Crs crs = Crs::Auto;
};

/// Parameter names in stream order: toposorted nodes, each node's params in
/// declaration order.
std::vector<std::string> pack_order(const Graph& g);

/// Packs every parameter. Weight matrices of Conv2D / Linear style nodes are
/// stored as CRS when crs_feasible says so (or as forced by `opts`).
PackedStream pack(const Graph& g, PackOptions opts = {});

/// Parses header and descriptors. Throws ModelError on a malformed stream.
PackedStream parse_stream(const Bytes& bytes);

/// Decodes entry `i` back into a dense parameter tensor.
ParamTensor unpack_tensor(const PackedStream& s, std::size_t i);

/// Replaces the parameters of `g` with the stream contents (matched by pack
/// order). Throws ModelError if the stream does not fit the graph.
Graph load_weights(const Graph& g, const Bytes& bytes);

void write_stream(const std::filesystem::path& p, const PackedStream& s);

} // namespace tinyforge
