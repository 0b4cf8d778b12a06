// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "tinyforge/bytes.hpp"
#include "tinyforge/ir.hpp"

namespace tinyforge {

/// A model bundle is `<stem>.json` (topology, attributes, quantization)
/// plus `<stem>.bin` (tensor values, little-endian, 4-byte aligned).
struct BundlePaths {
    std::filesystem::path manifest;
    std::filesystem::path blob;
};

/// Accepts `stem`, `stem.json` or `stem.bin`.
BundlePaths bundle_paths(const std::filesystem::path& p);

Graph load_model(const std::filesystem::path& p);
void save_model(const Graph& g, const std::filesystem::path& p);

/// In-memory halves of a bundle, exposed for tests and for tools that
/// embed models.
Graph parse_model(const nlohmann::json& manifest, const Bytes& blob);
std::pair<nlohmann::json, Bytes> serialize_model(const Graph& g);

nlohmann::json quant_to_json(const QuantParams& q);
QuantParams quant_from_json(const nlohmann::json& j);

} // namespace tinyforge
