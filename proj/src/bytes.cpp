// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/bytes.hpp"

#include <fstream>
#include <iterator>

#include "tinyforge/error.hpp"

namespace tinyforge {

Bytes read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw PrerequisiteError("cannot open '" + p.string() + "'");
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw PrerequisiteError("cannot open '" + p.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& p, const Bytes& data) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("short write to '" + p.string() + "'");
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    write_file(p, Bytes(text.begin(), text.end()));
}

} // namespace tinyforge
