// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace tinyforge {

using Bytes = std::vector<std::uint8_t>;

template <typename T> void put_le(Bytes& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
    }
    out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T> T get_le(const std::uint8_t* p) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
    }
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
}

inline void pad_to(Bytes& out, std::size_t align) {
    while (out.size() % align) out.push_back(0);
}

inline std::size_t align_up(std::size_t n, std::size_t align) { return (n + align - 1) / align * align; }

Bytes read_file(const std::filesystem::path& p);
std::string read_text(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const Bytes& data);
void write_text(const std::filesystem::path& p, const std::string& text);

} // namespace tinyforge
