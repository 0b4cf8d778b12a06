// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/pack.hpp"

#include <cstring>
#include <limits>

namespace tinyforge {

namespace {

constexpr char kMagic[4] = {'T', 'F', 'W', 'S'};
constexpr std::uint32_t kFlagQuant = 1;

std::uint32_t u32(std::size_t v, const std::string& what) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw ModelError(what + " exceeds 4 GiB stream limits");
    return static_cast<std::uint32_t>(v);
}

bool crs_candidate(const Graph& g, const Node& n, std::size_t param_index) {
    if (param_index != 0 || !is_weight_layer(n.kind)) return false;
    auto rank = g.param(n.params[0]).desc.shape.size();
    return rank == 2 || rank == 4;
}

template <typename T> void append_values(Bytes& out, const std::vector<T>& v) {
    for (auto x : v) put_le<T>(out, x);
}

template <typename T> void append_crs(Bytes& payload, StreamEntry& e, const std::vector<T>& dense, T zero) {
    auto m = crs_encode<T>(dense, e.rows, e.cols, zero);
    const auto start = payload.size();
    append_values(payload, m.values);
    pad_to(payload, kStreamAlign);
    e.col_ind_offset = u32(payload.size(), "column index offset");
    for (auto c : m.col_ind) {
        if (e.index_bytes == 2) put_le<std::uint16_t>(payload, static_cast<std::uint16_t>(c));
        else put_le<std::uint32_t>(payload, c);
    }
    pad_to(payload, kStreamAlign);
    e.row_ptr_offset = u32(payload.size(), "row pointer offset");
    append_values(payload, m.row_ptr);
    e.nbytes = u32(payload.size() - start, "tensor size");
    e.nnz = u32(m.nnz(), "nnz");
}

template <typename T> std::vector<T> read_values(const std::uint8_t* p, std::size_t n) {
    std::vector<T> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = get_le<T>(p + i * sizeof(T));
    return v;
}

template <typename T> std::vector<T> decode_crs(const PackedStream& s, const StreamEntry& e, T zero) {
    const auto* base = s.bytes.data() + s.payload_offset();
    CrsMatrix<T> m;
    m.rows = e.rows;
    m.cols = e.cols;
    m.values = read_values<T>(base + e.offset, e.nnz);
    m.col_ind.resize(e.nnz);
    for (std::uint32_t k = 0; k < e.nnz; ++k) {
        const auto* p = base + e.col_ind_offset + k * e.index_bytes;
        m.col_ind[k] = e.index_bytes == 2 ? get_le<std::uint16_t>(p) : get_le<std::uint32_t>(p);
    }
    m.row_ptr = read_values<std::uint32_t>(base + e.row_ptr_offset, e.rows + 1);
    return crs_decode(m, zero);
}

template <typename T> TensorData dense_data(const ParamTensor& p) { return p.values<T>(); }

} // namespace

const StreamEntry* PackedStream::find(const std::string& name) const {
    for (const auto& e : entries) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

std::vector<std::string> pack_order(const Graph& g) {
    std::vector<std::string> names;
    for (auto i : toposort(g)) {
        for (const auto& p : g.nodes[i].params) names.push_back(p);
    }
    return names;
}

PackedStream pack(const Graph& g, PackOptions opts) {
    validate(g);
    PackedStream s;
    Bytes payload;
    for (auto i : toposort(g)) {
        const Node& n = g.nodes[i];
        for (std::size_t pi = 0; pi < n.params.size(); ++pi) {
            const auto& p = g.param(n.params[pi]);
            StreamEntry e;
            e.name = n.params[pi];
            e.type = p.desc.type;
            e.shape = p.desc.shape;
            if (e.shape.size() > 4) throw ModelError("parameter '" + e.name + "' has rank above 4");
            if (p.desc.quant) {
                e.quant = QuantParams{};
                e.quant->scale = p.desc.quant->scale;
                e.quant->zero_point = p.desc.quant->zero_point;
            }
            pad_to(payload, kStreamAlign);
            e.offset = u32(payload.size(), "tensor offset");
            e.crs_candidate = crs_candidate(g, n, pi);
            bool use_crs = false;
            if (e.crs_candidate && e.type != ElemType::I32) {
                auto [rows, cols] = matrix_view(e.shape);
                e.rows = u32(static_cast<std::size_t>(rows), "rows");
                e.cols = u32(static_cast<std::size_t>(cols), "cols");
                std::int64_t nnz = 0;
                if (e.type == ElemType::F32) {
                    for (float v : p.values<float>()) nnz += v != 0.0f;
                } else {
                    const auto zp = static_cast<std::uint8_t>(e.quant ? e.quant->zero_point : 0);
                    for (auto v : p.values<std::uint8_t>()) nnz += v != zp;
                }
                e.cost = crs_feasible(rows, cols, nnz, e.type);
                use_crs = opts.crs == PackOptions::Crs::Always ||
                          (opts.crs == PackOptions::Crs::Auto && e.cost.feasible);
            }
            if (use_crs) {
                e.layout = Layout::Crs;
                e.index_bytes = static_cast<std::uint8_t>(e.cost.index_bytes);
                if (e.type == ElemType::F32) {
                    append_crs<float>(payload, e, p.values<float>(), 0.0f);
                } else {
                    append_crs<std::uint8_t>(payload, e, p.values<std::uint8_t>(),
                                             static_cast<std::uint8_t>(e.quant ? e.quant->zero_point : 0));
                }
            } else {
                e.rows = e.cols = 0;
                switch (e.type) {
                case ElemType::F32: append_values(payload, p.values<float>()); break;
                case ElemType::U8: append_values(payload, p.values<std::uint8_t>()); break;
                case ElemType::I32: append_values(payload, p.values<std::int32_t>()); break;
                }
                e.nbytes = u32(payload.size() - e.offset, "tensor size");
            }
            s.entries.push_back(std::move(e));
        }
    }
    pad_to(payload, kStreamAlign);

    Bytes& out = s.bytes;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_le<std::uint16_t>(out, kStreamVersion);
    put_le<std::uint16_t>(out, 0);
    put_le<std::uint32_t>(out, u32(s.entries.size(), "tensor count"));
    put_le<std::uint32_t>(out, u32(s.payload_offset(), "payload offset"));
    put_le<std::uint32_t>(out, u32(payload.size(), "payload size"));
    for (const auto& e : s.entries) {
        const auto start = out.size();
        put_le<std::uint32_t>(out, e.offset);
        put_le<std::uint32_t>(out, e.nbytes);
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.type));
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.layout));
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
        put_le<std::uint8_t>(out, e.index_bytes);
        for (std::size_t d = 0; d < 4; ++d) {
            put_le<std::uint32_t>(out, d < e.shape.size() ? u32(static_cast<std::size_t>(e.shape[d]), "dimension") : 0);
        }
        put_le<std::uint32_t>(out, e.nnz);
        put_le<std::uint32_t>(out, e.rows);
        put_le<std::uint32_t>(out, e.cols);
        put_le<std::uint32_t>(out, e.col_ind_offset);
        put_le<std::uint32_t>(out, e.row_ptr_offset);
        put_le<double>(out, e.quant ? e.quant->scale : 0.0);
        put_le<std::int32_t>(out, e.quant ? e.quant->zero_point : 0);
        put_le<std::uint32_t>(out, e.quant ? kFlagQuant : 0);
        if (out.size() - start != kDescriptorBytes) throw ModelError("internal: descriptor size mismatch");
    }
    out.insert(out.end(), payload.begin(), payload.end());
    return s;
}

PackedStream parse_stream(const Bytes& bytes) {
    if (bytes.size() < kStreamHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw ModelError("not a weight stream (bad magic)");
    }
    const auto* b = bytes.data();
    if (get_le<std::uint16_t>(b + 4) != kStreamVersion) {
        throw ModelError("unsupported weight stream version " + std::to_string(get_le<std::uint16_t>(b + 4)));
    }
    const auto count = get_le<std::uint32_t>(b + 8);
    const auto payload_offset = get_le<std::uint32_t>(b + 12);
    const auto payload_size = get_le<std::uint32_t>(b + 16);
    if (payload_offset != kStreamHeaderBytes + std::size_t(count) * kDescriptorBytes ||
        std::size_t(payload_offset) + payload_size != bytes.size()) {
        throw ModelError("weight stream length does not match its header");
    }
    PackedStream s;
    s.bytes = bytes;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto* d = b + kStreamHeaderBytes + i * kDescriptorBytes;
        StreamEntry e;
        e.offset = get_le<std::uint32_t>(d);
        e.nbytes = get_le<std::uint32_t>(d + 4);
        const auto type = d[8], layout = d[9], rank = d[10];
        if (type > 2 || layout > 1 || rank > 4) throw ModelError("malformed descriptor " + std::to_string(i));
        e.type = static_cast<ElemType>(type);
        e.layout = static_cast<Layout>(layout);
        e.index_bytes = d[11];
        for (std::size_t k = 0; k < rank; ++k) e.shape.push_back(get_le<std::uint32_t>(d + 12 + 4 * k));
        e.nnz = get_le<std::uint32_t>(d + 28);
        e.rows = get_le<std::uint32_t>(d + 32);
        e.cols = get_le<std::uint32_t>(d + 36);
        e.col_ind_offset = get_le<std::uint32_t>(d + 40);
        e.row_ptr_offset = get_le<std::uint32_t>(d + 44);
        if (get_le<std::uint32_t>(d + 60) & kFlagQuant) {
            e.quant = QuantParams{};
            e.quant->scale = get_le<double>(d + 48);
            e.quant->zero_point = get_le<std::int32_t>(d + 56);
        }
        if (std::size_t(e.offset) + e.nbytes > payload_size || e.offset % kStreamAlign) {
            throw ModelError("descriptor " + std::to_string(i) + " points outside the payload");
        }
        if (e.layout == Layout::Crs) {
            if (e.index_bytes != 2 && e.index_bytes != 4) throw ModelError("bad CRS index width in descriptor " + std::to_string(i));
            const auto end = std::size_t(e.offset) + e.nbytes;
            if (e.col_ind_offset + std::size_t(e.nnz) * e.index_bytes > end ||
                e.row_ptr_offset + (std::size_t(e.rows) + 1) * 4 > end ||
                std::size_t(e.offset) + std::size_t(e.nnz) * elem_size(e.type) > e.col_ind_offset) {
                throw ModelError("CRS arrays of descriptor " + std::to_string(i) + " exceed the tensor");
            }
        } else if (std::size_t(numel(e.shape)) * elem_size(e.type) != e.nbytes) {
            throw ModelError("dense descriptor " + std::to_string(i) + " size does not match its shape");
        }
        s.entries.push_back(std::move(e));
    }
    return s;
}

ParamTensor unpack_tensor(const PackedStream& s, std::size_t i) {
    const auto& e = s.entries.at(i);
    TensorDesc desc;
    desc.shape = e.shape;
    desc.type = e.type;
    desc.layout = e.layout;
    desc.quant = e.quant;
    const auto n = static_cast<std::size_t>(numel(e.shape));
    const auto* base = s.bytes.data() + s.payload_offset() + e.offset;
    if (e.layout == Layout::Crs) {
        if (std::size_t(e.rows) * e.cols != n) throw ModelError("CRS matrix view does not match shape");
        if (e.type == ElemType::F32) return {desc, decode_crs<float>(s, e, 0.0f)};
        if (e.type == ElemType::U8) {
            return {desc, decode_crs<std::uint8_t>(s, e, static_cast<std::uint8_t>(e.quant ? e.quant->zero_point : 0))};
        }
        throw ModelError("CRS is not defined for i32 tensors");
    }
    switch (e.type) {
    case ElemType::F32: return {desc, read_values<float>(base, n)};
    case ElemType::U8: return {desc, read_values<std::uint8_t>(base, n)};
    case ElemType::I32: return {desc, read_values<std::int32_t>(base, n)};
    }
    throw ModelError("unknown element type");
}

Graph load_weights(const Graph& g, const Bytes& bytes) {
    auto s = parse_stream(bytes);
    auto names = pack_order(g);
    if (names.size() != s.entries.size()) {
        throw ModelError("weight stream has " + std::to_string(s.entries.size()) + " tensors, model expects " +
                         std::to_string(names.size()));
    }
    Graph out = g;
    for (std::size_t i = 0; i < names.size(); ++i) {
        auto t = unpack_tensor(s, i);
        auto& dst = out.param(names[i]);
        if (t.desc.shape != dst.desc.shape || t.desc.type != dst.desc.type) {
            throw ModelError("weight stream tensor " + std::to_string(i) + " does not match parameter '" + names[i] + "'");
        }
        if (dst.desc.quant) {
            auto q = *dst.desc.quant;
            q.scale = t.desc.quant ? t.desc.quant->scale : q.scale;
            q.zero_point = t.desc.quant ? t.desc.quant->zero_point : q.zero_point;
            t.desc.quant = q;
        }
        t.desc.layout = dst.desc.layout;
        dst = std::move(t);
    }
    validate(out);
    return out;
}

void write_stream(const std::filesystem::path& p, const PackedStream& s) { write_file(p, s.bytes); }

} // namespace tinyforge
