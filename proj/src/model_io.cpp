// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/model_io.hpp"

#include "tinyforge/crs.hpp"

namespace tinyforge {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "tinyforge-model";
constexpr int kVersion = 1;

template <typename T> void append_values(Bytes& out, const std::vector<T>& v) {
    for (const auto& x : v) put_le<T>(out, x);
}

template <typename T> std::vector<T> read_values(const Bytes& blob, std::size_t off, std::size_t count, const std::string& what) {
    if (off + count * sizeof(T) > blob.size()) throw ModelError("blob truncated while reading " + what);
    std::vector<T> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = get_le<T>(blob.data() + off + i * sizeof(T));
    return v;
}

json desc_fields(const TensorDesc& d) {
    json j;
    j["shape"] = d.shape;
    j["type"] = std::string(to_string(d.type));
    if (d.quant) j["quant"] = quant_to_json(*d.quant);
    return j;
}

Shape shape_from_json(const json& j, const std::string& what) {
    Shape s = j.get<Shape>();
    if (s.empty()) throw ModelError(what + ": empty shape");
    for (auto d : s) {
        if (d <= 0) throw ModelError(what + ": non-positive dimension in " + shape_str(s));
    }
    return s;
}

template <typename T> void write_crs(Bytes& out, const ParamTensor& p, json& jp) {
    auto [rows, cols] = matrix_view(p.desc.shape);
    T zero = p.desc.quant ? static_cast<T>(p.desc.quant->zero_point) : T{};
    auto m = crs_encode<T>(p.values<T>(), rows, cols, zero);
    jp["nnz"] = m.nnz();
    append_values(out, m.values);
    pad_to(out, 4);
    append_values(out, m.col_ind);
    append_values(out, m.row_ptr);
}

template <typename T>
TensorData read_crs(const Bytes& blob, std::size_t off, const TensorDesc& d, std::size_t nnz, const std::string& name) {
    auto [rows, cols] = matrix_view(d.shape);
    CrsMatrix<T> m;
    m.rows = rows;
    m.cols = cols;
    m.values = read_values<T>(blob, off, nnz, name);
    off = align_up(off + nnz * sizeof(T), 4);
    m.col_ind = read_values<std::uint32_t>(blob, off, nnz, name);
    off += nnz * 4;
    m.row_ptr = read_values<std::uint32_t>(blob, off, static_cast<std::size_t>(rows) + 1, name);
    T zero = d.quant ? static_cast<T>(d.quant->zero_point) : T{};
    return crs_decode(m, zero);
}

} // namespace

json quant_to_json(const QuantParams& q) {
    return json{{"scale", q.scale}, {"zero_point", q.zero_point}, {"min", q.min}, {"max", q.max}};
}

QuantParams quant_from_json(const json& j) {
    QuantParams q;
    q.scale = j.at("scale").get<double>();
    q.zero_point = j.at("zero_point").get<std::int32_t>();
    q.min = j.value("min", 0.0);
    q.max = j.value("max", 0.0);
    if (!(q.scale > 0.0) || q.zero_point < 0 || q.zero_point > 255) {
        throw ModelError("quantization parameters out of range (scale must be > 0, zero point in [0,255])");
    }
    return q;
}

BundlePaths bundle_paths(const std::filesystem::path& p) {
    auto stem = p;
    if (p.extension() == ".json" || p.extension() == ".bin") stem.replace_extension();
    BundlePaths b;
    b.manifest = stem;
    b.manifest += ".json";
    b.blob = stem;
    b.blob += ".bin";
    return b;
}

std::pair<json, Bytes> serialize_model(const Graph& g) {
    json m;
    m["format"] = kFormat;
    m["version"] = kVersion;
    m["name"] = g.name;
    m["inputs"] = g.inputs;
    m["outputs"] = g.outputs;
    if (!g.meta.empty()) m["meta"] = g.meta;

    m["edges"] = json::array();
    for (const auto& [name, d] : g.edges) {
        auto je = desc_fields(d);
        je["name"] = name;
        m["edges"].push_back(std::move(je));
    }

    m["nodes"] = json::array();
    for (const auto& n : g.nodes) {
        json jn;
        jn["name"] = n.name;
        jn["op"] = std::string(to_string(n.kind));
        jn["inputs"] = n.inputs;
        jn["outputs"] = n.outputs;
        jn["params"] = n.params;
        json a = json::object();
        const auto& sig = signature(n.kind);
        if (sig.conv_attrs) {
            a["kernel"] = n.attrs.kernel;
            a["stride"] = n.attrs.stride;
            a["pad"] = n.attrs.pad;
        }
        if (sig.pool_attr) a["pool"] = n.attrs.pool;
        if (sig.epsilon_attr) a["epsilon"] = n.attrs.epsilon;
        if (sig.clamp_attr) a["clamp_min"] = n.attrs.clamp_min;
        jn["attrs"] = std::move(a);
        m["nodes"].push_back(std::move(jn));
    }

    Bytes blob;
    m["params"] = json::array();
    for (const auto& [name, p] : g.params) {
        auto jp = desc_fields(p.desc);
        jp["name"] = name;
        jp["layout"] = std::string(to_string(p.desc.layout));
        pad_to(blob, 4);
        auto start = blob.size();
        jp["offset"] = start;
        if (p.desc.layout == Layout::Crs) {
            switch (p.desc.type) {
            case ElemType::F32: write_crs<float>(blob, p, jp); break;
            case ElemType::U8: write_crs<std::uint8_t>(blob, p, jp); break;
            case ElemType::I32: write_crs<std::int32_t>(blob, p, jp); break;
            }
        } else {
            std::visit([&](const auto& v) { append_values(blob, v); }, p.data);
        }
        jp["nbytes"] = blob.size() - start;
        m["params"].push_back(std::move(jp));
    }
    pad_to(blob, 4);
    return {std::move(m), std::move(blob)};
}

Graph parse_model(const json& m, const Bytes& blob) {
    try {
        if (m.value("format", std::string()) != kFormat) throw ModelError("not a tinyforge model manifest");
        if (m.value("version", 0) != kVersion) throw ModelError("unsupported manifest version");
        Graph g;
        g.name = m.value("name", std::string("model"));
        g.inputs = m.at("inputs").get<std::vector<std::string>>();
        g.outputs = m.at("outputs").get<std::vector<std::string>>();
        if (m.contains("meta")) g.meta = m["meta"].get<std::map<std::string, double>>();

        std::map<std::string, TensorDesc> declared;
        for (const auto& je : m.value("edges", json::array())) {
            auto name = je.at("name").get<std::string>();
            TensorDesc d;
            d.shape = shape_from_json(je.at("shape"), "edge '" + name + "'");
            d.type = elem_type_from_string(je.at("type").get<std::string>());
            if (je.contains("quant")) d.quant = quant_from_json(je["quant"]);
            if (!declared.emplace(name, d).second) throw ModelError("edge '" + name + "' declared twice");
        }

        for (const auto& jn : m.at("nodes")) {
            Node n;
            n.name = jn.at("name").get<std::string>();
            auto op = jn.at("op").get<std::string>();
            auto kind = op_kind_from_string(op);
            if (!kind) throw ModelError("node '" + n.name + "': unknown op kind '" + op + "'");
            n.kind = *kind;
            n.inputs = jn.at("inputs").get<std::vector<std::string>>();
            n.outputs = jn.at("outputs").get<std::vector<std::string>>();
            n.params = jn.value("params", std::vector<std::string>{});
            const auto attrs = jn.value("attrs", json::object());
            for (const auto& [key, val] : attrs.items()) {
                if (key == "kernel") n.attrs.kernel = val.get<int>();
                else if (key == "stride") n.attrs.stride = val.get<int>();
                else if (key == "pad") n.attrs.pad = val.get<int>();
                else if (key == "pool") n.attrs.pool = val.get<int>();
                else if (key == "epsilon") n.attrs.epsilon = val.get<double>();
                else if (key == "clamp_min") n.attrs.clamp_min = val.get<int>();
                else throw ModelError("node '" + n.name + "': unknown attribute '" + key + "'");
            }
            g.nodes.push_back(std::move(n));
        }

        for (const auto& jp : m.at("params")) {
            auto name = jp.at("name").get<std::string>();
            TensorDesc d;
            d.shape = shape_from_json(jp.at("shape"), "parameter '" + name + "'");
            d.type = elem_type_from_string(jp.at("type").get<std::string>());
            d.layout = layout_from_string(jp.value("layout", std::string("dense")));
            if (jp.contains("quant")) d.quant = quant_from_json(jp["quant"]);
            auto off = jp.at("offset").get<std::size_t>();
            auto count = static_cast<std::size_t>(numel(d.shape));
            TensorData data;
            if (d.layout == Layout::Crs) {
                auto nnz = jp.at("nnz").get<std::size_t>();
                switch (d.type) {
                case ElemType::F32: data = read_crs<float>(blob, off, d, nnz, name); break;
                case ElemType::U8: data = read_crs<std::uint8_t>(blob, off, d, nnz, name); break;
                case ElemType::I32: data = read_crs<std::int32_t>(blob, off, d, nnz, name); break;
                }
            } else {
                switch (d.type) {
                case ElemType::F32: data = read_values<float>(blob, off, count, name); break;
                case ElemType::U8: data = read_values<std::uint8_t>(blob, off, count, name); break;
                case ElemType::I32: data = read_values<std::int32_t>(blob, off, count, name); break;
                }
            }
            if (!g.params.emplace(name, ParamTensor(std::move(d), std::move(data))).second) {
                throw ModelError("parameter '" + name + "' declared twice");
            }
        }

        for (const auto& in : g.inputs) {
            auto it = declared.find(in);
            if (it == declared.end()) throw ModelError("graph input '" + in + "' has no edge declaration");
            g.edges[in] = it->second;
        }
        for (const auto& [name, d] : declared) {
            if (!g.is_input(name) && d.quant) g.edges[name].quant = d.quant;
        }
        infer_shapes_inplace(g);
        for (const auto& [name, d] : declared) {
            auto it = g.edges.find(name);
            if (it == g.edges.end()) continue;
            if (it->second.shape != d.shape || it->second.type != d.type) {
                throw ModelError("edge '" + name + "' declared as " + shape_str(d.shape) + " " +
                                 std::string(to_string(d.type)) + " but inferred " + shape_str(it->second.shape) + " " +
                                 std::string(to_string(it->second.type)));
            }
        }
        return g;
    } catch (const json::exception& e) {
        throw ModelError(std::string("manifest parse error: ") + e.what());
    }
}

Graph load_model(const std::filesystem::path& p) {
    auto paths = bundle_paths(p);
    json m;
    try {
        m = json::parse(read_text(paths.manifest));
    } catch (const json::exception& e) {
        throw ModelError("parse error in '" + paths.manifest.string() + "': " + e.what());
    }
    Bytes blob;
    if (std::filesystem::exists(paths.blob)) blob = read_file(paths.blob);
    return parse_model(m, blob);
}

void save_model(const Graph& g, const std::filesystem::path& p) {
    auto paths = bundle_paths(p);
    auto [m, blob] = serialize_model(g);
    write_text(paths.manifest, m.dump(1) + "\n");
    write_file(paths.blob, blob);
}

} // namespace tinyforge
