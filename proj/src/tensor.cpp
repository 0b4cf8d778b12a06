// SPDX-License-Identifier: Apache-2.0
#include "tinyforge/tensor.hpp"

#include <sstream>

namespace tinyforge {

std::size_t elem_size(ElemType t) {
    switch (t) {
    case ElemType::F32: return 4;
    case ElemType::U8: return 1;
    case ElemType::I32: return 4;
    }
    return 0;
}

std::string_view to_string(ElemType t) {
    switch (t) {
    case ElemType::F32: return "f32";
    case ElemType::U8: return "u8";
    case ElemType::I32: return "i32";
    }
    return "?";
}

std::string_view to_string(Layout l) { return l == Layout::Crs ? "crs" : "dense"; }

ElemType elem_type_from_string(std::string_view s) {
    if (s == "f32") return ElemType::F32;
    if (s == "u8") return ElemType::U8;
    if (s == "i32") return ElemType::I32;
    throw ModelError("unknown element type '" + std::string(s) + "'");
}

Layout layout_from_string(std::string_view s) {
    if (s == "dense") return Layout::Dense;
    if (s == "crs") return Layout::Crs;
    throw ModelError("unknown layout '" + std::string(s) + "'");
}

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

ElemType data_type(const TensorData& d) {
    switch (d.index()) {
    case 0: return ElemType::F32;
    case 1: return ElemType::U8;
    default: return ElemType::I32;
    }
}

std::size_t data_size(const TensorData& d) {
    return std::visit([](const auto& v) { return v.size(); }, d);
}

TensorData make_data(ElemType t, std::size_t n) {
    switch (t) {
    case ElemType::F32: return std::vector<float>(n, 0.0f);
    case ElemType::U8: return std::vector<std::uint8_t>(n, 0);
    case ElemType::I32: return std::vector<std::int32_t>(n, 0);
    }
    return std::vector<float>(n, 0.0f);
}

Tensor::Tensor(Shape s, TensorData d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data_size(data)) != numel(shape)) {
        throw ModelError("tensor value count " + std::to_string(data_size(data)) + " does not match shape " +
                         shape_str(shape));
    }
}

Tensor Tensor::zeros(Shape s, ElemType t) {
    auto n = static_cast<std::size_t>(numel(s));
    return Tensor(std::move(s), make_data(t, n));
}

ParamTensor ParamTensor::f32(Shape s, std::vector<float> v) {
    TensorDesc d;
    d.shape = std::move(s);
    d.type = ElemType::F32;
    return ParamTensor(std::move(d), std::move(v));
}

} // namespace tinyforge
