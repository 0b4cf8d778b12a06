// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tinyforge/error.hpp"

namespace tinyforge {

using Shape = std::vector<std::int64_t>;

enum class ElemType : std::uint8_t { F32 = 0, U8 = 1, I32 = 2 };
enum class Layout : std::uint8_t { Dense = 0, Crs = 1 };

std::size_t elem_size(ElemType t);
std::string_view to_string(ElemType t);
std::string_view to_string(Layout l);
ElemType elem_type_from_string(std::string_view s);
Layout layout_from_string(std::string_view s);

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T> struct elem_type_of;
template <> struct elem_type_of<float> { static constexpr ElemType value = ElemType::F32; };
template <> struct elem_type_of<std::uint8_t> { static constexpr ElemType value = ElemType::U8; };
template <> struct elem_type_of<std::int32_t> { static constexpr ElemType value = ElemType::I32; };

/// Affine u8 quantization of one tensor: real = scale * (q - zero_point).
struct QuantParams {
    double scale = 1.0;
    std::int32_t zero_point = 0;
    double min = 0.0; ///< observed range, widened to include 0
    double max = 0.0;

    friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

struct TensorDesc {
    Shape shape;
    ElemType type = ElemType::F32;
    Layout layout = Layout::Dense;
    std::optional<QuantParams> quant;

    friend bool operator==(const TensorDesc&, const TensorDesc&) = default;
};

using TensorData = std::variant<std::vector<float>, std::vector<std::uint8_t>, std::vector<std::int32_t>>;

ElemType data_type(const TensorData& d);
std::size_t data_size(const TensorData& d);
TensorData make_data(ElemType t, std::size_t n);

template <typename T> std::vector<T>& data_as(TensorData& d) {
    auto* v = std::get_if<std::vector<T>>(&d);
    if (!v) {
        throw ModelError("tensor element type is " + std::string(to_string(data_type(d))) + ", expected " +
                         std::string(to_string(elem_type_of<T>::value)));
    }
    return *v;
}

template <typename T> const std::vector<T>& data_as(const TensorData& d) {
    return data_as<T>(const_cast<TensorData&>(d));
}

/// A runtime value: activations, inputs and outputs of the interpreter.
struct Tensor {
    Shape shape;
    TensorData data;

    Tensor() : data(std::vector<float>{}) {}
    Tensor(Shape s, TensorData d);

    static Tensor zeros(Shape s, ElemType t);

    ElemType type() const { return data_type(data); }
    std::size_t size() const { return data_size(data); }

    template <typename T> std::vector<T>& values() { return data_as<T>(data); }
    template <typename T> const std::vector<T>& values() const { return data_as<T>(data); }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// A static parameter tensor. Values are always held dense in memory;
/// `desc.layout` records how the tensor is stored on disk or in a stream.
struct ParamTensor {
    TensorDesc desc;
    TensorData data;

    ParamTensor() : data(std::vector<float>{}) {}
    ParamTensor(TensorDesc d, TensorData v) : desc(std::move(d)), data(std::move(v)) {}

    static ParamTensor f32(Shape s, std::vector<float> v);

    template <typename T> std::vector<T>& values() { return data_as<T>(data); }
    template <typename T> const std::vector<T>& values() const { return data_as<T>(data); }

    friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

} // namespace tinyforge
