#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ftk/error.hpp"

namespace ftk {

enum class DType : std::uint8_t { f32, f64 };

const char* dtype_name(DType dtype);

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Calls f(std::type_identity<T>{}) with T = float or double.
template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
    if (dtype == DType::f32) {
        return f(std::type_identity<float>{});
    }
    return f(std::type_identity<double>{});
}

/// Dense row-major array of f32 or f64 values.
///
/// Tensors have value semantics: copying duplicates the buffer. Every extent
/// is at least 1; a scalar is represented with shape {1}.
class Tensor {
  public:
    Tensor();
    explicit Tensor(Shape shape, DType dtype = DType::f32);
    Tensor(Shape shape, std::vector<float> data);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape, DType dtype = DType::f32) { return Tensor(std::move(shape), dtype); }
    static Tensor full(Shape shape, double value, DType dtype = DType::f32);
    static Tensor ones(Shape shape, DType dtype = DType::f32) { return full(std::move(shape), 1.0, dtype); }
    static Tensor scalar(double value, DType dtype = DType::f32) { return full({1}, value, dtype); }
    static Tensor zeros_like(const Tensor& t) { return zeros(t.shape(), t.dtype()); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return shape_numel(shape_); }
    DType dtype() const { return data_.index() == 0 ? DType::f32 : DType::f64; }

    template <class T>
    std::span<T> span() {
        check_dtype<T>();
        return std::get<std::vector<T>>(data_);
    }
    template <class T>
    std::span<const T> span() const {
        check_dtype<T>();
        return std::get<std::vector<T>>(data_);
    }

    template <class T>
    std::span<const T> cspan() const {
        return span<T>();
    }

    // Raw byte view of the buffer.
    std::span<const std::byte> bytes() const;

    double item(std::size_t flat) const;
    void set(std::size_t flat, double value);
    double item() const;
    std::vector<double> to_vector() const;

    Tensor to(DType dtype) const;
    // Same buffer under a new shape with equal element count.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    void fill(double value);
    // this += other, elementwise, same shape and dtype.
    void add_(const Tensor& other);
    void scale_(double factor);

    bool all_finite() const;
    bool bitwise_equal(const Tensor& other) const;
    // FNV-1a over shape, dtype, and raw bytes.
    std::uint64_t checksum() const;

  private:
    template <class T>
    void check_dtype() const {
        if (dtype() != dtype_of<T>()) {
            throw DTypeError(std::string("tensor dtype is ") + dtype_name(dtype()) + ", requested " +
                             dtype_name(dtype_of<T>()));
        }
    }

    Shape shape_;
    std::variant<std::vector<float>, std::vector<double>> data_;
};

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op);
void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

} // namespace ftk
